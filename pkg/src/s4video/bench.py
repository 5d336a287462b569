"""Scaling benchmarks: wall time, analytic FLOPs, and activation bytes vs
sequence length, for the state-space decoder and the self-attention baseline.

Protocol per (variant, L): build the decoder stack, synthesize one token grid,
then run warmup + ``trials`` forward/backward passes strictly sequentially.
``wall_ms`` is the median over trials; FLOPs and peak activation bytes come
from the tape meter and are functions of the recorded graph alone, so they
must be identical across trials (checked) and across runs with the same
config. A MemoryError at some L produces a failure row (wall_ms = nan) and
the sweep continues.

Token counts map to grids the way the model sees video: counts of the form
frames * g * g (g <= 14) become a (frames, g, g) grid, anything else runs as
a purely temporal (L, 1, 1) stream.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, VideoModel, build_model
from .tensor import Meter, Tape, mul, reduce_mean

__all__ = ["BenchResult", "ScalingFit", "BenchConfig", "grid_for_tokens",
           "run_point", "run_scaling", "fit_slope", "write_results",
           "read_results", "has_quadratic_bytes_term"]

CSV_HEADER = ["variant", "L", "wall_ms", "peak_bytes", "flops"]


@dataclass
class BenchResult:
    variant: str
    tokens: int
    wall_ms: float          # nan when the point failed
    peak_bytes: int
    flops: int
    ok: bool = True
    shape_log: list | None = field(default=None, repr=False)


@dataclass
class ScalingFit:
    slope: float
    r2: float
    n_points: int


@dataclass
class BenchConfig:
    d_model: int = 64
    n_state: int = 16
    heads: int = 1           # attention baseline; 1 keeps the largest L in RAM
    n_blocks: int = 1
    frames: int = 60         # for grid-shaped token counts
    pooling: bool = True
    halve_channels: bool = True
    trials: int = 5
    seed: int = 0


def grid_for_tokens(tokens: int, frames: int = 60, max_side: int = 14) -> tuple[int, int, int]:
    """(T, H, W) whose product is ``tokens``; square spatial grids when the
    count factors as frames * g * g, else a temporal stream."""
    if tokens < 1:
        raise ValueError(f"token count must be >= 1, got {tokens}")
    if tokens % frames == 0:
        per_frame = tokens // frames
        side = math.isqrt(per_frame)
        if side * side == per_frame and 1 <= side <= max_side:
            return (frames, side, side)
    return (tokens, 1, 1)


def _bench_model(variant: str, cfg: BenchConfig) -> VideoModel:
    mc = ModelConfig(d_model=cfg.d_model, n_state=cfg.n_state,
                     n_blocks=cfg.n_blocks, n_classes=4, core=variant,
                     heads=cfg.heads, pooling=cfg.pooling,
                     halve_channels=cfg.halve_channels)
    return build_model(mc, seed=cfg.seed)


def _one_pass(model: VideoModel, x: np.ndarray) -> tuple[float, Meter]:
    meter = Meter(log_shapes=True)
    t0 = time.perf_counter()
    with Tape(meter) as tape:
        logits = model(x)
        loss = reduce_mean(mul(logits, logits))
    tape.backward(loss)
    wall = time.perf_counter() - t0
    return wall, meter


def run_point(variant: str, tokens: int, cfg: BenchConfig) -> BenchResult:
    if variant not in ("s4", "attention"):
        raise ValueError(f"unknown variant {variant!r}")
    grid = grid_for_tokens(tokens, cfg.frames)
    try:
        model = _bench_model(variant, cfg)
        rng = np.random.default_rng([cfg.seed, tokens])
        from .tensor import default_dtype
        x = rng.standard_normal(grid + (cfg.d_model,)).astype(default_dtype())
        walls = []
        meters = []
        for trial in range(cfg.trials + 1):  # first pass is warmup
            wall, meter = _one_pass(model, x)
            if trial > 0:
                walls.append(wall)
                meters.append(meter)
    except MemoryError:
        return BenchResult(variant, tokens, float("nan"), 0, 0, ok=False)
    flops = {m.flops for m in meters}
    peaks = {m.peak_bytes for m in meters}
    if len(flops) != 1 or len(peaks) != 1:
        raise RuntimeError(f"meter counts varied across trials at L={tokens}: "
                           f"flops={flops}, peak={peaks}")
    return BenchResult(variant, tokens, float(np.median(walls) * 1e3),
                       peaks.pop(), flops.pop(), ok=True,
                       shape_log=meters[0].tensor_log)


def run_scaling(variant: str, token_counts, cfg: BenchConfig | None = None) -> list[BenchResult]:
    cfg = cfg or BenchConfig()
    return [run_point(variant, int(t), cfg) for t in token_counts]


def fit_slope(tokens, values) -> ScalingFit:
    """Least-squares slope of log(value) vs log(tokens); needs >= 4 points."""
    tokens = np.asarray(tokens, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = np.isfinite(values) & (values > 0)
    tokens, values = tokens[keep], values[keep]
    if tokens.size < 4:
        raise ValueError(f"need at least 4 finite points to fit, got {tokens.size}")
    lx, ly = np.log(tokens), np.log(values)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(slope), r2, int(tokens.size))


def has_quadratic_bytes_term(result: BenchResult, heads: int, itemsize: int) -> bool:
    """True when some recorded activation is the attention score matrix:
    trailing axes (L, L) and exactly heads * L^2 * itemsize bytes. The byte
    count alone is not conclusive; a linear-size tensor can collide with it
    at particular (width, state, L) coincidences."""
    if result.shape_log is None:
        raise ValueError("result carries no shape log")
    length = result.tokens
    target = heads * length * length * itemsize
    return any(nbytes == target and shape[-2:] == (length, length)
               for _, shape, nbytes in result.shape_log)


def write_results(results, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in results:
            wall = "nan" if not r.ok else f"{r.wall_ms:.3f}"
            writer.writerow([r.variant, r.tokens, wall, r.peak_bytes, r.flops])


def read_results(path) -> list[BenchResult]:
    out = []
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for row in reader:
            variant, tokens, wall, peak, flops = row
            wall_f = float(wall)
            out.append(BenchResult(variant, int(tokens), wall_f, int(peak),
                                   int(flops), ok=math.isfinite(wall_f)))
    return out
