"""Losses, the AdamW optimizer, and a deterministic training loop.

Everything here is driven by explicit seeds: parameter init, batch shuffling,
and dropout all come from generators owned by the loop, so two runs with the
same config produce bitwise-identical loss curves (wall-clock fields aside).

Loss conventions:
  * ``cross_entropy``: mean over the batch of -log softmax(logits)[target].
  * ``mse``: mean of squared differences over every element.

AdamW applies decoupled weight decay: the decay term is subtracted from the
parameter directly, never routed through the moment estimates, so setting
weight_decay=0 reduces the update to plain Adam exactly.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import VideoModel, save_checkpoint
from .tensor import (Tape, Tensor, default_dtype, log_softmax, mul,
                     reduce_mean, set_precision)

__all__ = ["TrainConfig", "cross_entropy", "mse", "AdamW",
           "clip_global_norm", "evaluate", "train"]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    precision: int = 32
    clip_norm: float | None = 1.0   # None disables clipping
    eval_every: int = 100
    # parameter-name suffixes excluded from optimization ("log_dt" matches
    # "blocks.0.core.bank.log_dt" but "a" will not match "...gamma" because
    # matching respects the dotted boundary). Freezing the state dynamics
    # ("a", "log_dt") keeps the discretized transition stable under training;
    # nothing constrains a freely-updated dense A to remain a contraction.
    freeze: tuple[str, ...] = ()
    # stop at the first evaluation whose accuracy reaches this value
    stop_at_acc: float | None = None


# ---------------------------------------------------------------------------
# losses

def one_hot(labels, k: int, dtype=None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be a 1-D int array, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label outside [0, {k})")
    out = np.zeros((labels.size, k), dtype=dtype or default_dtype())
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits``: (batch, K). Computed through log-softmax, so uniformly zero
    logits over K classes give exactly log(K) and shifting every logit by a
    constant changes nothing.
    """
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, K) logits, got {logits.shape}")
    n, k = logits.shape
    mask = Tensor(one_hot(targets, k, dtype=logits.dtype))
    logp = log_softmax(logits)
    picked = mul(logp, mask)
    return mul(reduce_mean(picked.sum(axes=1)), -1.0)


def mse(pred: Tensor, targets) -> Tensor:
    """Mean squared error over all elements; zero exactly at equality."""
    t = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=pred.dtype))
    if t.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs targets {t.shape}")
    diff = pred - t
    return reduce_mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# optimizer

class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 weight_decay: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ValueError(f"parameter {name!r} has no gradient; run backward first")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.lr != 0.0:  # keep lr=0 a bitwise no-op (signed zeros)
                mhat = m / bias1
                vhat = v / bias2
                p.data -= self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                     + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = 0.0
    for name, p in params.items():
        if p.grad is None:
            continue
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if norm > max_norm:
        scale = (max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


# ---------------------------------------------------------------------------
# loop

def _batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Seeded epoch shuffling; yields ``steps`` index arrays."""
    if n < 1:
        raise ValueError("empty dataset")
    order = rng.permutation(n)
    at = 0
    for _ in range(steps):
        if at + batch_size > n:
            order = rng.permutation(n)
            at = 0
        yield order[at:at + batch_size]
        at += batch_size


def _collate(dataset, idxs, dtype):
    xs, ys = [], []
    for i in idxs:
        x, y = dataset[int(i)]
        xs.append(np.asarray(x, dtype=dtype))
        ys.append(y)
    return np.stack(xs), np.asarray(ys)


def evaluate(model: VideoModel, dataset, batch_size: int = 32,
             limit: int | None = None) -> float:
    """Classification accuracy; runs with no tape (pure forward)."""
    n = len(dataset) if limit is None else min(limit, len(dataset))
    dtype = default_dtype()
    hits = 0
    for start in range(0, n, batch_size):
        idxs = range(start, min(start + batch_size, n))
        x, y = _collate(dataset, idxs, dtype)
        logits = model(x).numpy()
        hits += int((logits.argmax(-1) == y).sum())
    return hits / n


def train(model: VideoModel, train_ds, cfg: TrainConfig, val_ds=None,
          out_dir=None) -> dict:
    """Run ``cfg.max_steps`` optimizer steps; returns the metric history.

    If ``out_dir`` is given, writes metrics.jsonl (one line per step with
    step/loss/lr/wall_ms), summary.csv, and checkpoint-final/ plus
    checkpoint-best/ (best validation accuracy seen).
    """
    set_precision(cfg.precision)
    dtype = default_dtype()
    params = model.params()
    for name, p in params.items():
        if p.dtype != dtype:
            raise TypeError(f"parameter {name!r} is {p.dtype}, expected {np.dtype(dtype)} "
                            f"for precision={cfg.precision}; build the model under the same precision")

    def frozen(name: str) -> bool:
        return any(name == s or name.endswith("." + s) for s in cfg.freeze)

    trainable = {k: v for k, v in params.items() if not frozen(k)}
    if not trainable:
        raise ValueError("freeze patterns excluded every parameter")
    opt = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay,
                beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    shuffle_rng = np.random.default_rng([cfg.seed, 101])
    drop_rng = np.random.default_rng([cfg.seed, 202])

    out = Path(out_dir) if out_dir is not None else None
    jsonl = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        jsonl = (out / "metrics.jsonl").open("w")

    history = {"step": [], "loss": [], "wall_ms": [], "val_step": [], "val_acc": []}
    best_acc = -1.0
    try:
        for step, idxs in enumerate(_batches(len(train_ds), cfg.batch_size,
                                             cfg.max_steps, shuffle_rng), start=1):
            x, y = _collate(train_ds, idxs, dtype)
            t0 = time.perf_counter()
            with Tape() as tape:
                logits = model(x, rng=drop_rng)
                loss = cross_entropy(logits, y)
            tape.backward(loss)
            if cfg.clip_norm is not None:
                clip_global_norm(trainable, cfg.clip_norm)
            opt.step()
            wall_ms = (time.perf_counter() - t0) * 1e3
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise FloatingPointError(f"non-finite loss at step {step}")
            history["step"].append(step)
            history["loss"].append(loss_val)
            history["wall_ms"].append(wall_ms)
            if jsonl is not None:
                jsonl.write(json.dumps({"step": step, "loss": loss_val,
                                        "lr": cfg.lr, "wall_ms": wall_ms}) + "\n")
            if val_ds is not None and (step % cfg.eval_every == 0 or step == cfg.max_steps):
                acc = evaluate(model, val_ds)
                history["val_step"].append(step)
                history["val_acc"].append(acc)
                if acc > best_acc:
                    best_acc = acc
                    if out is not None:
                        save_checkpoint(model, out / "checkpoint-best")
                if cfg.stop_at_acc is not None and acc >= cfg.stop_at_acc:
                    break
    finally:
        if jsonl is not None:
            jsonl.close()

    if out is not None:
        save_checkpoint(model, out / "checkpoint-final")
        with (out / "summary.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr", "wall_ms"])
            for s, l, w in zip(history["step"], history["loss"], history["wall_ms"]):
                writer.writerow([s, repr(l), cfg.lr, f"{w:.3f}"])
    history["best_val_acc"] = best_acc
    return history
