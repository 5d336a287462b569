"""Command-line front end.

Subcommands:
  shapes       token/width bookkeeping for a frame grid and decoder stack
  equiv        convolution-vs-recurrence equivalence sweep (exit 1 on fail)
  gradcheck    end-to-end analytic-vs-numeric gradient audit (exit 1 on fail)
  train        train a classifier on a synthetic task or feature manifest
  bench        wall/FLOP/byte scaling sweep over token counts, CSV out
  export-plot  log-log scaling plot from bench CSVs

A config file (--config, ``key = value`` lines, '#' comments) supplies
defaults for any long flag of the invoked subcommand; explicit flags win.

BLAS/OpenMP thread counts are pinned to 1 at entry (before numpy loads)
unless the caller already set them, keeping benchmark numbers and training
curves reproducible on one core.
"""

from __future__ import annotations

import argparse
import ast
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _pin_threads() -> None:
    for var in _THREAD_VARS:
        os.environ.setdefault(var, "1")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _triple(text: str) -> tuple[int, int, int]:
    vals = _ints(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ints, got {text!r}")
    return tuple(vals)


def _load_config(path) -> dict:
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"config {path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            entries[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            entries[key] = value
    return entries


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        cfg = _load_config(config_path)
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise SystemExit(f"config {config_path}: unknown keys {sorted(unknown)}")
        merged.update(cfg)
    for key, value in vars(args).items():
        if key != "config":
            merged[key] = value
    return argparse.Namespace(**merged)


# ---------------------------------------------------------------------------
# subcommands

def cmd_shapes(args) -> int:
    from .model import token_schedule
    rows = token_schedule(args.frames, args.hw, args.patch, args.d_model,
                          args.blocks, args.pool_kernel, args.pool_stride,
                          pooling=not args.no_pooling,
                          halve_channels=not args.no_halve)
    print(f"{'stage':<10} {'t':>5} {'h':>4} {'w':>4} {'width':>6} {'tokens':>8}")
    for r in rows:
        print(f"{r['stage']:<10} {r['t']:>5} {r['h']:>4} {r['w']:>4} {r['d']:>6} {r['tokens']:>8}")
    print(f"tokens entering decoder: {rows[0]['tokens']}")
    return 0


def cmd_equiv(args) -> int:
    import numpy as np
    from .ssm import discretize, random_ssm, ssm_conv, ssm_recurrent
    from .tensor import Tensor, set_precision
    set_precision(args.precision)
    worst = 0.0
    worst_case = None
    for i in range(args.systems):
        rng = np.random.default_rng([args.seed, i])
        n = int(rng.integers(1, args.max_state + 1))
        length = int(rng.integers(16, args.max_len + 1))
        params = random_ssm(rng, n)
        dssm = discretize(params)
        u = Tensor(rng.standard_normal(length).astype(params.a.dtype))
        y_rec = ssm_recurrent(dssm, u).numpy()
        y_conv = ssm_conv(dssm, u).numpy()
        scale = max(float(np.abs(y_rec).max()), 1e-30)
        rel = float(np.abs(y_rec - y_conv).max()) / scale
        if rel > worst:
            worst, worst_case = rel, (i, n, length)
    status = "PASS" if worst < args.tol else "FAIL"
    print(f"{status}: {args.systems} systems, worst rel err {worst:.3e} "
          f"(tol {args.tol:g}, case {worst_case})")
    return 0 if worst < args.tol else 1


def cmd_gradcheck(args) -> int:
    import numpy as np
    from .gradcheck import grad_check
    from .model import EncoderConfig, ModelConfig, build_model
    from .tensor import Tensor, set_precision
    from .training import cross_entropy
    set_precision(64)
    enc = EncoderConfig(hw=args.hw, patch=args.patch, depth=args.enc_depth,
                        heads=4, in_channels=args.channels)
    cfg = ModelConfig(d_model=args.width, n_state=args.state,
                      n_blocks=args.blocks, n_classes=2, encoder=enc)
    model = build_model(cfg, seed=args.seed)
    rng = np.random.default_rng([args.seed, 1])
    video = Tensor(rng.standard_normal((1, args.frames, args.hw, args.hw, args.channels)))
    target = np.array([1])
    params = model.params()
    print(f"auditing {model.n_params()} parameters across {len(params)} tensors")

    def loss():
        return cross_entropy(model(video), target)

    worst = grad_check(loss, list(params.values()))
    status = "PASS" if worst < args.tol else "FAIL"
    print(f"{status}: max relative gradient error {worst:.3e} (tol {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_train(args) -> int:
    import numpy as np
    from .data import FeatureDataset, SyntheticDataset, SyntheticTask
    from .model import ModelConfig, build_model
    from .tensor import set_precision
    from .training import TrainConfig, evaluate, train
    set_precision(args.precision)

    if args.task == "features":
        if not args.manifest:
            raise SystemExit("--manifest is required for --task features")
        train_ds = FeatureDataset(args.manifest)
        if len(train_ds) == 0:
            print("manifest is empty; nothing to train on")
            return 0
        val_ds = None
        width = train_ds.shape[-1]
        classes = max(label for _, label in train_ds.entries) + 1
    else:
        task = SyntheticTask(kind=args.task, length=args.length,
                             d_in=args.width, n_classes=args.classes,
                             window=args.window, seed=args.seed)
        train_ds = SyntheticDataset(task, "train", args.train_samples)
        val_ds = SyntheticDataset(task, "val", args.val_samples)
        width = args.width
        classes = task.classes

    cfg = ModelConfig(d_model=width, n_state=args.state, n_blocks=args.blocks,
                      n_classes=classes, core=args.core, heads=args.heads,
                      pool_kernel=tuple(args.pool_kernel),
                      pool_stride=tuple(args.pool_stride),
                      halve_channels=not args.no_halve,
                      ssm_mode=args.ssm_mode, dropout=args.dropout)
    model = build_model(cfg, seed=args.seed)
    freeze = tuple(s for s in str(args.freeze).split(",") if s)
    tc = TrainConfig(lr=args.lr, weight_decay=args.wd, batch_size=args.batch,
                     max_steps=args.steps, seed=args.seed,
                     precision=args.precision,
                     clip_norm=None if args.no_clip else args.clip_norm,
                     eval_every=args.eval_every, freeze=freeze,
                     stop_at_acc=args.stop_at_acc)
    history = train(model, train_ds, tc, val_ds=val_ds, out_dir=args.out)
    print(f"final loss {history['loss'][-1]:.6f} over {len(history['loss'])} steps")
    if val_ds is not None:
        print(f"best val accuracy {history['best_val_acc']:.4f}")
    if args.out:
        print(f"metrics and checkpoints under {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchConfig, fit_slope, run_scaling, write_results
    from .tensor import set_precision
    set_precision(args.precision)
    cfg = BenchConfig(d_model=args.width, n_state=args.state, heads=args.heads,
                      n_blocks=args.blocks, frames=args.frames,
                      pooling=not args.no_pooling,
                      halve_channels=not args.no_halve,
                      trials=args.trials, seed=args.seed)
    variants = ["s4", "attention"] if args.variant == "both" else [args.variant]
    results = []
    print(",".join(["variant", "L", "wall_ms", "peak_bytes", "flops"]))
    for variant in variants:
        rows = run_scaling(variant, args.tokens, cfg)
        results.extend(rows)
        for r in rows:
            wall = "nan" if not r.ok else f"{r.wall_ms:.3f}"
            print(f"{r.variant},{r.tokens},{wall},{r.peak_bytes},{r.flops}")
        finite = [r for r in rows if r.ok]
        if len(finite) >= 4:
            fit = fit_slope([r.tokens for r in finite], [r.wall_ms for r in finite])
            print(f"# {variant}: wall-time slope {fit.slope:.3f} (r2 {fit.r2:.4f})")
    if args.out:
        write_results(results, args.out)
        print(f"# wrote {args.out}")
    return 0


def cmd_export_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .bench import fit_slope, read_results
    rows = []
    for path in args.results:
        rows.extend(read_results(path))
    if not rows:
        raise SystemExit("no result rows to plot")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for variant in sorted({r.variant for r in rows}):
        pts = sorted((r.tokens, r.wall_ms) for r in rows
                     if r.variant == variant and r.ok)
        if not pts:
            continue
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        label = variant
        if len(pts) >= 4:
            fit = fit_slope(xs, ys)
            label = f"{variant} (slope {fit.slope:.2f})"
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("tokens")
    ax.set_ylabel("wall ms per step")
    ax.set_title(args.title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser

_DEFAULTS = {
    "shapes": dict(frames=60, hw=224, patch=16, d_model=1024, blocks=3,
                   pool_kernel=(1, 2, 2), pool_stride=(1, 2, 2),
                   no_pooling=False, no_halve=False),
    "equiv": dict(systems=1000, max_state=32, max_len=2048, tol=1e-8,
                  seed=0, precision=64),
    "gradcheck": dict(seed=0, tol=1e-5, width=16, state=4, frames=8, hw=32,
                      patch=8, channels=1, enc_depth=2, blocks=2),
    # the synthetic-task defaults are the calibrated long-range recipe:
    # temporal stride-4 max-pools (1024 -> 256 -> 64 -> 16 positions before
    # GAP), constant width, frozen state dynamics. See README for why.
    "train": dict(task="delayed-class", manifest=None, length=1024, classes=4,
                  width=32, state=16, blocks=3, core="s4", heads=4,
                  ssm_mode="conv", dropout=0.0, steps=2000, batch=16, lr=3e-3,
                  wd=0.01, seed=0, precision=32, clip_norm=1.0, no_clip=False,
                  out=None, eval_every=250, train_samples=8192,
                  val_samples=256, window=None,
                  pool_kernel=(4, 1, 1), pool_stride=(4, 1, 1), no_halve=True,
                  freeze="a,log_dt", stop_at_acc=None),
    "bench": dict(variant="both", tokens=[512, 1024, 2048, 4096],
                  trials=5, width=64, state=16, heads=1, blocks=1, frames=60,
                  seed=0, precision=32, out=None, no_pooling=False,
                  no_halve=False),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s4video",
        description="State-space sequence models for long token streams.")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("shapes", help="token/width schedule arithmetic")
    p.add_argument("--frames", type=int, default=S)
    p.add_argument("--hw", type=int, default=S)
    p.add_argument("--patch", type=int, default=S)
    p.add_argument("--d-model", dest="d_model", type=int, default=S)
    p.add_argument("--blocks", type=int, default=S)
    p.add_argument("--pool-kernel", dest="pool_kernel", type=_triple, default=S)
    p.add_argument("--pool-stride", dest="pool_stride", type=_triple, default=S)
    p.add_argument("--no-pooling", dest="no_pooling", action="store_true", default=S)
    p.add_argument("--no-halve", dest="no_halve", action="store_true", default=S)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_shapes, defaults="shapes")

    p = sub.add_parser("equiv", help="conv-vs-recurrent equivalence sweep")
    p.add_argument("--systems", type=int, default=S)
    p.add_argument("--max-state", dest="max_state", type=int, default=S)
    p.add_argument("--max-len", dest="max_len", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--precision", type=int, choices=(32, 64), default=S)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_equiv, defaults="equiv")

    p = sub.add_parser("gradcheck", help="end-to-end gradient audit")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--state", type=int, default=S)
    p.add_argument("--frames", type=int, default=S)
    p.add_argument("--hw", type=int, default=S)
    p.add_argument("--patch", type=int, default=S)
    p.add_argument("--channels", type=int, default=S)
    p.add_argument("--enc-depth", dest="enc_depth", type=int, default=S)
    p.add_argument("--blocks", type=int, default=S)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gradcheck, defaults="gradcheck")

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--task", choices=("delayed-class", "long-majority", "features"), default=S)
    p.add_argument("--manifest", default=S)
    p.add_argument("--length", type=int, default=S)
    p.add_argument("--classes", type=int, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--state", type=int, default=S)
    p.add_argument("--blocks", type=int, default=S)
    p.add_argument("--core", choices=("s4", "attention"), default=S)
    p.add_argument("--heads", type=int, default=S)
    p.add_argument("--ssm-mode", dest="ssm_mode", choices=("conv", "recurrent"), default=S)
    p.add_argument("--dropout", type=float, default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--batch", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--wd", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--precision", type=int, choices=(32, 64), default=S)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=S)
    p.add_argument("--no-clip", dest="no_clip", action="store_true", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=S)
    p.add_argument("--train-samples", dest="train_samples", type=int, default=S)
    p.add_argument("--val-samples", dest="val_samples", type=int, default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--pool-kernel", dest="pool_kernel", type=_triple, default=S)
    p.add_argument("--pool-stride", dest="pool_stride", type=_triple, default=S)
    p.add_argument("--no-halve", dest="no_halve", action="store_true", default=S)
    p.add_argument("--halve", dest="no_halve", action="store_false", default=S)
    p.add_argument("--freeze", default=S,
                   help="comma list of parameter-name suffixes to exclude "
                        "from the optimizer; pass '' to train everything")
    p.add_argument("--stop-at-acc", dest="stop_at_acc", type=float, default=S)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train, defaults="train")

    p = sub.add_parser("bench", help="scaling sweep")
    p.add_argument("--variant", choices=("s4", "attention", "both"), default=S)
    p.add_argument("--tokens", type=_ints, default=S)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--state", type=int, default=S)
    p.add_argument("--heads", type=int, default=S)
    p.add_argument("--blocks", type=int, default=S)
    p.add_argument("--frames", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--precision", type=int, choices=(32, 64), default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--no-pooling", dest="no_pooling", action="store_true", default=S)
    p.add_argument("--no-halve", dest="no_halve", action="store_true", default=S)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_bench, defaults="bench")

    p = sub.add_parser("export-plot", help="plot bench CSVs")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="scaling")
    p.set_defaults(func=cmd_export_plot, defaults=None)

    return parser


def main(argv=None) -> int:
    _pin_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)
    func = args.func
    key = args.defaults
    ns = vars(args).copy()
    ns.pop("func")
    ns.pop("defaults")
    ns.pop("command")
    args = argparse.Namespace(**ns)
    if key is not None:
        args = _resolve(args, _DEFAULTS[key])
    return func(args)


if __name__ == "__main__":
    sys.exit(main())
