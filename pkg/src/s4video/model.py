"""Long-video classifier: per-frame transformer encoder feeding a multi-scale
state-space decoder.

The encoder runs a small vision transformer independently over each frame and
emits a token grid of shape (T, H, W, D): T frames, an H x W spatial grid per
frame, D channels. The decoder is a stack of blocks, each

    core_out = CORE(LayerNorm(x))             CORE = state-space layer or MHA
    out      = GELU(Linear(Pool(core_out))) + Linear(Pool(x))

where Pool is spatial max pooling (kernel/stride 1x2x2 by default) and both
Linear maps halve the channel count, so token count and width shrink
geometrically with depth. A head global-average-pools whatever grid remains
and applies one affine map.

The state-space core flattens the grid to a length T*H*W sequence in
(t, h, w) lexicographic order (t slowest) and runs one independent SSM per
channel, then an optional pointwise GELU and an optional D -> D channel mixing
map. Swapping the core for full self-attention over the same flattened
sequence gives the quadratic baseline with identical shapes everywhere.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import stf
from .ssm import SsmParams, discretize, init_ssm, ssm_conv, ssm_recurrent
from .tensor import (Tensor, add, default_dtype, dropout, gelu, layer_norm,
                     linear, matmul, max_pool3d, mul, permute, reduce_mean,
                     reshape, softmax)

__all__ = ["EncoderConfig", "ModelConfig", "TokenTensor", "Linear",
           "LayerNorm", "MultiHeadAttention", "EncoderBlock", "Encoder",
           "S4Layer", "DecoderBlock", "Head", "VideoModel", "build_model",
           "token_schedule", "save_checkpoint", "load_checkpoint"]


# ---------------------------------------------------------------------------
# configuration

@dataclass
class EncoderConfig:
    hw: int = 224              # square frame side
    patch: int = 16
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    in_channels: int = 3

    @property
    def grid(self) -> int:
        if self.hw % self.patch:
            raise ValueError(f"frame side {self.hw} not divisible by patch {self.patch}")
        return self.hw // self.patch

    @property
    def tokens_per_frame(self) -> int:
        return self.grid * self.grid


@dataclass
class ModelConfig:
    d_model: int = 64          # decoder input width (also encoder width if present)
    n_state: int = 16
    n_blocks: int = 2
    n_classes: int = 4
    core: str = "s4"           # "s4" | "attention"
    heads: int = 4             # attention-core heads
    pool_kernel: tuple = (1, 2, 2)
    pool_stride: tuple = (1, 2, 2)
    pooling: bool = True
    halve_channels: bool = True
    s4_activation: bool = True
    s4_mixing: bool = True
    ssm_mode: str = "conv"     # "conv" | "recurrent"
    dropout: float = 0.0
    encoder: EncoderConfig | None = None

    def block_widths(self) -> list[tuple[int, int]]:
        """(d_in, d_out) per decoder block."""
        widths = []
        d = self.d_model
        for _ in range(self.n_blocks):
            if self.halve_channels:
                if d % 2:
                    raise ValueError(f"width {d} not divisible by 2; lower n_blocks or widen d_model")
                widths.append((d, d // 2))
                d //= 2
            else:
                widths.append((d, d))
        return widths


@dataclass
class TokenTensor:
    """A (T, H, W, D) feature grid, the decoder's native input."""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"token tensor must be rank 4 (T, H, W, D), got {self.data.shape}")

    @classmethod
    def from_stf(cls, path) -> "TokenTensor":
        return cls(stf.load_stf(path))

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------------------
# layers

class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 bias: bool = True, dtype=None):
        dtype = dtype or default_dtype()
        w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        self.w = Tensor(w.astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def params(self, prefix: str) -> dict:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class LayerNorm:
    def __init__(self, width: int, dtype=None):
        dtype = dtype or default_dtype()
        self.gamma = Tensor(np.ones(width, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(width, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class MultiHeadAttention:
    """Standard softmax attention over the second-to-last axis of (..., L, D)."""

    def __init__(self, rng, width: int, heads: int, dtype=None):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.wq = Linear(rng, width, width, dtype=dtype)
        self.wk = Linear(rng, width, width, dtype=dtype)
        self.wv = Linear(rng, width, width, dtype=dtype)
        self.wo = Linear(rng, width, width, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        nd = x.ndim
        lead = x.shape[:-2]
        seq, width = x.shape[-2], x.shape[-1]
        h = self.heads
        dh = width // h

        def split(t):
            t = reshape(t, lead + (seq, h, dh))
            return permute(t, tuple(range(nd - 2)) + (nd - 1, nd - 2, nd))

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        m = q.ndim
        kt = permute(k, tuple(range(m - 2)) + (m - 1, m - 2))
        scores = mul(matmul(q, kt), 1.0 / np.sqrt(dh))
        att = softmax(scores)
        ctx = matmul(att, v)                            # (..., h, L, dh)
        ctx = permute(ctx, tuple(range(nd - 2)) + (nd - 1, nd - 2, nd))
        ctx = reshape(ctx, lead + (seq, width))
        return self.wo(ctx)

    def params(self, prefix: str) -> dict:
        out = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class EncoderBlock:
    """Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng, width: int, heads: int, mlp_ratio: int, dtype=None):
        self.ln1 = LayerNorm(width, dtype)
        self.attn = MultiHeadAttention(rng, width, heads, dtype)
        self.ln2 = LayerNorm(width, dtype)
        self.fc1 = Linear(rng, width, mlp_ratio * width, dtype=dtype)
        self.fc2 = Linear(rng, mlp_ratio * width, width, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = add(x, self.attn(self.ln1(x)))
        return add(x, self.fc2(gelu(self.fc1(self.ln2(x)))))

    def params(self, prefix: str) -> dict:
        out = {}
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out


class Encoder:
    """Frame-wise patch embedding plus transformer blocks.

    Frames never mix: attention runs within one frame's token set, so the
    output for frame t depends on frame t's pixels only.
    """

    def __init__(self, rng, cfg: EncoderConfig, width: int, dtype=None):
        dtype = dtype or default_dtype()
        self.cfg = cfg
        self.width = width
        patch_dim = cfg.patch * cfg.patch * cfg.in_channels
        self.proj = Linear(rng, patch_dim, width, dtype=dtype)
        self.pos = Tensor((0.02 * rng.standard_normal((cfg.tokens_per_frame, width))).astype(dtype),
                          requires_grad=True)
        self.blocks = [EncoderBlock(rng, width, cfg.heads, cfg.mlp_ratio, dtype)
                       for _ in range(cfg.depth)]

    def __call__(self, video: Tensor) -> Tensor:
        """(..., T, hw, hw, C) frames -> (..., T, grid, grid, width) tokens."""
        cfg = self.cfg
        squeeze = video.ndim == 4
        if squeeze:
            video = reshape(video, (1,) + video.shape)
        lead = video.shape[:-4]
        t, hf, wf, ch = video.shape[-4:]
        if hf != cfg.hw or wf != cfg.hw or ch != cfg.in_channels:
            raise ValueError(f"expected frames (*, {cfg.hw}, {cfg.hw}, {cfg.in_channels}), got {video.shape}")
        g, p = cfg.grid, cfg.patch
        bt = int(np.prod(lead, dtype=np.int64)) * t
        x = reshape(video, (bt, g, p, wf, ch))
        x = reshape(x, (bt, g, p, g, p, ch))
        x = permute(x, (0, 1, 3, 2, 4, 5))
        x = reshape(x, (bt, g * g, p * p * ch))
        x = add(self.proj(x), self.pos)
        for block in self.blocks:
            x = block(x)
        out_shape = lead + (t, g, g, self.width)
        x = reshape(x, out_shape)
        if squeeze:
            x = reshape(x, out_shape[1:])
        return x

    def params(self, prefix: str = "encoder") -> dict:
        out = self.proj.params(f"{prefix}.proj")
        out[f"{prefix}.pos"] = self.pos
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.blocks.{i}"))
        return out


class S4Layer:
    """Per-channel SSM bank over the flattened token sequence, then an
    optional pointwise GELU and an optional channel-mixing affine map."""

    def __init__(self, rng, width: int, n_state: int, mode: str = "conv",
                 activation: bool = True, mixing: bool = True, dtype=None):
        if mode not in ("conv", "recurrent"):
            raise ValueError(f"unknown ssm mode {mode!r}")
        self.mode = mode
        self.activation = activation
        self.bank = init_ssm(rng, n_state, channels=width, dtype=dtype)
        self.mix = Linear(rng, width, width, dtype=dtype) if mixing else None

    def __call__(self, x: Tensor) -> Tensor:
        """x: (..., L, D) -> same shape."""
        nd = x.ndim
        to_channels = tuple(range(nd - 2)) + (nd - 1, nd - 2)
        u = permute(x, to_channels)                     # (..., D, L)
        dssm = discretize(self.bank)
        run = ssm_conv if self.mode == "conv" else ssm_recurrent
        y = run(dssm, u)
        if self.activation:
            y = gelu(y)
        y = permute(y, to_channels)                     # back to (..., L, D)
        if self.mix is not None:
            y = self.mix(y)
        return y

    def params(self, prefix: str) -> dict:
        out = {f"{prefix}.bank.{k}": v for k, v in self.bank.tensors().items()}
        if self.mix is not None:
            out.update(self.mix.params(f"{prefix}.mix"))
        return out


class DecoderBlock:
    """One multi-scale stage; see the module docstring for the dataflow."""

    def __init__(self, rng, cfg: ModelConfig, d_in: int, d_out: int, dtype=None):
        self.cfg = cfg
        self.d_in, self.d_out = d_in, d_out
        self.norm = LayerNorm(d_in, dtype)
        if cfg.core == "s4":
            self.core = S4Layer(rng, d_in, cfg.n_state, cfg.ssm_mode,
                                cfg.s4_activation, cfg.s4_mixing, dtype)
        elif cfg.core == "attention":
            self.core = MultiHeadAttention(rng, d_in, cfg.heads, dtype)
        else:
            raise ValueError(f"unknown core {cfg.core!r}")
        self.mlp_fc = Linear(rng, d_in, d_out, dtype=dtype)
        self.skip_fc = Linear(rng, d_in, d_out, dtype=dtype)

    def _pool(self, x: Tensor) -> Tensor:
        if not self.cfg.pooling:
            return x
        t, h, w = x.shape[-4], x.shape[-3], x.shape[-2]
        kt, kh, kw = self.cfg.pool_kernel
        # clip the kernel to the grid so degenerate extents (e.g. W = 1 on a
        # purely temporal stream) pass through instead of erroring
        k = (min(kt, t), min(kh, h), min(kw, w))
        # a max over singleton windows that also keeps every position is the
        # identity; skip the op so temporal streams don't pay for no-op pools
        if k == (1, 1, 1) and all(e == 1 or s == 1 for e, s
                                  in zip((t, h, w), self.cfg.pool_stride)):
            return x
        return max_pool3d(x, k, self.cfg.pool_stride)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        lead = x.shape[:-4]
        t, h, w, d = x.shape[-4:]
        if d != self.d_in:
            raise ValueError(f"block expects width {self.d_in}, got {d}")
        seq = reshape(self.norm(x), lead + (t * h * w, d))
        core_out = self.core(seq)
        core_grid = reshape(core_out, lead + (t, h, w, d))
        mlp = gelu(self.mlp_fc(self._pool(core_grid)))
        # dropout only bites when the caller supplies an rng (training steps);
        # eval calls pass rng=None and get the deterministic path
        if self.cfg.dropout > 0.0 and rng is not None:
            mlp = dropout(mlp, self.cfg.dropout, rng)
        skip = self.skip_fc(self._pool(x))
        return add(mlp, skip)

    def params(self, prefix: str) -> dict:
        out = self.norm.params(f"{prefix}.norm")
        out.update(self.core.params(f"{prefix}.core"))
        out.update(self.mlp_fc.params(f"{prefix}.mlp_fc"))
        out.update(self.skip_fc.params(f"{prefix}.skip_fc"))
        return out


class Head:
    """Global average pool over all remaining tokens, then one affine map."""

    def __init__(self, rng, d_in: int, n_out: int, dtype=None):
        self.fc = Linear(rng, d_in, n_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = reduce_mean(x, axes=(-4, -3, -2))
        # matmul wants rank >= 2; route (..., D) through (..., 1, D)
        wide = reshape(pooled, pooled.shape[:-1] + (1, pooled.shape[-1]))
        out = self.fc(wide)
        return reshape(out, pooled.shape[:-1] + (out.shape[-1],))

    def params(self, prefix: str = "head") -> dict:
        return self.fc.params(f"{prefix}.fc")


class VideoModel:
    def __init__(self, rng, cfg: ModelConfig, dtype=None):
        dtype = dtype or default_dtype()
        self.cfg = cfg
        self.encoder = (Encoder(rng, cfg.encoder, cfg.d_model, dtype)
                        if cfg.encoder is not None else None)
        widths = cfg.block_widths()
        self.blocks = [DecoderBlock(rng, cfg, din, dout, dtype) for din, dout in widths]
        d_last = widths[-1][1] if widths else cfg.d_model
        self.head = Head(rng, d_last, cfg.n_classes, dtype)

    def forward_tokens(self, tokens, rng=None) -> Tensor:
        """tokens: Tensor or array, (T, H, W, D) or (batch, T, H, W, D)."""
        if isinstance(tokens, TokenTensor):
            tokens = tokens.data
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        for block in self.blocks:
            x = block(x, rng)
        return self.head(x)

    def forward_video(self, video, rng=None) -> Tensor:
        if self.encoder is None:
            raise ValueError("model was built without an encoder")
        x = video if isinstance(video, Tensor) else Tensor(video)
        return self.forward_tokens(self.encoder(x), rng)

    def __call__(self, x, rng=None) -> Tensor:
        if self.encoder is not None:
            return self.forward_video(x, rng)
        return self.forward_tokens(x, rng)

    def params(self) -> dict:
        out = {}
        if self.encoder is not None:
            out.update(self.encoder.params("encoder"))
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"blocks.{i}"))
        out.update(self.head.params("head"))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())


def build_model(cfg: ModelConfig, seed: int = 0, dtype=None) -> VideoModel:
    return VideoModel(np.random.default_rng(seed), cfg, dtype)


# ---------------------------------------------------------------------------
# shape arithmetic (no tensors involved; used by the `shapes` CLI command)

def pooled_extent(n: int, k: int, s: int) -> int:
    """Output length of unpadded pooling: floor((n - k) / s) + 1, with the
    kernel clipped to the extent."""
    k = min(k, n)
    return (n - k) // s + 1


def token_schedule(frames: int, hw: int, patch: int, d_model: int,
                   n_blocks: int, pool_kernel=(1, 2, 2), pool_stride=(1, 2, 2),
                   pooling: bool = True, halve_channels: bool = True) -> list[dict]:
    """Grid/width bookkeeping from encoder output through every decoder block."""
    if hw % patch:
        raise ValueError(f"frame side {hw} not divisible by patch {patch}")
    g = hw // patch
    rows = [{"stage": "encoder", "t": frames, "h": g, "w": g, "d": d_model,
             "tokens": frames * g * g}]
    t, h, w, d = frames, g, g, d_model
    for i in range(n_blocks):
        if pooling:
            t = pooled_extent(t, pool_kernel[0], pool_stride[0])
            h = pooled_extent(h, pool_kernel[1], pool_stride[1])
            w = pooled_extent(w, pool_kernel[2], pool_stride[2])
        if halve_channels:
            d //= 2
        rows.append({"stage": f"block{i}", "t": t, "h": h, "w": w, "d": d,
                     "tokens": t * h * w})
    return rows


# ---------------------------------------------------------------------------
# checkpointing: a directory of one STF1 file per parameter plus a manifest

_MANIFEST = "manifest.txt"


def _config_items(cfg: ModelConfig) -> list[tuple[str, str]]:
    items = []
    for key, value in asdict(cfg).items():
        if key == "encoder":
            continue
        items.append((f"config.{key}", repr(value)))
    if cfg.encoder is not None:
        for key, value in asdict(cfg.encoder).items():
            items.append((f"config.encoder.{key}", repr(value)))
    return items


def save_checkpoint(model: VideoModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = model.params()
    lines = ["format = 'checkpoint-v1'"]
    lines += [f"{k} = {v}" for k, v in _config_items(model.cfg)]
    for name, p in params.items():
        stf.save_stf(out / f"{name}.stf", p.data)
        lines.append(f"param.{name} = {repr(name + '.stf')}")
    (out / _MANIFEST).write_text("\n".join(lines) + "\n")


def _parse_manifest(path: Path) -> dict:
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = ast.literal_eval(value.strip())
    return entries


def load_checkpoint(ckpt_dir) -> VideoModel:
    ckpt = Path(ckpt_dir)
    entries = _parse_manifest(ckpt / _MANIFEST)
    if entries.get("format") != "checkpoint-v1":
        raise ValueError(f"{ckpt}: unrecognized checkpoint format {entries.get('format')!r}")
    cfg_fields = {k[len("config."):]: v for k, v in entries.items()
                  if k.startswith("config.") and not k.startswith("config.encoder.")}
    enc_fields = {k[len("config.encoder."):]: v for k, v in entries.items()
                  if k.startswith("config.encoder.")}
    for key in ("pool_kernel", "pool_stride"):
        if key in cfg_fields:
            cfg_fields[key] = tuple(cfg_fields[key])
    cfg = ModelConfig(**cfg_fields, encoder=EncoderConfig(**enc_fields) if enc_fields else None)
    model = build_model(cfg, seed=0)
    params = model.params()
    for key, value in entries.items():
        if not key.startswith("param."):
            continue
        name = key[len("param."):]
        if name not in params:
            raise ValueError(f"{ckpt}: manifest names unknown parameter {name!r}")
        arr = stf.load_stf(ckpt / value)
        if arr.shape != params[name].shape:
            raise ValueError(f"{ckpt}/{value}: shape {arr.shape} does not match "
                             f"parameter {name!r} of shape {params[name].shape}")
        params[name].data = arr
        params[name].grad = None
    return model
