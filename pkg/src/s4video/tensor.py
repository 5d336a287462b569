"""Reverse-mode autodiff on numpy arrays with an explicit gradient tape.

Design:
  * A ``Tensor`` is a thin wrapper over a float32/float64 numpy array plus a
    ``requires_grad`` flag and (after a backward pass) a ``.grad`` array.
  * A ``Tape`` is a Wengert list: ops append one ``Node`` per call while the
    tape is active (``with Tape() as t:``). ``Tape.backward(loss)`` walks the
    list exactly once in reverse, accumulating gradients per tensor id and
    finally writing ``.grad`` on every watched leaf that requires grad.
  * With no active tape (or when no input requires grad) ops run as plain
    numpy with no recording, so inference sweeps pay no tracing cost.
  * Every op checks its output for NaN/Inf and raises immediately; non-finite
    values are treated as bugs, never data.
  * An optional ``Meter`` attached to the tape counts analytic FLOPs and a
    live-bytes high-water mark for activations and gradient buffers. Both are
    functions of the recorded graph only, so they are bitwise reproducible.

Single-threaded by design. No GPU, no mixed precision inside one graph: all
tensors in a graph must share the global default dtype (32 or 64 bit), set via
``set_precision`` or the ``precision`` context manager.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor", "Tape", "Meter", "set_precision", "get_precision", "precision",
    "default_dtype", "as_tensor", "add", "sub", "mul", "neg", "exp", "gelu",
    "matmul", "linear", "reshape", "permute", "concat", "stack", "truncate",
    "reduce_sum", "reduce_mean", "layer_norm", "softmax", "log_softmax",
    "max_pool3d", "fft_causal_conv", "mat_inv", "dropout",
]

# ---------------------------------------------------------------------------
# precision policy

_PRECISION_BITS = 32
_DTYPES = {32: np.float32, 64: np.float64}


def set_precision(bits: int) -> None:
    """Set the global default dtype for newly created tensors (32 or 64)."""
    global _PRECISION_BITS
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits!r}")
    _PRECISION_BITS = bits


def get_precision() -> int:
    return _PRECISION_BITS


def default_dtype():
    return _DTYPES[_PRECISION_BITS]


@contextmanager
def precision(bits: int):
    """Temporarily switch the global precision (restores on exit)."""
    prev = _PRECISION_BITS
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(prev)


# ---------------------------------------------------------------------------
# metering

class Meter:
    """Analytic cost counters for one tape: FLOPs and live activation bytes.

    ``peak_bytes`` is the high-water mark of (forward outputs held by the tape
    plus gradient buffers held during backward). It is computed from recorded
    shapes, not sampled from the OS, so identical graphs give identical
    numbers. ``tensor_log`` keeps one (op, shape, nbytes) entry per forward
    output for structural checks (e.g. which variant materializes an LxL
    matrix).
    """

    def __init__(self, log_shapes: bool = True):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.flops = 0
        self.tensor_log: list[tuple[str, tuple, int]] | None = [] if log_shapes else None

    def alloc(self, nbytes: int) -> None:
        self.live_bytes += nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def free(self, nbytes: int) -> None:
        self.live_bytes -= nbytes

    def add_flops(self, n: int) -> None:
        self.flops += n

    def log_tensor(self, op: str, shape: tuple, nbytes: int) -> None:
        if self.tensor_log is not None:
            self.tensor_log.append((op, shape, nbytes))


# ---------------------------------------------------------------------------
# tensor

class Tensor:
    """A numpy array with a gradient slot. Data is never copied defensively."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(default_dtype())
        else:
            arr = np.asarray(data, dtype=dtype)
            if arr.dtype not in (np.float32, np.float64):
                raise TypeError(f"tensors are float32/float64 only, got {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operators (wired to the op functions below) -------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap scalars/arrays as a constant Tensor, matching ``like``'s dtype."""
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# tape

class Node:
    __slots__ = ("op", "out_id", "input_ids", "backward", "out_nbytes",
                 "extra_nbytes", "bwd_flops")

    def __init__(self, op, out_id, input_ids, backward, out_nbytes, extra_nbytes, bwd_flops):
        self.op = op
        self.out_id = out_id
        self.input_ids = input_ids
        self.backward = backward
        self.out_nbytes = out_nbytes
        self.extra_nbytes = extra_nbytes
        self.bwd_flops = bwd_flops


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of ops; single-use (one backward pass per tape)."""

    def __init__(self, meter: Meter | None = None):
        self.meter = meter
        self.nodes: list[Node] = []
        self._ids: dict[int, int] = {}     # id(tensor) -> tape id
        self._keep: list[Tensor] = []      # strong refs so python ids stay unique
        self._leaves: dict[int, Tensor] = {}
        self._next_id = 0
        self._used = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def _assign(self, t: Tensor) -> int:
        tid = self._ids.get(id(t))
        if tid is None:
            tid = self._next_id
            self._next_id += 1
            self._ids[id(t)] = tid
            self._keep.append(t)
        return tid

    def _input_id(self, t: Tensor) -> int:
        known = id(t) in self._ids
        tid = self._assign(t)
        if not known:
            self._leaves[tid] = t
        return tid

    def record(self, op: str, out: Tensor, inputs, backward, fwd_flops: int,
               bwd_flops: int, extra_nbytes: int = 0) -> None:
        input_ids = tuple(self._input_id(t) for t in inputs)
        out_id = self._assign(out)
        self.nodes.append(Node(op, out_id, input_ids, backward, out.nbytes,
                               extra_nbytes, bwd_flops))
        if self.meter is not None:
            self.meter.alloc(out.nbytes + extra_nbytes)
            self.meter.add_flops(fwd_flops)
            self.meter.log_tensor(op, out.shape, out.nbytes)

    def backward(self, loss: Tensor) -> None:
        """Reverse pass from ``loss`` (a scalar). Visits each node once.

        Writes ``.grad`` (overwriting, not accumulating) on every leaf tensor
        with ``requires_grad``; leaves not reached by the sweep get zeros.
        """
        if self._used:
            raise RuntimeError("tape already consumed by a backward pass")
        self._used = True
        if loss.data.ndim != 0:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        loss_id = self._ids.get(id(loss))
        if loss_id is None:
            raise ValueError("loss tensor was not produced on this tape")
        meter = self.meter
        grads: dict[int, np.ndarray] = {loss_id: np.ones((), dtype=loss.dtype)}
        if meter is not None:
            meter.alloc(grads[loss_id].nbytes)
        for node in reversed(self.nodes):
            g = grads.pop(node.out_id, None)
            if meter is not None:
                meter.free(node.out_nbytes + node.extra_nbytes)
            if g is None:
                node.backward = None
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient flowing into op '{node.op}'")
            gins = node.backward(g)
            if meter is not None:
                meter.add_flops(node.bwd_flops)
            for tid, gin in zip(node.input_ids, gins):
                if gin is None:
                    continue
                acc = grads.get(tid)
                if acc is None:
                    grads[tid] = gin
                    if meter is not None:
                        meter.alloc(gin.nbytes)
                else:
                    # out-of-place: backward fns may return the same array
                    # object for several inputs (e.g. add), so stored
                    # gradients must never be mutated
                    grads[tid] = acc + gin
            if meter is not None:
                meter.free(g.nbytes)
            node.backward = None  # free saved intermediates eagerly
        for tid, leaf in self._leaves.items():
            if leaf.requires_grad:
                g = grads.get(tid)
                leaf.grad = g if g is not None else np.zeros_like(leaf.data)


# ---------------------------------------------------------------------------
# op plumbing

def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"op '{op}' produced non-finite values")


def _same_dtype(op: str, *tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"op '{op}': mixed dtypes {dt} vs {t.dtype}")
    return dt


def _emit(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward,
          fwd_flops: int = 0, bwd_flops: int = 0, extra_nbytes: int = 0) -> Tensor:
    """Finalize an op: finiteness check, wrap, and record if a tape is live."""
    _check_finite(out_data, op)
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and req:
        tape.record(op, out, inputs, backward, fwd_flops, bwd_flops, extra_nbytes)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``g`` back to ``shape`` by summing the axes broadcasting added."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else as_tensor(a, b)
    b = b if isinstance(b, Tensor) else as_tensor(b, a)
    _same_dtype("add", a, b)
    out = a.data + b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _emit("add", out, (a, b), backward, fwd_flops=out.size, bwd_flops=out.size)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else as_tensor(a, b)
    b = b if isinstance(b, Tensor) else as_tensor(b, a)
    _same_dtype("sub", a, b)
    out = a.data - b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _emit("sub", out, (a, b), backward, fwd_flops=out.size, bwd_flops=out.size)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else as_tensor(a, b)
    b = b if isinstance(b, Tensor) else as_tensor(b, a)
    _same_dtype("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _emit("mul", out, (a, b), backward, fwd_flops=out.size, bwd_flops=2 * out.size)


def neg(a: Tensor) -> Tensor:
    out = -a.data

    def backward(g):
        return (-g,)

    return _emit("neg", out, (a,), backward, fwd_flops=a.size, bwd_flops=a.size)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _emit("exp", out, (a,), backward, fwd_flops=a.size, bwd_flops=a.size)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + _erf(x / _SQRT2))
    out = x * phi_cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x, dtype=x.dtype) * x.dtype.type(_INV_SQRT_2PI)
        return (g * (phi_cdf + x * pdf),)

    return _emit("gelu", out, (a,), backward, fwd_flops=8 * a.size, bwd_flops=8 * a.size)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product. Both operands must have ndim >= 2; leading
    batch dims broadcast under numpy rules."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    _same_dtype("matmul", a, b)
    ad, bd = a.data, b.data
    out = ad @ bd
    ash, bsh = a.shape, b.shape
    m, k = ash[-2], ash[-1]
    n = bsh[-1]
    batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
    fl = 2 * batch * m * k * n

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ash)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bsh)
        return ga, gb

    return _emit("matmul", out, (a, b), backward, fwd_flops=fl, bwd_flops=2 * fl)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: x @ w (+ b)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def mat_inv(a: Tensor) -> Tensor:
    """Batched matrix inverse on the trailing two axes."""
    out = np.linalg.inv(a.data)
    nmat = a.shape[-1]
    batch = int(np.prod(a.shape[:-2], dtype=np.int64)) if a.ndim > 2 else 1
    fl = 2 * batch * nmat ** 3

    def backward(g):
        yt = np.swapaxes(out, -1, -2)
        return (-(yt @ g @ yt),)

    return _emit("mat_inv", out, (a,), backward, fwd_flops=fl, bwd_flops=2 * fl)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    ash = a.shape

    def backward(g):
        return (g.reshape(ash),)

    return _emit("reshape", out, (a,), backward)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _emit("permute", out, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    _same_dtype("concat", *tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", out, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    _same_dtype("stack", *tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in pieces)

    return _emit("stack", out, tensors, backward)


def truncate(a: Tensor, n: int) -> Tensor:
    """Keep the first ``n`` entries along the last axis."""
    full = a.shape[-1]
    if not 0 < n <= full:
        raise ValueError(f"truncate to {n} outside 1..{full}")
    out = np.ascontiguousarray(a.data[..., :n])
    pad = full - n

    def backward(g):
        if pad == 0:
            return (g,)
        width = [(0, 0)] * (g.ndim - 1) + [(0, pad)]
        return (np.pad(g, width),)

    return _emit("truncate", out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes)
    ash = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(ash))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), ash).copy(),)

    return _emit("reduce_sum", out, (a,), backward, fwd_flops=a.size, bwd_flops=a.size)


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    out = a.data.mean(axis=axes)
    ash = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(ash))
    count = int(np.prod([ash[i] for i in axes], dtype=np.int64)) if axes else 1

    def backward(g):
        return (np.broadcast_to((g / count).reshape(kept), ash).copy(),)

    return _emit("reduce_mean", out, (a,), backward, fwd_flops=a.size, bwd_flops=a.size)


# ---------------------------------------------------------------------------
# normalization and attention nonlinearities

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _same_dtype("layer_norm", x, gamma, beta)
    xd = x.data
    mu = xd.mean(-1, keepdims=True)
    var = xd.var(-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out = gamma.data * xhat + beta.data
    gsh, bsh = gamma.shape, beta.shape
    m = xd.shape[-1]
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std * (dxhat
                        - dxhat.mean(-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(-1, keepdims=True))
        dgamma = _unbroadcast((g * xhat).sum(axis=lead), gsh) if lead else _unbroadcast(g * xhat, gsh)
        dbeta = _unbroadcast(g.sum(axis=lead), bsh) if lead else _unbroadcast(g, bsh)
        return dx, dgamma, dbeta

    return _emit("layer_norm", out, (x, gamma, beta), backward,
                 fwd_flops=8 * xd.size, bwd_flops=12 * xd.size,
                 extra_nbytes=xhat.nbytes + inv_std.nbytes)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    xd = x.data
    shifted = xd - xd.max(-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(-1, keepdims=True)
        return (out * (g - dot),)

    return _emit("softmax", out, (x,), backward, fwd_flops=6 * xd.size,
                 bwd_flops=4 * xd.size)


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        soft = np.exp(out)
        return (g - soft * g.sum(-1, keepdims=True),)

    return _emit("log_softmax", out, (x,), backward, fwd_flops=6 * xd.size,
                 bwd_flops=4 * xd.size)


# ---------------------------------------------------------------------------
# pooling

def max_pool3d(x: Tensor, kernel, stride) -> Tensor:
    """Max pool over the (T, H, W) axes of a (..., T, H, W, D) tensor.

    No padding: output extent along each pooled axis is (n - k) // s + 1, and
    k must not exceed n. Ties take the first window element (C-order).
    """
    kt, kh, kw = (int(v) for v in kernel)
    st, sh, sw = (int(v) for v in stride)
    if x.ndim < 4:
        raise ValueError(f"max_pool3d needs (..., T, H, W, D), got {x.shape}")
    *lead, t, h, w, d = x.shape
    for name, n, k, s in (("T", t, kt, st), ("H", h, kh, sh), ("W", w, kw, sw)):
        if k < 1 or s < 1:
            raise ValueError(f"kernel/stride along {name} must be >= 1")
        if k > n:
            raise ValueError(f"pool kernel {k} exceeds input extent {n} along {name}")
    xd = x.data
    # sliding_window_view puts window counts in place and window extents last:
    # (..., T-kt+1, H-kh+1, W-kw+1, D, kt, kh, kw); stride by subsampling.
    view = np.lib.stride_tricks.sliding_window_view(xd, (kt, kh, kw), axis=(-4, -3, -2))
    view = view[tuple([Ellipsis, slice(None, None, st), slice(None, None, sh),
                       slice(None, None, sw)] + [slice(None)] * 4)]
    tp, hp, wp = view.shape[-7], view.shape[-6], view.shape[-5]
    flat = np.ascontiguousarray(view).reshape(*lead, tp, hp, wp, d, kt * kh * kw)
    idx = flat.argmax(-1)
    out = np.take_along_axis(flat, idx[..., None], -1)[..., 0]

    # precompute flat scatter indices into the (T, H, W, D) block
    jt = idx // (kh * kw)
    jh = (idx // kw) % kh
    jw = idx % kw
    tt = jt + (np.arange(tp) * st).reshape(tp, 1, 1, 1)
    hh = jh + (np.arange(hp) * sh).reshape(hp, 1, 1)
    ww = jw + (np.arange(wp) * sw).reshape(wp, 1)
    dd = np.arange(d)
    fidx = ((tt * h + hh) * w + ww) * d + dd
    xsh = x.shape
    lead_sz = int(np.prod(lead, dtype=np.int64)) if lead else 1

    def backward(g):
        dx = np.zeros((lead_sz, t * h * w * d), dtype=g.dtype)
        rows = np.repeat(np.arange(lead_sz), fidx.size // lead_sz)
        np.add.at(dx, (rows, fidx.reshape(-1)), g.reshape(-1))
        return (dx.reshape(xsh),)

    return _emit("max_pool3d", out, (x,), backward,
                 fwd_flops=out.size * kt * kh * kw, bwd_flops=2 * out.size,
                 extra_nbytes=fidx.nbytes)


# ---------------------------------------------------------------------------
# FFT causal convolution

def fft_causal_conv(u: Tensor, k: Tensor) -> Tensor:
    """Causal 1-D convolution along the last axis: y_t = sum_{i<=t} u_i k_{t-i}.

    ``u`` and ``k`` share the last-axis length L; leading axes broadcast.
    Implemented with length-2L real FFTs, which is exact for causal output
    (the linear convolution has length 2L-1, so nothing wraps into [0, L)).
    """
    _same_dtype("fft_causal_conv", u, k)
    ud, kd = u.data, k.data
    L = ud.shape[-1]
    if kd.shape[-1] != L:
        raise ValueError(f"length mismatch: u has L={L}, k has L={kd.shape[-1]}")
    n = 2 * L
    uf = np.fft.rfft(ud, n)
    kf = np.fft.rfft(kd, n)
    out = np.fft.irfft(uf * kf, n)[..., :L]
    out = np.ascontiguousarray(out, dtype=ud.dtype)
    ush, ksh = u.shape, k.shape
    rows = int(np.prod(out.shape[:-1], dtype=np.int64)) if out.ndim > 1 else 1
    fft_cost = int(2.5 * n * max(1, math.log2(n)))
    fl = rows * (3 * fft_cost + n)

    def backward(g):
        gf = np.fft.rfft(g, n)
        du = np.fft.irfft(gf * np.conj(np.fft.rfft(kd, n)), n)[..., :L]
        dk = np.fft.irfft(gf * np.conj(np.fft.rfft(ud, n)), n)[..., :L]
        du = _unbroadcast(du.astype(g.dtype, copy=False), ush)
        dk = _unbroadcast(dk.astype(g.dtype, copy=False), ksh)
        return du, dk

    return _emit("fft_causal_conv", out, (u, k), backward, fwd_flops=fl,
                 bwd_flops=2 * fl)


# ---------------------------------------------------------------------------
# dropout (composite; default off everywhere)

def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. ``rate = 0`` returns ``x`` unchanged."""
    if rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))
