"""State-space sequence core: x'(t) = A_eff x(t) + B u(t), y(t) = C x(t) + D u(t).

Parameters are stored in continuous time. The transition is kept in positive
form (the lower-triangular structured matrix below); the stable sign is
applied inside ``discretize`` as A_eff = -A, so a stored scalar A = 1 means
the decaying system x' = -x + Bu. Discretization is bilinear (Tustin):

    Abar = (I - dt/2 A_eff)^-1 (I + dt/2 A_eff)
    Bbar = (I - dt/2 A_eff)^-1 dt B

After discretization the layer can be evaluated two ways that must agree:

  * ``ssm_recurrent``: the stateful scan x_k = Abar x_{k-1} + Bbar u_k (one
    tape node with a hand-derived adjoint recursion).
  * ``ssm_conv``: materialize the L-tap impulse kernel K[i] = C Abar^i Bbar
    (naive dense powers, built by repeated doubling) and apply it with one
    FFT causal convolution, plus the D u feedthrough.

Dense-first on purpose: kernel construction is O(N^2 L) work and the scan is
an O(L) python loop. No diagonalized or low-rank fast paths here.

Shape convention: a single system uses a (N, N) transition with u of shape
(L,); a per-channel bank stacks a leading channel axis, a (D, N, N) with u of
(D, L) or (batch, D, L). Leading axes broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, add, as_tensor, concat, exp, fft_causal_conv,
                     mat_inv, matmul, mul, reshape, sub, truncate,
                     _emit, _unbroadcast, default_dtype)

__all__ = ["hippo_matrix", "SsmParams", "DiscreteSsm", "init_ssm",
           "random_ssm", "discretize", "ssm_kernel", "ssm_conv",
           "ssm_recurrent", "spectral_radius"]


def hippo_matrix(n: int) -> np.ndarray:
    """The structured memory transition, positive form, float64, 0-indexed:

        A[i, k] = sqrt(2i+1) sqrt(2k+1)   if i > k
                  i + 1                    if i == k
                  0                        if i < k
    """
    if n < 1:
        raise ValueError(f"state size must be >= 1, got {n}")
    k = np.arange(n, dtype=np.float64)
    root = np.sqrt(2.0 * k + 1.0)
    return np.tril(np.outer(root, root), -1) + np.diag(k + 1.0)


@dataclass
class SsmParams:
    """Continuous-time parameters; ``a`` is stored in positive form."""
    a: Tensor        # (..., N, N)
    b: Tensor        # (..., N, 1)
    c: Tensor        # (..., 1, N)
    d: Tensor        # (...,) feedthrough
    log_dt: Tensor   # (...,) log step size; exp(log_dt) must land in (0, 1]

    @property
    def n_state(self) -> int:
        return self.a.shape[-1]

    def tensors(self):
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d,
                "log_dt": self.log_dt}


@dataclass
class DiscreteSsm:
    abar: Tensor     # (..., N, N)
    bbar: Tensor     # (..., N, 1)
    c: Tensor        # (..., 1, N)
    d: Tensor        # (...,)


def init_ssm(rng: np.random.Generator, n_state: int, channels: int | None = None,
             dt_min: float = 1e-3, dt_max: float = 1e-1, dtype=None) -> SsmParams:
    """Standard initialization: structured A, B[k] = sqrt(2k+1), C ~ N(0,1),
    D = 1, and per-channel log-uniform step sizes on [dt_min, dt_max]."""
    dtype = dtype or default_dtype()
    lead = () if channels is None else (int(channels),)
    a = np.broadcast_to(hippo_matrix(n_state), lead + (n_state, n_state)).copy()
    k = np.arange(n_state, dtype=np.float64)
    b = np.broadcast_to(np.sqrt(2.0 * k + 1.0)[:, None], lead + (n_state, 1)).copy()
    c = rng.standard_normal(lead + (1, n_state))
    d = np.ones(lead)
    log_dt = rng.uniform(np.log(dt_min), np.log(dt_max), size=lead)
    return SsmParams(
        a=Tensor(a.astype(dtype), requires_grad=True),
        b=Tensor(b.astype(dtype), requires_grad=True),
        c=Tensor(c.astype(dtype), requires_grad=True),
        d=Tensor(d.astype(dtype), requires_grad=True),
        log_dt=Tensor(log_dt.astype(dtype), requires_grad=True),
    )


def random_ssm(rng: np.random.Generator, n_state: int, dtype=None) -> SsmParams:
    """A randomly scaled but provably stable single-channel system, for
    equivalence sweeps: structured A (stable by construction under the
    bilinear map), jittered B, random C and D, random step size."""
    dtype = dtype or default_dtype()
    base = init_ssm(rng, n_state, channels=None, dtype=np.float64)
    b = base.b.data * (0.25 + 1.5 * rng.random((n_state, 1)))
    c = rng.standard_normal((1, n_state))
    d = rng.standard_normal(())
    log_dt = rng.uniform(np.log(1e-3), np.log(1e-1), size=())
    return SsmParams(
        a=Tensor(base.a.data.astype(dtype)),
        b=Tensor(b.astype(dtype)),
        c=Tensor(c.astype(dtype)),
        d=Tensor(np.asarray(d, dtype=dtype)),
        log_dt=Tensor(np.asarray(log_dt, dtype=dtype)),
    )


def discretize(params: SsmParams) -> DiscreteSsm:
    """Bilinear discretization with the stable sign applied internally.

    With A_eff = -A the two bilinear factors become (I + dt/2 A) and
    (I - dt/2 A), so a stored scalar A = 1 at dt = 2 gives Abar = 0.
    """
    a, b = params.a, params.b
    n = a.shape[-1]
    dt = exp(params.log_dt)
    if np.any(dt.data > 1.0):
        raise ValueError("step size exp(log_dt) left (0, 1]")
    dt_mat = reshape(dt, dt.shape + (1, 1))
    eye = as_tensor(np.broadcast_to(np.eye(n), a.shape).copy(), like=a)
    half = mul(mul(dt_mat, 0.5), a)
    forward_factor = sub(eye, half)          # I + dt/2 A_eff
    backward_factor = mat_inv(add(eye, half))  # (I - dt/2 A_eff)^-1
    abar = matmul(backward_factor, forward_factor)
    bbar = matmul(backward_factor, mul(dt_mat, b))
    return DiscreteSsm(abar=abar, bbar=bbar, c=params.c, d=params.d)


def ssm_kernel(dssm: DiscreteSsm, length: int) -> Tensor:
    """Impulse-response taps K[i] = C Abar^i Bbar for i in [0, length).

    Built by repeated doubling of the Krylov block [Bbar, Abar Bbar, ...]:
    X_{2m} = [X_m, Abar^m X_m]. Dense O(N^2 L) arithmetic, log L matmuls.
    """
    if length < 1:
        raise ValueError(f"kernel length must be >= 1, got {length}")
    x = dssm.bbar
    power = dssm.abar
    cur = 1
    while cur < length:
        x = concat([x, matmul(power, x)], axis=-1)
        cur *= 2
        if cur < length:
            power = matmul(power, power)
    k = matmul(dssm.c, x)                      # (..., 1, cur)
    k = reshape(k, k.shape[:-2] + (cur,))
    if cur > length:
        k = truncate(k, length)
    return k


def ssm_conv(dssm: DiscreteSsm, u: Tensor) -> Tensor:
    """Convolution-mode evaluation: FFT-apply the materialized kernel, then
    add the D u feedthrough. Equivalent to ``ssm_recurrent`` by construction."""
    length = u.shape[-1]
    kernel = ssm_kernel(dssm, length)
    y = fft_causal_conv(u, kernel)
    d_col = reshape(dssm.d, dssm.d.shape + (1,))
    return add(y, mul(u, d_col))


def ssm_recurrent(dssm: DiscreteSsm, u: Tensor) -> Tensor:
    """Recurrent-mode evaluation: the stateful scan from zero initial state,

        x_k = Abar x_{k-1} + Bbar u_k,   y_k = C x_k + D u_k,

    recorded as a single tape node whose backward runs the adjoint recursion
    lam_k = C^T dy_k + Abar^T lam_{k+1} in one reverse sweep.
    """
    ad, bd, cd, dd = dssm.abar.data, dssm.bbar.data, dssm.c.data, dssm.d.data
    n = ad.shape[-1]
    length = u.shape[-1]
    lead = np.broadcast_shapes(u.shape[:-1], ad.shape[:-2])
    ud = np.broadcast_to(u.data, lead + (length,))
    bvec = bd[..., 0]
    cvec = cd[..., 0, :]

    xs = np.empty(lead + (length, n), dtype=u.dtype)
    x = np.zeros(lead + (n,), dtype=u.dtype)
    for t in range(length):
        x = (ad @ x[..., None])[..., 0] + bvec * ud[..., t, None]
        xs[..., t, :] = x
    out = np.einsum("...n,...ln->...l", cvec, xs) + dd[..., None] * ud

    ash, bsh, csh, dsh, ush = (dssm.abar.shape, dssm.bbar.shape, dssm.c.shape,
                               dssm.d.shape, u.shape)
    a_t = np.swapaxes(ad, -1, -2)

    def backward(g):
        lam = np.zeros(lead + (n,), dtype=g.dtype)
        da = np.zeros(lead + (n, n), dtype=g.dtype)
        dbv = np.zeros(lead + (n,), dtype=g.dtype)
        du = np.empty(lead + (length,), dtype=g.dtype)
        for t in range(length - 1, -1, -1):
            lam = lam + cvec * g[..., t, None]
            if t > 0:  # the t = 0 step sees the zero initial state
                da += lam[..., :, None] * xs[..., t - 1, None, :]
            dbv += lam * ud[..., t, None]
            du[..., t] = (bvec * lam).sum(-1) + dd * g[..., t]
            lam = (a_t @ lam[..., None])[..., 0]
        dc = np.einsum("...l,...ln->...n", g, xs)
        dd_full = (g * ud).sum(-1)
        return (_unbroadcast(da, ash),
                _unbroadcast(dbv[..., None], bsh),
                _unbroadcast(dc[..., None, :], csh),
                _unbroadcast(dd_full, dsh),
                _unbroadcast(du, ush))

    lead_sz = int(np.prod(lead, dtype=np.int64)) if lead else 1
    fwd_fl = lead_sz * length * (2 * n * n + 4 * n)
    bwd_fl = lead_sz * length * (4 * n * n + 8 * n)
    return _emit("ssm_recurrent", out,
                 (dssm.abar, dssm.bbar, dssm.c, dssm.d, u),
                 backward, fwd_flops=fwd_fl, bwd_flops=bwd_fl,
                 extra_nbytes=xs.nbytes)


def spectral_radius(matrix) -> float:
    """Largest eigenvalue magnitude (dense solve, float64)."""
    m = np.asarray(getattr(matrix, "data", matrix), dtype=np.float64)
    return float(np.abs(np.linalg.eigvals(m)).max())
