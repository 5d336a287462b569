"""Central-difference verification of tape gradients.

The checker perturbs every parameter coordinate by +/- h, re-evaluates the
loss with no tape active (plain numpy path), and compares the resulting
central difference against the analytic gradient from one backward pass.
Strictly a 64-bit tool: at h = 1e-5 the difference quotient carries ~1e-11
absolute noise in float64, which float32 would drown.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-5, eps: float = 1e-3) -> float:
    """Return the max relative gradient error over all parameter coordinates.

    ``f`` is a zero-argument callable producing a scalar Tensor; it must be a
    pure function of ``params`` (re-evaluated many times). Relative error per
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, eps); the
    eps floor keeps finite-difference noise on genuinely-zero gradients from
    registering as error.
    """
    if not params:
        raise ValueError("grad_check needs at least one parameter")
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.requires_grad = True

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), eps)
            if err > worst:
                worst = err
    return worst
