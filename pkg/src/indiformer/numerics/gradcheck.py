"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError, NumericError
from .tensor import Parameter, Tensor, no_grad, precision_bits


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter],
               eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of a scalar `f()` against central
    finite differences over every entry of every parameter.

    Returns the worst relative error
    max |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12).
    Requires the 64-bit precision mode; finite differencing at 32 bits
    is meaningless.
    """
    if precision_bits() != 64:
        raise ConfigurationError("grad_check requires 64-bit precision mode")
    for p in params:
        if p.tensor.data.dtype != np.float64:
            raise ConfigurationError(
                f"parameter {p.name!r} is {p.tensor.data.dtype}, need float64")
        p.zero_grad()

    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("grad_check objective is non-finite")
    loss.backward()
    analytic = [np.array(p.gradient, copy=True) for p in params]

    worst = 0.0
    with no_grad():
        for p, g_ad in zip(params, analytic):
            flat = p.tensor.data.reshape(-1)
            g_flat = g_ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise NumericError("grad_check objective is non-finite")
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                rel = abs(g_flat[i] - g_fd) / (abs(g_flat[i]) + abs(g_fd) + 1e-12)
                if rel > worst:
                    worst = rel
    return worst
