from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad


def finite_diff_check(f: Callable[[], Tensor], p: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` w.r.t. ``p`` and central differences.

    ``f`` is a closure that rebuilds the scalar loss from the current value of
    ``p`` (it must be deterministic, so disable dropout). The relative error
    per element is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    requires = p.requires_grad
    p.requires_grad = True
    p.grad = np.zeros_like(p.data)
    try:
        loss = f()
        loss.backward()
        analytic = p.grad.copy()
        numeric = np.empty_like(analytic)
        flat = p.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric.flat[i] = (up - down) / (2 * eps)
    finally:
        p.requires_grad = requires
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise NonFiniteError("gradient check met a non-finite value")
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
