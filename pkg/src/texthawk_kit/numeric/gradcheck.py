"""Central finite differences, used as the oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import NonFiniteError


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6,
                     indices: Iterable[tuple] | None = None) -> np.ndarray:
    """Per-coordinate ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``.

    ``x`` is perturbed in place and restored, so ``f`` may close over it.
    With ``indices`` only those coordinates are estimated (the rest stay 0).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grad = np.zeros(x.shape, dtype=np.float64)
    coords = np.ndindex(x.shape) if indices is None else indices
    for i in coords:
        orig = x[i].copy()
        x[i] = orig + eps
        fp = float(f(x))
        x[i] = orig - eps
        fm = float(f(x))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is non-finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``|a - n| / max(|a|, |n|)`` in the 2-norm; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
