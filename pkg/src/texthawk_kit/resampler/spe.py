"""Scalable positional embeddings: per-head Slerp between two learned endpoints.

Each endpoint is renormalised to the learnable per-head scale before
interpolation, so every generated embedding lies on the same hypersphere.
Row and column embeddings are independent pairs whose outputs are summed.
"""

from __future__ import annotations

import math

import numpy as np

from ..numeric import tensor as T
from ..numeric.layers import Module, param
from ..numeric.rng import Rng
from ..numeric.tensor import Tensor

PARALLEL_TOL = 1e-6  # radians; below this Slerp falls back to lerp
ANTIPODAL_TOL = 1e-6  # radians from pi


class AntipodalEndpointsError(ValueError):
    pass


class SpePair(Module):
    def __init__(self, heads: int, d_head: int, rng: Rng | None = None,
                 e0: np.ndarray | None = None, e1: np.ndarray | None = None):
        rng = rng or Rng(0)
        if e0 is None:
            e0 = rng.child("e0").normal((heads, d_head))
        if e1 is None:
            e1 = rng.child("e1").normal((heads, d_head))
        self.e0_raw = param(np.asarray(e0, np.float32).reshape(heads, d_head))
        self.e1_raw = param(np.asarray(e1, np.float32).reshape(heads, d_head))
        self.scale = param(np.full(heads, math.sqrt(d_head), np.float32))
        self.validate()

    @property
    def heads(self) -> int:
        return self.e0_raw.shape[0]

    @property
    def d_head(self) -> int:
        return self.e0_raw.shape[1]

    def endpoints(self) -> tuple[Tensor, Tensor]:
        s = self.scale.reshape(self.heads, 1)

        def norm(e):
            return e * s / T.sqrt((e * e).sum(axis=-1, keepdims=True))

        return norm(self.e0_raw), norm(self.e1_raw)

    def angles(self) -> np.ndarray:
        a, b = self.e0_raw.data.astype(np.float64), self.e1_raw.data.astype(np.float64)
        cos = (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
        return np.arccos(np.clip(cos, -1.0, 1.0))

    def validate(self) -> None:
        theta = self.angles()
        if np.any(theta > math.pi - ANTIPODAL_TOL):
            raise AntipodalEndpointsError("SPE endpoints are antipodal; Slerp is undefined")

    def interpolate(self, t) -> Tensor:
        """Embeddings at fractions ``t`` (shape (N,)): returns (N, heads, d_head)."""
        self.validate()
        e0, e1 = self.endpoints()
        t = np.asarray(t, dtype=e0.dtype).reshape(-1, 1)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("fractional positions must lie in [0, 1]")
        n0 = T.sqrt((e0 * e0).sum(axis=-1))
        n1 = T.sqrt((e1 * e1).sum(axis=-1))
        cos = (e0 * e1).sum(axis=-1) / (n0 * n1)
        degenerate = self.angles() < PARALLEL_TOL
        cos = T.where(degenerate, 0.0, T.clip(cos, -1.0, 1.0))
        theta = T.arccos(cos)  # (heads,)
        sin_theta = T.sin(theta)
        w0 = T.sin(theta - t * theta) / sin_theta  # (N, heads)
        w1 = T.sin(t * theta) / sin_theta
        slerp = w0.reshape(w0.shape + (1,)) * e0 + w1.reshape(w1.shape + (1,)) * e1
        if not degenerate.any():
            return slerp
        tt = t.reshape(-1, 1, 1)
        lerp = (1.0 - tt) * e0 + tt * e1
        return T.where(degenerate[None, :, None], lerp, slerp)


def spe_interpolate(pair: SpePair, t: float) -> Tensor:
    """Single-fraction Slerp, shape (heads, d_head)."""
    return pair.interpolate([t])[0]


def spe_for_position(row_pair: SpePair, col_pair: SpePair, row_t, col_t) -> Tensor:
    """Row Slerp + column Slerp, heads concatenated: (N, heads*d_head)."""
    row_t = np.atleast_1d(np.asarray(row_t, np.float64))
    col_t = np.atleast_1d(np.asarray(col_t, np.float64))
    e = row_pair.interpolate(row_t) + col_pair.interpolate(col_t)
    return e.reshape(e.shape[0], e.shape[1] * e.shape[2])


def axis_fraction(index, length: int):
    """i/(m-1) for m > 1; the midpoint 0.5 for a singleton axis."""
    index = np.asarray(index, dtype=np.float64)
    if length <= 1:
        return np.full_like(index, 0.5)
    return index / (length - 1)


def cell_fractions(row: int, col: int, grid_rows: int, grid_cols: int) -> tuple[np.ndarray, np.ndarray]:
    return axis_fraction([row], grid_rows), axis_fraction([col], grid_cols)


def patch_fractions(row: int, col: int, grid_rows: int, grid_cols: int,
                    patch_rows: int, patch_cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractions of every patch of one sub-image over the whole-image patch grid, row-major."""
    gr = row * patch_rows + np.repeat(np.arange(patch_rows), patch_cols)
    gc = col * patch_cols + np.tile(np.arange(patch_cols), patch_rows)
    return axis_fraction(gr, grid_rows * patch_rows), axis_fraction(gc, grid_cols * patch_cols)
