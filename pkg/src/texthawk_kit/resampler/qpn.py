"""Query proposal network: per-token MLP, grid max-pool, linear projection."""

from __future__ import annotations

from dataclasses import dataclass

from ..encoder import FeatureMap
from ..numeric import tensor as T
from ..numeric.layers import Linear, Module
from ..numeric.rng import Rng
from ..numeric.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class QpnConfig:
    dim: int = 64
    hidden_mult: int = 4
    pool_stride: tuple[int, int] = (2, 2)

    @property
    def mlp_hidden(self) -> int:
        return self.hidden_mult * self.dim

    @property
    def out_dim(self) -> int:
        return self.dim


class QueryProposalNetwork(Module):
    def __init__(self, cfg: QpnConfig, rng: Rng):
        self.cfg = cfg
        h = cfg.mlp_hidden
        self.fc1 = Linear(cfg.dim, h, rng.child("fc1"))
        self.fc2 = Linear(h, h, rng.child("fc2"))
        self.proj = Linear(h, cfg.out_dim, rng.child("proj"))

    def mlp(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    def pool(self, hidden: Tensor, rows: int, cols: int) -> Tensor:
        sr, sc = self.cfg.pool_stride
        if rows % sr or cols % sc:
            raise ShapeError(f"patch grid {rows}x{cols} is not divisible by the pool stride")
        return T.max_pool_grid(hidden, rows, cols, (sr, sc))

    def __call__(self, x: Tensor, rows: int, cols: int) -> Tensor:
        """(..., rows*cols, dim) -> (..., rows*cols/4, dim), row-major over the pooled grid."""
        return self.proj(self.pool(self.mlp(x), rows, cols))


def propose_queries(features: FeatureMap, qpn: QueryProposalNetwork) -> Tensor:
    return qpn(features.features, features.rows, features.cols)
