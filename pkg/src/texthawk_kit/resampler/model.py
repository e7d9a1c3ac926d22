"""Routed cross-attention resampler followed by token rearrangement.

Per sub-image: queries (learned or proposed from features) pass through
``depth`` layers. Layer ``i`` cross-attends to the encoder stage named by
``routing[i]``; layer 0 has no self-attention. The resampled query grid is
then regrouped (2x2 spatial blocks by default), concatenated channel-wise and
projected to the LLM width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cropping import Grid
from ..encoder import FeatureMap
from ..numeric.layers import LayerNorm, Linear, MLP, Module, MultiHeadAttention, param, sinusoidal_2d
from ..numeric.rng import Rng
from ..numeric.tensor import ShapeError, Tensor
from .qpn import QpnConfig, QueryProposalNetwork
from .spe import SpePair, cell_fractions, patch_fractions, spe_for_position

NUM_STAGES = 4

ROUTING_TABLES: dict[str, tuple[int, ...]] = {
    "R1": (3, 3, 3, 3, 3, 3, 3, 3),
    "R2": (3, 2, 1, 0, 0, 1, 2, 3),
    "R3": (3, 2, 1, 0, 3, 2, 1, 0),
    "R4": (3, 3, 2, 2, 1, 1, 0, 0),
    "R5": (3, 3, 3, 2, 2, 2, 1, 0),
}
DEFAULT_ROUTING = "R5"
QPN_SOURCE_STAGE = 3


@dataclass(frozen=True)
class RoutingTable:
    stages: tuple[int, ...] = ROUTING_TABLES[DEFAULT_ROUTING]

    def __post_init__(self):
        stages = tuple(int(s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        bad = [s for s in stages if not 0 <= s < NUM_STAGES]
        if bad:
            raise ValueError(f"routing entries must be in 0..{NUM_STAGES - 1}, got {bad}")

    @classmethod
    def named(cls, name: str) -> "RoutingTable":
        try:
            return cls(ROUTING_TABLES[name])
        except KeyError:
            raise ValueError(f"unknown routing table {name!r}; choose from {sorted(ROUTING_TABLES)}") from None

    def __len__(self) -> int:
        return len(self.stages)


@dataclass(frozen=True)
class ResamplerConfig:
    depth: int = 8
    dim: int = 64
    heads: int = 4
    queries_per_subimage: int = 64
    rearrange_group: int = 4
    llm_dim: int = 128
    use_qpn: bool = True
    spe_granularity: str = "patch"  # cell | patch | none
    rearrange: str = "block"  # block | seq
    ffn_mult: int = 4
    pool_stride: tuple[int, int] = (2, 2)

    def __post_init__(self):
        object.__setattr__(self, "pool_stride", tuple(self.pool_stride))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.spe_granularity not in ("cell", "patch", "none"):
            raise ValueError(f"spe_granularity must be cell, patch or none, got {self.spe_granularity!r}")
        if self.rearrange not in ("block", "seq"):
            raise ValueError(f"rearrange must be block or seq, got {self.rearrange!r}")
        if self.queries_per_subimage % self.rearrange_group:
            raise ValueError("queries_per_subimage must be divisible by rearrange_group")
        if self.rearrange == "block" and math.isqrt(self.rearrange_group) ** 2 != self.rearrange_group:
            raise ValueError("block rearrangement needs a square group size")

    def query_grid(self, rows: int, cols: int) -> tuple[int, int]:
        sr, sc = self.pool_stride
        if rows % sr or cols % sc:
            raise ShapeError(f"patch grid {rows}x{cols} not divisible by stride {self.pool_stride}")
        return rows // sr, cols // sc


def rearrange_tokens(x: Tensor, q_rows: int, q_cols: int, group: int, mode: str = "block") -> Tensor:
    """(N, Q, D) -> (N, Q/group, group*D).

    ``block`` concatenates each sqrt(group) x sqrt(group) spatial block of the
    query grid (row-major inside the block, blocks row-major); ``seq``
    concatenates runs of ``group`` consecutive queries.
    """
    n, q, d = x.shape
    if q % group:
        raise ShapeError(f"{q} tokens not divisible by rearrange group {group}")
    if mode == "seq":
        return x.reshape(n, q // group, group * d)
    g = math.isqrt(group)
    if q != q_rows * q_cols or q_rows % g or q_cols % g:
        raise ShapeError(f"query grid {q_rows}x{q_cols} cannot be tiled by {g}x{g} blocks")
    x = x.reshape(n, q_rows // g, g, q_cols // g, g, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, (q_rows // g) * (q_cols // g), group * d)


class ResamplerLayer(Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int, self_attention: bool, rng: Rng):
        if self_attention:
            self.ln_self = LayerNorm(dim)
            self.self_attn = MultiHeadAttention(dim, heads, rng.child("self_attn"))
        else:
            self.ln_self = None
            self.self_attn = None
        self.ln_q = LayerNorm(dim)
        self.ln_kv = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng.child("cross_attn"))
        self.ln_ff = LayerNorm(dim)
        self.ff = MLP(dim, ffn_mult * dim, dim, rng.child("ff"))

    def feed_forward(self, x: Tensor) -> Tensor:
        return self.ff(self.ln_ff(x))

    def __call__(self, x: Tensor, kv: Tensor, query_pos: Tensor, kv_pos) -> Tensor:
        if self.self_attn is not None:
            h = self.ln_self(x)
            x = x + self.self_attn(h, h)
        q = self.ln_q(x) + query_pos
        # positional terms go on the key/value input so that a per-cell SPE,
        # constant over one sub-image's keys, still reaches the output
        kvp = self.ln_kv(kv) + kv_pos
        x = x + self.cross_attn(q, kvp)
        return x + self.feed_forward(x)


@dataclass
class ResamplerOutput:
    tokens: Tensor  # (N * Q/group, llm_dim), sub-images in crop order
    resampled: Tensor  # (N, Q, dim), after the final norm
    layers: list[Tensor]  # per-layer (N, Q, dim)
    queries: Tensor  # initial queries, (N, Q, dim) or (Q, dim) when learned


class Resampler(Module):
    def __init__(self, cfg: ResamplerConfig, routing: RoutingTable | None = None, seed: int = 0):
        routing = routing or RoutingTable()
        if len(routing) != cfg.depth:
            raise ValueError(f"routing table has {len(routing)} entries for depth {cfg.depth}")
        self.cfg = cfg
        self.routing = routing
        rng = Rng(seed).child("resampler")
        d, nq = cfg.dim, cfg.queries_per_subimage
        if cfg.use_qpn:
            self.qpn = QueryProposalNetwork(QpnConfig(d, cfg.ffn_mult, cfg.pool_stride), rng.child("qpn"))
            self.queries = None
        else:
            self.qpn = None
            self.queries = param(rng.child("queries").normal((nq, d)))
        self.query_pos = param(rng.child("query_pos").normal((nq, d), std=0.02))
        if cfg.spe_granularity != "none":
            dh = d // cfg.heads
            self.spe_row = SpePair(cfg.heads, dh, rng.child("spe_row"))
            self.spe_col = SpePair(cfg.heads, dh, rng.child("spe_col"))
        else:
            self.spe_row = self.spe_col = None
        self.layers = [
            ResamplerLayer(d, cfg.heads, cfg.ffn_mult, i > 0, rng.child(f"layer{i}"))
            for i in range(cfg.depth)
        ]
        self.ln_out = LayerNorm(d)
        self.proj = Linear(cfg.rearrange_group * d, cfg.llm_dim, rng.child("proj"))

    # ---- positional terms ----------------------------------------------
    def spe(self, positions: list[tuple[int, int]], grid: Grid, rows: int, cols: int):
        """SPE per sub-image: (N, 1, dim) at cell granularity, (N, rows*cols, dim) at patch."""
        if self.spe_row is None:
            return None
        rt, ct = [], []
        for r, c in positions:
            if self.cfg.spe_granularity == "cell":
                a, b = cell_fractions(r, c, grid.r, grid.c)
            else:
                a, b = patch_fractions(r, c, grid.r, grid.c, rows, cols)
            rt.append(a)
            ct.append(b)
        per = len(rt[0])
        emb = spe_for_position(self.spe_row, self.spe_col, np.concatenate(rt), np.concatenate(ct))
        return emb.reshape(len(positions), per, self.cfg.dim)

    def kv_positions(self, positions, grid: Grid, rows: int, cols: int, dtype):
        sin = sinusoidal_2d(rows, cols, self.cfg.dim, dtype)
        spe = self.spe(positions, grid, rows, cols)
        return sin if spe is None else spe + sin

    # ---- forward ---------------------------------------------------------
    def initial_queries(self, stages: list[Tensor], rows: int, cols: int) -> Tensor:
        qr, qc = self.cfg.query_grid(rows, cols)
        if qr * qc != self.cfg.queries_per_subimage:
            raise ShapeError(
                f"{rows}x{cols} patches pool to {qr * qc} queries, config expects {self.cfg.queries_per_subimage}"
            )
        if self.qpn is not None:
            return self.qpn(stages[QPN_SOURCE_STAGE], rows, cols)
        return self.queries

    def layer_forward(self, index: int, x: Tensor, stages: list[Tensor], kv_pos) -> Tensor:
        stage = self.routing.stages[index]
        if not 0 <= stage < len(stages):
            raise IndexError(f"layer {index} routes to stage {stage}, only {len(stages)} available")
        return self.layers[index](x, stages[stage], self.query_pos, kv_pos)

    def forward(self, stages: list[Tensor], rows: int, cols: int,
                positions: list[tuple[int, int]], grid: Grid) -> ResamplerOutput:
        """``stages``: four (N, rows*cols, dim) tensors, sub-images in crop order."""
        if len(stages) != NUM_STAGES:
            raise ValueError(f"expected {NUM_STAGES} stage tensors, got {len(stages)}")
        n = stages[0].shape[0]
        if len(positions) != n:
            raise ValueError(f"{len(positions)} positions for {n} sub-images")
        dtype = self.proj.weight.dtype
        kv_pos = self.kv_positions(positions, grid, rows, cols, dtype)
        queries = self.initial_queries(stages, rows, cols)
        x = queries
        per_layer = []
        for i in range(self.cfg.depth):
            x = self.layer_forward(i, x, stages, kv_pos)
            per_layer.append(x)
        resampled = self.ln_out(x)
        qr, qc = self.cfg.query_grid(rows, cols)
        grouped = rearrange_tokens(resampled, qr, qc, self.cfg.rearrange_group, self.cfg.rearrange)
        tokens = self.proj(grouped)
        tokens = tokens.reshape(tokens.shape[0] * tokens.shape[1], tokens.shape[2])
        return ResamplerOutput(tokens, resampled, per_layer, queries)

    def resample_and_rearrange(self, sub_features: list[list[FeatureMap]],
                               positions: list[tuple[int, int]], grid: Grid) -> ResamplerOutput:
        """Stack per-sub-image FeatureMaps and run :meth:`forward`."""
        rows, cols = sub_features[0][0].rows, sub_features[0][0].cols
        dtype = self.proj.weight.dtype
        stages = [
            Tensor(np.stack([fms[s].features.data for fms in sub_features]).astype(dtype))
            for s in range(NUM_STAGES)
        ]
        return self.forward(stages, rows, cols, positions, grid)

    def reachable_stages(self) -> set[int]:
        stages = set(self.routing.stages)
        if self.qpn is not None:
            stages.add(QPN_SOURCE_STAGE)
        return stages


def cross_attend_layer(resampler: Resampler, queries: Tensor, stages: list[Tensor],
                       layer_index: int, kv_pos) -> Tensor:
    return resampler.layer_forward(layer_index, queries, stages, kv_pos)


def resample_and_rearrange(resampler: Resampler, sub_features, positions, grid) -> Tensor:
    return resampler.resample_and_rearrange(sub_features, positions, grid).tokens
