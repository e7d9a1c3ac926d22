"""Frozen, seeded toy ViT that stands in for the real visual encoder.

It emits the residual stream at four tap layers (stage 0 = shallowest).
Weights are created once from the seed and never require grad.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import io as tio
from .numeric.layers import LayerNorm, Linear, MLP, Module, MultiHeadAttention, sinusoidal_2d
from .numeric.rng import Rng
from .numeric.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 8
    dim: int = 64
    heads: int = 4
    tap_layers: tuple[int, ...] = (2, 4, 6, 8)
    patch: int = 14
    channels: int = 3
    mlp_ratio: int = 4

    def __post_init__(self):
        taps = tuple(self.tap_layers)
        object.__setattr__(self, "tap_layers", taps)
        if len(taps) != 4:
            raise ValueError("exactly four tap layers are required")
        if any(b <= a for a, b in zip(taps, taps[1:])) or taps[0] < 1 or taps[-1] > self.depth:
            raise ValueError(f"tap layers {taps} must be strictly increasing within 1..{self.depth}")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


@dataclass
class FeatureMap:
    stage: int
    rows: int
    cols: int
    features: Tensor  # (rows*cols, dim)

    def __post_init__(self):
        if not 0 <= self.stage < 4:
            raise ValueError(f"stage must be in 0..3, got {self.stage}")
        if self.features.shape[-2] != self.rows * self.cols:
            raise ShapeError(f"{self.features.shape[-2]} tokens for a {self.rows}x{self.cols} grid")

    @property
    def tokens(self) -> int:
        return self.rows * self.cols


class _Block(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: Rng):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng.child("attn"))
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng.child("mlp"))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.ln2(x))


class VisionEncoder(Module):
    def __init__(self, cfg: EncoderConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        rng = Rng(seed).child("encoder")
        p = cfg.patch
        self.embed = Linear(p * p * cfg.channels, cfg.dim, rng.child("embed"))
        self.blocks = [_Block(cfg.dim, cfg.heads, cfg.mlp_ratio, rng.child(f"block{i}"))
                       for i in range(cfg.depth)]
        self.freeze()

    def patchify(self, images: np.ndarray) -> tuple[np.ndarray, int, int]:
        """(N, H, W, C) -> (N, rows*cols, p*p*C), row-major patches."""
        n, h, w, c = images.shape
        p = self.cfg.patch
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch {p}")
        if c != self.cfg.channels:
            raise ShapeError(f"expected {self.cfg.channels} channels, got {c}")
        rows, cols = h // p, w // p
        x = images.reshape(n, rows, p, cols, p, c).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(n, rows * cols, p * p * c), rows, cols

    def encode_batch(self, images: np.ndarray) -> list[list[FeatureMap]]:
        """Encode a stack of sub-images; returns four FeatureMaps per image."""
        dtype = self.embed.weight.dtype
        images = np.asarray(images, dtype=dtype)
        if images.ndim != 4:
            raise ShapeError(f"expected (N, H, W, C), got {images.shape}")
        patches, rows, cols = self.patchify(images)
        x = self.embed(Tensor(patches)) + sinusoidal_2d(rows, cols, self.cfg.dim, dtype)
        taps = []
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i in self.cfg.tap_layers:
                taps.append(x.data)
        return [
            [FeatureMap(s, rows, cols, Tensor(taps[s][j])) for s in range(4)]
            for j in range(images.shape[0])
        ]

    def encode(self, sub_image: np.ndarray) -> list[FeatureMap]:
        return self.encode_batch(np.asarray(sub_image)[None])[0]

    def encode_many(self, sub_images: list[np.ndarray], threads: int = 1) -> list[list[FeatureMap]]:
        """Per-image encoding, optionally threaded; output order follows input order."""
        if threads <= 1:
            return [self.encode(im) for im in sub_images]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(self.encode, sub_images))


def encode(sub_image: np.ndarray, cfg: EncoderConfig, rng_seed: int) -> list[FeatureMap]:
    return VisionEncoder(cfg, rng_seed).encode(sub_image)


def save_feature_map(path, fm: FeatureMap) -> None:
    """Tensor file at ``path`` plus a sidecar ``path.meta`` with the stage/grid line."""
    path = Path(path)
    tio.save(path, fm.features.data)
    path.with_name(path.name + ".meta").write_text(f"stage={fm.stage} rows={fm.rows} cols={fm.cols}\n")


def load_feature_map(path) -> FeatureMap:
    path = Path(path)
    meta = dict(kv.split("=", 1) for kv in path.with_name(path.name + ".meta").read_text().split())
    data = tio.load(path)
    return FeatureMap(int(meta["stage"]), int(meta["rows"]), int(meta["cols"]), Tensor(data))
