"""Parameter containers and the transformer building blocks shared by the models."""

from __future__ import annotations

import hashlib
import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Module:
    """Tree of named parameters. Attributes that are Tensors, Modules or lists
    of Modules are discovered in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise T.ShapeError(f"{n}: expected {p.shape}, got {state[n].shape}")
            p.data = np.asarray(state[n], dtype=p.dtype).copy()


def param(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True, std: float | None = None):
        std = 1.0 / math.sqrt(d_in) if std is None else std
        self.weight = param(rng.child("weight").normal((d_in, d_out), std))
        self.bias = param(np.zeros(d_out, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = param(np.ones(dim, np.float32))
        self.bias = param(np.zeros(dim, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: Rng, act=T.gelu):
        self.fc1 = Linear(d_in, d_hidden, rng.child("fc1"))
        self.fc2 = Linear(d_hidden, d_out, rng.child("fc2"))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., L, D) -> (..., heads, L, D/heads)"""
    *lead, length, dim = x.shape
    x = x.reshape(tuple(lead) + (length, heads, dim // heads))
    n = x.ndim
    axes = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    return x.transpose(axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, L, dh) -> (..., L, heads*dh)"""
    n = x.ndim
    axes = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    x = x.transpose(axes)
    *lead, length, heads, dh = x.shape
    return x.reshape(tuple(lead) + (length, heads * dh))


def attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention on split heads. ``mask`` is boolean, True = visible."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(_swap_last(k.ndim))) * scale
    if mask is not None:
        scores = T.where(mask, scores, -1e9)
    return T.softmax(scores, axis=-1) @ v


def _swap_last(n: int) -> tuple[int, ...]:
    return tuple(range(n - 2)) + (n - 1, n - 2)


class MultiHeadAttention(Module):
    """Multi-head attention. The key projection has no bias: a key bias only
    shifts every score of a query by the same amount, which softmax ignores."""

    def __init__(self, dim: int, heads: int, rng: Rng, kv_dim: int | None = None):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.wq = Linear(dim, dim, rng.child("wq"))
        self.wk = Linear(kv_dim, dim, rng.child("wk"), bias=False)
        self.wv = Linear(kv_dim, dim, rng.child("wv"))
        self.wo = Linear(dim, dim, rng.child("wo"))

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None,
                 k_in: Tensor | None = None) -> Tensor:
        q = split_heads(self.wq(q_in), self.heads)
        k = split_heads(self.wk(kv_in if k_in is None else k_in), self.heads)
        v = split_heads(self.wv(kv_in), self.heads)
        return self.wo(merge_heads(attend(q, k, v, mask)))


def sinusoidal_2d(rows: int, cols: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed two-axis sine/cosine table of shape (rows*cols, dim), row-major.

    The first half encodes the row index, the second half the column index;
    each half is [sin | cos] over dim/4 frequencies spaced geometrically from
    1 down to 1/10000.
    """
    if dim % 4:
        raise ValueError("sinusoidal_2d needs dim divisible by 4")
    nf = dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(nf, dtype=np.float64) / max(nf - 1, 1)))

    def axis(n):
        ang = np.arange(n, dtype=np.float64)[:, None] * freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    r = np.repeat(axis(rows), cols, axis=0)
    c = np.tile(axis(cols), (rows, 1))
    return np.concatenate([r, c], axis=1).astype(dtype)
