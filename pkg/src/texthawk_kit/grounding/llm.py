"""Desk-scale decoder-only language model with LoRA on the attention projections.

Operates on a single (possibly packed) sequence. Attention visibility comes
from an explicit boolean mask, so packed samples can be made mutually
invisible; learned absolute position embeddings are indexed by caller
supplied position ids, which restart at 0 for every packed sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import vocab as V
from ..numeric import tensor as T
from ..numeric.layers import LayerNorm, MLP, Module, attend, merge_heads, param, split_heads
from ..numeric.rng import Rng
from ..numeric.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LLMConfig:
    vocab_size: int = V.CoordVocab().size
    dim: int = 128
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    max_positions: int = 2048
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_init_std: float = 0.0  # std of the LoRA up-projection at init; 0 is the usual no-op start

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


class LoRALinear(Module):
    """``x W + b + (alpha/r) x A B``; ``merge`` folds ``A B`` into ``W``."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float, rng: Rng, b_std: float = 0.0):
        self.weight = param(rng.child("weight").normal((d_in, d_out), 1.0 / math.sqrt(d_in)))
        self.bias = param(np.zeros(d_out, np.float32))
        self.rank = rank
        self.scaling = alpha / rank if rank else 0.0
        if rank:
            self.lora_a = param(rng.child("lora_a").normal((d_in, rank), 1.0 / math.sqrt(d_in)))
            self.lora_b = param(rng.child("lora_b").normal((rank, d_out), b_std))
        else:
            self.lora_a = self.lora_b = None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight + self.bias
        if self.lora_a is not None:
            y = y + ((x @ self.lora_a) @ self.lora_b) * self.scaling
        return y

    def merge(self) -> None:
        if self.lora_a is None:
            return
        delta = T.seq_matmul(self.lora_a.data, self.lora_b.data) * self.scaling
        self.weight.data = (self.weight.data + delta).astype(self.weight.dtype)
        self.lora_b.data = np.zeros_like(self.lora_b.data)


class _Attention(Module):
    def __init__(self, cfg: LLMConfig, rng: Rng):
        d, r, a, s = cfg.dim, cfg.lora_rank, cfg.lora_alpha, cfg.lora_init_std
        self.heads = cfg.heads
        self.wq = LoRALinear(d, d, r, a, rng.child("wq"), s)
        self.wk = LoRALinear(d, d, r, a, rng.child("wk"), s)
        self.wv = LoRALinear(d, d, r, a, rng.child("wv"), s)
        self.wo = LoRALinear(d, d, r, a, rng.child("wo"), s)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        q = split_heads(self.wq(x), self.heads)
        k = split_heads(self.wk(x), self.heads)
        v = split_heads(self.wv(x), self.heads)
        return self.wo(merge_heads(attend(q, k, v, mask)))


class _Block(Module):
    def __init__(self, cfg: LLMConfig, rng: Rng):
        self.ln1 = LayerNorm(cfg.dim)
        self.attn = _Attention(cfg, rng.child("attn"))
        self.ln2 = LayerNorm(cfg.dim)
        self.mlp = MLP(cfg.dim, cfg.ffn_mult * cfg.dim, cfg.dim, rng.child("mlp"))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), bool))


class LanguageModelStub(Module):
    def __init__(self, cfg: LLMConfig, rng: Rng):
        self.cfg = cfg
        self.tok_embed = param(rng.child("tok_embed").normal((cfg.vocab_size, cfg.dim), 0.5))
        self.pos_embed = param(rng.child("pos_embed").normal((cfg.max_positions, cfg.dim), 0.1))
        self.blocks = [_Block(cfg, rng.child(f"block{i}")) for i in range(cfg.layers)]
        self.ln_f = LayerNorm(cfg.dim)
        self.lm_head = param(rng.child("lm_head").normal((cfg.dim, cfg.vocab_size), 1.0 / math.sqrt(cfg.dim)))

    def embed(self, tokens: np.ndarray, position_ids: np.ndarray, image_embeds: Tensor | None = None) -> Tensor:
        tokens = np.asarray(tokens, np.int64)
        position_ids = np.asarray(position_ids, np.int64)
        if tokens.shape != position_ids.shape or tokens.ndim != 1:
            raise ShapeError("tokens and position ids must be matching 1-D arrays")
        if position_ids.max(initial=0) >= self.cfg.max_positions:
            raise ShapeError("position id exceeds max_positions")
        x = T.take_rows(self.tok_embed, tokens)
        slots = np.flatnonzero(tokens == V.IMAGE)
        if image_embeds is not None or len(slots):
            n_img = 0 if image_embeds is None else image_embeds.shape[0]
            if n_img != len(slots):
                raise ShapeError(f"{len(slots)} image placeholders but {n_img} visual tokens")
            keep = (tokens != V.IMAGE).astype(x.dtype)[:, None]
            x = x * keep + T.scatter_rows(image_embeds, slots, len(tokens))
        return x + T.take_rows(self.pos_embed, position_ids)

    def __call__(self, tokens, position_ids=None, mask: np.ndarray | None = None,
                 image_embeds: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Returns (final hidden states, logits), both per position."""
        tokens = np.asarray(tokens, np.int64)
        if position_ids is None:
            position_ids = np.arange(len(tokens))
        if mask is None:
            mask = causal_mask(len(tokens))
        x = self.embed(tokens, position_ids, image_embeds)
        for block in self.blocks:
            x = block(x, mask)
        hidden = self.ln_f(x)
        return hidden, hidden @ self.lm_head

    def lora_layers(self) -> list[LoRALinear]:
        out = []
        for b in self.blocks:
            out += [b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo]
        return out

    def merge_lora(self) -> None:
        for layer in self.lora_layers():
            layer.merge()
