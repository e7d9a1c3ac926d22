"""Training objective: alpha-weighted LM loss plus lambda times the l1 box loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numeric import tensor as T
from ..numeric.tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.25  # LM weight of coordinate tokens
    lam: float = 1.0  # weight of the box loss

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def token_weights(response_mask, coord_mask, weights: LossWeights) -> np.ndarray:
    """alpha_i per position: alpha on coordinates, 1 on other response tokens, 0 elsewhere."""
    resp = np.asarray(response_mask, bool)
    coord = np.asarray(coord_mask, bool) & resp
    return np.where(coord, weights.alpha, np.where(resp, 1.0, 0.0))


def weighted_nll(logits: Tensor, targets, alpha: np.ndarray) -> Tensor:
    """``-sum(alpha_i log p(target_i)) / sum(alpha_i)``."""
    targets = np.asarray(targets, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=logits.dtype)
    if alpha.sum() <= 0:
        raise ValueError("loss needs at least one response position")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(targets)), targets]
    return -(picked * alpha).sum() * (1.0 / float(alpha.sum()))


def lm_loss(logits: Tensor, targets, response_mask, coord_mask, weights: LossWeights = LossWeights()) -> Tensor:
    """``logits[i]`` scores ``targets[i]``; masks are over the same positions."""
    return weighted_nll(logits, targets, token_weights(response_mask, coord_mask, weights))


def box_loss(pred: Tensor, truth) -> Tensor:
    """Mean absolute error over coordinate positions; 0 when there are none."""
    truth = np.asarray(truth, dtype=pred.dtype)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if truth.size == 0:
        return Tensor(np.zeros((), pred.dtype))
    return T.absolute(pred - truth).mean()


def total_loss(lm: Tensor, box: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    return lm + box * weights.lam
