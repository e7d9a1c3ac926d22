from __future__ import annotations

from ..numeric import tensor as T
from ..numeric.layers import Linear, Module
from ..numeric.rng import Rng
from ..numeric.tensor import Tensor

# float32 sigmoid rounds to exactly 1 above ~17; capping the logit keeps
# outputs strictly inside (0, 1) with ~1e-7 headroom at both ends
LOGIT_CAP = 15.0


class DetectionHead(Module):
    """Two ReLU layers and a scalar projection squashed by a sigmoid.

    Applied to the hidden state that the LM head reads when emitting a
    coordinate token; predicts that coordinate as a continuous value.
    """

    def __init__(self, dim: int, rng: Rng):
        self.fc1 = Linear(dim, dim, rng.child("fc1"))
        self.fc2 = Linear(dim, dim, rng.child("fc2"))
        self.proj = Linear(dim, 1, rng.child("proj"))

    def __call__(self, hidden: Tensor) -> Tensor:
        h = T.relu(self.fc2(T.relu(self.fc1(hidden))))
        out = T.sigmoid(T.clip(self.proj(h), -LOGIT_CAP, LOGIT_CAP))
        return out.reshape(out.shape[:-1])
