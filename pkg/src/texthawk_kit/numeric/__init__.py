from .gradcheck import finite_diff_grad, relative_error
from .rng import Rng
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    relu,
    seq_matmul,
    sigmoid,
    softmax,
)

__all__ = [
    "NonFiniteError",
    "Rng",
    "ShapeError",
    "Tensor",
    "finite_diff_grad",
    "gelu",
    "layer_norm",
    "log_softmax",
    "matmul",
    "relative_error",
    "relu",
    "seq_matmul",
    "sigmoid",
    "softmax",
]
