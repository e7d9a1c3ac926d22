"""Small reverse-mode autodiff over numpy arrays.

Values are float32 by default. float64 inputs are carried through unchanged,
which is what the finite-difference checks use. Every op validates its output
and raises :class:`NonFiniteError` on NaN/Inf.

Matrix products accumulate sequentially along the inner axis (k = 0, 1, ...),
in the operand dtype, with no fused multiply-add. Results are therefore
bit-reproducible and equal to a naive triple loop.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def _as_array(x, dtype=None) -> np.ndarray:
    a = np.asarray(x)
    if dtype is not None:
        return a.astype(dtype, copy=False)
    if a.dtype != np.float32 and a.dtype != np.float64:
        a = a.astype(np.float32)
    return a


def _check(op: str, a: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{op}: non-finite values in output")
    return a


def seq_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with sequential accumulation along the inner axis.

    Leading (batch) axes broadcast like ``np.matmul``. Both operands must be
    at least 2-D.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    dtype = np.result_type(a, b)
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.zeros(batch + (a.shape[-2], b.shape[-1]), dtype=dtype)
    at = np.ascontiguousarray(np.moveaxis(a, -1, 0))[..., None]
    bt = np.ascontiguousarray(np.moveaxis(b, -2, 0))[..., None, :]
    for k in range(a.shape[-1]):
        out += at[k] * bt[k]
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-d array that records the ops producing it."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        self.data = _check(name or "tensor", _as_array(data, dtype))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ---- construction of tape nodes -------------------------------------
    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = _check(op, data)
        out.grad = None
        out.name = ""
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ---- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ---- backprop --------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ShapeError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): _as_array(grad, self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(pg, p.shape).astype(p.dtype, copy=False)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # ---- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return g / b.data, -g * out / b.data

    return Tensor._node(out, (a, b), backward, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return Tensor._node(
        a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),), "pow"
    )


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = seq_matmul(a.data, b.data)

    def backward(g):
        ga = seq_matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = seq_matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return Tensor._node(out, (a, b), backward, "matmul")


def _unary(a: Tensor, value: np.ndarray, dvalue: Callable[[], np.ndarray], op: str) -> Tensor:
    return Tensor._node(value, (a,), lambda g: (g * dvalue(),), op)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _unary(a, out, lambda: out, "exp")


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _unary(a, out, lambda: 0.5 / out, "sqrt")


def sin(a: Tensor) -> Tensor:
    return _unary(a, np.sin(a.data), lambda: np.cos(a.data), "sin")


def cos(a: Tensor) -> Tensor:
    return _unary(a, np.cos(a.data), lambda: -np.sin(a.data), "cos")


def arccos(a: Tensor) -> Tensor:
    """arccos; the derivative is unbounded at +-1, callers keep inputs inside."""
    return _unary(a, np.arccos(a.data), lambda: -1.0 / np.sqrt(1.0 - a.data * a.data), "arccos")


def absolute(a: Tensor) -> Tensor:
    return _unary(a, np.abs(a.data), lambda: np.sign(a.data), "abs")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda: inside.astype(a.dtype), "clip")


def relu(a: Tensor) -> Tensor:
    return _unary(a, np.maximum(a.data, 0.0).astype(a.dtype), lambda: (a.data > 0).astype(a.dtype), "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _unary(a, (x * cdf).astype(a.dtype), lambda: cdf + x * pdf, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _unary(a, out, lambda: out * (1.0 - out), "sigmoid")


# ---- reductions and shape ops --------------------------------------------

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._node(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return reduce_sum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return Tensor._node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor._node(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._node(np.array(a.data[idx]), (a,), backward, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._node(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean array."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    zero = np.zeros((), dtype=a.dtype)
    return Tensor._node(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (np.where(cond, g, zero), np.where(cond, zero, g)),
        "where",
    )


def take_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index array (embedding tables)."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._node(table.data[idx], (table,), backward, "take_rows")


def scatter_rows(values: Tensor, idx, n_rows: int) -> Tensor:
    """Zero matrix of ``n_rows`` rows with ``values`` written at rows ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_rows,) + values.shape[1:], dtype=values.dtype)
    out[idx] = values.data
    return Tensor._node(out, (values,), lambda g: (g[idx],), "scatter_rows")


# ---- normalisation -------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._node(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._node(out, (a,), backward, "log_softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    y = centered / sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


# ---- pooling --------------------------------------------------------------

def max_pool_grid(x: Tensor, rows: int, cols: int, stride: tuple[int, int] = (2, 2)) -> Tensor:
    """Non-overlapping max pool over a row-major token grid.

    ``x`` has shape ``(..., rows*cols, C)``; the result has shape
    ``(..., (rows//sr)*(cols//sc), C)``, row-major over the pooled grid.
    Ties route the gradient to the first maximal element of each window.
    """
    sr, sc = stride
    if rows % sr or cols % sc:
        raise ShapeError(f"grid {rows}x{cols} not divisible by stride {sr}x{sc}")
    if x.shape[-2] != rows * cols:
        raise ShapeError(f"expected {rows * cols} tokens, got {x.shape[-2]}")
    lead = x.shape[:-2]
    c = x.shape[-1]
    pr, pc = rows // sr, cols // sc
    nl = len(lead)
    win = x.data.reshape(lead + (pr, sr, pc, sc, c))
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    win = np.transpose(win, perm).reshape(lead + (pr * pc, sr * sc, c))
    arg = win.argmax(axis=-2)
    out = np.take_along_axis(win, arg[..., None, :], axis=-2)[..., 0, :]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None, :], g[..., None, :], axis=-2)
        gw = gw.reshape(lead + (pr, pc, sr, sc, c))
        inv = tuple(np.argsort(perm))
        return (np.transpose(gw, inv).reshape(x.shape),)

    return Tensor._node(out, (x,), backward, "max_pool_grid")
