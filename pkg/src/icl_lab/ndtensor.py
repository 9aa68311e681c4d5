"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a fresh :class:`Tensor`; the computation graph is the
tape, recorded implicitly through parent links and per-node backward closures.
``backward(loss)`` materializes the tape in topological order and accumulates
gradients into every reachable tensor with ``requires_grad=True``.

Conventions:
  * float64 everywhere (closed-form equivalence tests need 1e-12 headroom),
  * tensors are treated as immutable once created; the only sanctioned
    mutation is an optimizer rewriting leaf ``data`` between graph builds,
  * elementwise ops require identical shapes (scalars excepted); matmul
    additionally accepts stacked leading batch dimensions,
  * row-wise ops (softmax, l1 normalization, layer norm) act along the last
    axis.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

Scalar = Union[int, float]

L1_NORM_EPS = 1e-12
LAYER_NORM_EPS = 1e-5

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class Tensor:
    """A dense float64 array plus its position in the differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ----------------------------------------------------

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
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not provided; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(data, requires_grad=False)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def toposort(root: Tensor) -> list:
    """The tape: every node's inputs precede it, ending at ``root``."""
    order: list = []
    seen = set()
    # iterative DFS; construction order makes the result deterministic
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients of every reachable tensor are zeroed first, so repeated calls
    on the same tape are bit-identical. After the sweep, each reachable
    tensor with ``requires_grad`` holds d(loss)/d(tensor) in ``.grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = toposort(loss)
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- elementwise and scalar arithmetic --------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of leading-dim broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # identical shapes, or one side is a scalar; nothing broader
    if a.shape == b.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(out, (a, b), "add", bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(out, (a, b), "sub", bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), "mul", bwd)


# -- linear algebra ----------------------------------------------------------


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Accepts plain 2-d operands and stacked operands whose leading dimensions
    broadcast (e.g. ``(B, m, k) @ (k, n)``); gradients are summed back over
    any broadcast leading axes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ _swap_last(b.data), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(_swap_last(a.data) @ g, b.shape))

    return _result(out, (a, b), "matmul", bwd)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: needs at least 2 dimensions, got {a.shape}")
    out = _swap_last(a.data).copy()

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_swap_last(g))

    return _result(out, (a,), "transpose", bwd)


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing; gradients scatter back into place."""
    a = _as_tensor(a)
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    else:
        out = out.copy()

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[key] += g
            a._accumulate(buf)

    return _result(out, (a,), "index", bwd)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; gradients split back by size."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return _result(out, parts, "concat", bwd)


# -- reductions and loss ------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(out, (a,), "sum", bwd)


def tmean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = np.asarray(a.data.mean())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g / n, a.shape).copy())

    return _result(out, (a,), "mean", bwd)


def squared_error(pred: Tensor, target) -> Tensor:
    """Mean of elementwise squared differences."""
    diff = sub(pred, target)
    return tmean(mul(diff, diff))


# -- activations --------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            # derivative at exactly 0 is taken to be 0
            a._accumulate(g * (a.data > 0.0))

    return _result(out, (a,), "relu", bwd)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GeLU, x * Phi(x) (not the tanh approximation)."""
    a = _as_tensor(a)
    cdf = ndtr(a.data)
    out = a.data * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
            a._accumulate(g * (cdf + a.data * pdf))

    return _result(out, (a,), "gelu", bwd)


# -- row-wise maps (last axis) ------------------------------------------------


def row_l1_normalize(a: Tensor) -> Tensor:
    """Divide each row by max(sum |row|, 1e-12).

    The epsilon guard keeps zero rows at zero and the map total; rows whose
    l1 mass exceeds the guard come out with unit l1 norm.
    """
    a = _as_tensor(a)
    s = np.sum(np.abs(a.data), axis=-1, keepdims=True)
    denom = np.maximum(s, L1_NORM_EPS)
    out = a.data / denom

    def bwd(g):
        if a.requires_grad:
            active = (s > L1_NORM_EPS).astype(np.float64)
            inner = np.sum(g * a.data, axis=-1, keepdims=True)
            a._accumulate(g / denom - active * np.sign(a.data) * inner / (denom * denom))

    return _result(out, (a,), "row_l1_normalize", bwd)


def row_softmax(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-stochastic softmax along the last axis, overflow-safe.

    ``mask`` is a boolean array (broadcastable to ``a.shape``) marking entries
    to exclude; excluded entries come out exactly 0. A fully masked row is
    all-zero by convention.
    """
    a = _as_tensor(a)
    x = a.data
    if mask is not None:
        excl = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(excl, -np.inf, x)
    with np.errstate(invalid="ignore"):
        rowmax = np.max(x, axis=-1, keepdims=True)
        shift = np.where(np.isfinite(rowmax), rowmax, 0.0)
        e = np.exp(x - shift)
    e = np.where(np.isfinite(e), e, 0.0)
    denom = np.sum(e, axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0.0)

    def bwd(g):
        if a.requires_grad:
            inner = np.sum(g * out, axis=-1, keepdims=True)
            a._accumulate(out * (g - inner))

    return _result(out, (a,), "row_softmax", bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    k = a.shape[-1]
    if gamma.shape != (k,) or beta.shape != (k,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({k},), got {gamma.shape} and {beta.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, k).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, k).sum(axis=0))
        if a.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (dxhat - m1 - xhat * m2))

    return _result(out, (a, gamma, beta), "layer_norm", bwd)
