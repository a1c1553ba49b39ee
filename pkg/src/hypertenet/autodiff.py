"""Dense numpy tensors with reverse-mode automatic differentiation.

Every op records a closure that maps the output gradient to input
gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order, accumulates into leaf ``.grad`` buffers, then drops
the graph so intermediate activations can be freed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

_DTYPE = np.float32
_GRAD_ENABLED = True


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class ContractError(RuntimeError):
    pass


def get_default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the precision of newly created tensors (64-bit for gradient checks)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes (frozen-parameter inference)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.array(data, dtype=dtype or _DTYPE, copy=True)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self.name = name

    # construction helpers -------------------------------------------------

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{rg})"

    # autodiff -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
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
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_DTYPE))


def _result(op: str, data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite value produced")
    out = Tensor._wrap(data)
    out._op = op
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def scatter_rows(n_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[j]] += values[j]`` for 2-D ``values``; a sparse product beats ``np.add.at``."""
    index = np.asarray(index).reshape(-1)
    m = len(index)
    sel = sparse.csr_matrix((np.ones(m, dtype=values.dtype), (index, np.arange(m))), shape=(n_rows, m))
    return np.asarray(sel @ values)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(a: Tensor) -> Tensor:
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _result("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Write ``value`` where ``mask`` is true; masked positions get zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise DimensionError(f"masked_fill: mask {mask.shape} vs input {a.shape}") from None
    out = np.where(mask, a.data.dtype.type(value), a.data)
    return _result("masked_fill", out, (a,), lambda g: (np.where(mask, 0.0, g).astype(g.dtype),))


def dropout(a: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate) so eval mode is the identity."""
    if not train or rate <= 0.0:
        return a
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return _result("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# reductions and shape -----------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result("mean", np.asarray(out), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _result("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


# linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", out, (a, b), backward)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"embedding: index out of range for table with {n} rows")

    def backward(g):
        return (scatter_rows(n, idx, g.reshape(-1, table.shape[-1])),)

    return _result("embedding", table.data[idx], (table,), backward)


def neighbor_aggregate(x: Tensor, neighbors: np.ndarray, weights: np.ndarray) -> Tensor:
    """``out[r] = sum_k weights[r, k] * x[neighbors[r, k]]`` over a fixed sparse pattern."""
    nb = np.asarray(neighbors, dtype=np.int64)
    w = np.asarray(weights, dtype=x.data.dtype)
    if nb.shape != w.shape or nb.ndim != 2:
        raise DimensionError(f"neighbor_aggregate: neighbors {nb.shape} vs weights {w.shape}")
    out = np.einsum("rk,rkd->rd", w, x.data[nb])

    def backward(g):
        return (scatter_rows(x.shape[0], nb, (w[:, :, None] * g[:, None, :]).reshape(-1, x.shape[-1])),)

    return _result("neighbor_aggregate", out, (x,), backward)


# normalisation ------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (a,), backward)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean and unit (biased) variance along ``axis``; no affine part."""
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = a.shape[axis]

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result("layer_norm", xhat, (a,), backward)


# losses -------------------------------------------------------------------

PROB_EPS = 1e-7


def binary_cross_entropy(probs: Tensor, labels, weights=None) -> Tensor:
    """Summed BCE ``-sum w * [y ln p + (1-y) ln(1-p)]`` with p clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(labels, dtype=probs.data.dtype)
    if y.shape != probs.shape:
        raise DimensionError(f"binary_cross_entropy: labels {y.shape} vs probs {probs.shape}")
    p = clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    terms = mul(_as_tensor(y), log(p)) + mul(_as_tensor(1.0 - y), log(1.0 - p))
    if weights is not None:
        terms = mul(terms, _as_tensor(np.asarray(weights, dtype=probs.data.dtype)))
    return -sum_(terms)
