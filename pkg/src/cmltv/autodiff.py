"""Small reverse-mode automatic differentiation engine over float64 numpy arrays.

Every operation records a node on a dynamic tape.  ``Tensor.backward`` walks
the nodes reachable from a scalar root in exact reverse creation order and
accumulates gradients additively into every tracked leaf.

Forward results are checked for NaN/Inf; a non-finite value raises
:class:`NonFiniteError` instead of propagating silently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "BNState",
    "DimensionError",
    "DomainError",
    "NonFiniteError",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "matmul",
    "relu",
    "sigmoid",
    "softplus",
    "softmax",
    "log",
    "exp",
    "square",
    "clip",
    "sum",
    "mean",
    "concat_rows",
    "slice_rows",
    "take",
    "lgamma",
    "lgamma_tensor",
    "digamma",
    "batchnorm",
    "stable_sigmoid",
    "stable_softplus",
]

_order = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Argument lies outside the function's domain."""


class NonFiniteError(FloatingPointError):
    """A forward or backward computation produced NaN or Inf."""


class Tensor:
    """Dense float64 array that may participate in a recorded graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_order")
    # make ndarray <op> Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._order = next(_order)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if self.data.size != 1:
            raise DimensionError(f"backward requires a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = _reachable(self)
        nodes.sort(key=lambda t: t._order, reverse=True)
        grads = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(f"non-finite gradient flowing into {parent!r}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _reachable(root: Tensor) -> list:
    seen = set()
    out = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    return out


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._order = next(_order)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting; bias add is add with a row vector)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _node(out, (a, b), backward, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


# ---------------------------------------------------------------------------
# nonlinearities


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def stable_softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    out = stable_softplus(x.data)
    return _node(out, (x,), lambda g: (g * stable_sigmoid(x.data),), "softplus")


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax expects an n x C tensor with C >= 1, got {x.shape}")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _node(s, (x,), backward, "softmax")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def clip(x: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clamp values; the gradient is zero wherever the clamp is active."""
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (x.data >= lo_) & (x.data <= hi_)
    return _node(np.clip(x.data, lo_, hi_), (x,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# reductions and indexing


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return scale(sum(x, axis), 1.0 / n)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [_lift(p) for p in parts]
    if len({p.shape[1:] for p in parts}) > 1:
        raise DimensionError(f"concat_rows: trailing shapes differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, backward, "concat_rows")


def take(x: Tensor, index) -> Tensor:
    """Numpy-style indexing; gradients scatter-add back to the source."""
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(np.array(x.data[index]), (x,), backward, "take")


def slice_rows(x: Tensor, rows) -> Tensor:
    """Select rows by slice, integer index array or boolean mask."""
    if isinstance(rows, np.ndarray) and rows.dtype == bool:
        rows = np.flatnonzero(rows)
    return take(x, rows)


# ---------------------------------------------------------------------------
# log-gamma (Lanczos, g=7, 9 coefficients)

_LANCZOS_G = 7.0
_LANCZOS = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lanczos_parts(x: np.ndarray):
    # x >= 0.5; returns log Gamma(x) and digamma(x)
    xm = x - 1.0
    k = np.arange(1, len(_LANCZOS))
    denom = xm[..., None] + k
    a = _LANCZOS[0] + (_LANCZOS[1:] / denom).sum(axis=-1)
    da = -(_LANCZOS[1:] / (denom * denom)).sum(axis=-1)
    t = xm + _LANCZOS_G + 0.5
    logt = np.log(t)
    value = _HALF_LOG_2PI + (xm + 0.5) * logt - t + np.log(a)
    deriv = logt + (xm + 0.5) / t - 1.0 + da / a
    return value, deriv


def _lgamma_digamma(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("lgamma is defined here for x > 0 only")
    small = x < 0.5
    xr = np.where(small, 1.0 - x, x)
    value, deriv = _lanczos_parts(xr)
    if np.any(small):
        s = np.sin(np.pi * x)
        value = np.where(small, np.log(np.pi / np.abs(s)) - value, value)
        deriv = np.where(small, deriv - np.pi * np.cos(np.pi * x) / s, deriv)
    return value, deriv


def lgamma(x):
    """log Gamma(x) for x > 0; scalars give a float, arrays give an array."""
    value, _ = _lgamma_digamma(np.asarray(x, dtype=np.float64))
    return float(value) if np.ndim(value) == 0 else value


def digamma(x):
    _, deriv = _lgamma_digamma(np.asarray(x, dtype=np.float64))
    return float(deriv) if np.ndim(deriv) == 0 else deriv


def lgamma_tensor(x: Tensor) -> Tensor:
    value, deriv = _lgamma_digamma(x.data)
    return _node(value, (x,), lambda g: (g * deriv,), "lgamma")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BNState:
    """Learnable scale/shift plus running statistics for one normalized layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, dim: int, name: str = "bn") -> "BNState":
        return cls(
            gamma=Tensor(np.ones(dim), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(dim), requires_grad=True, name=f"{name}.beta"),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
        )


def batchnorm(x: Tensor, state: BNState, training: bool) -> Tensor:
    """Normalize columns of an n x d tensor.

    Training mode uses batch statistics (biased variance) and folds them into
    the running averages, with the unbiased variance estimate for the running
    variance.  Eval mode uses the running statistics only.
    """
    if x.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise DimensionError(f"batchnorm: expected n x {state.gamma.shape[0]}, got {x.shape}")
    n = x.shape[0]
    gamma, beta = state.gamma, state.beta
    if training:
        if n < 2:
            raise DimensionError("batchnorm in training mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var * n / (n - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        if training:
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), backward, "batchnorm")
