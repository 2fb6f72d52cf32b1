"""Array-level reverse-mode autodiff on numpy.

A :class:`Tensor` wraps an ``ndarray`` and, when gradients are enabled and
one of its inputs requires them, remembers how it was produced. Calling
``loss.backward()`` walks the recorded graph once in reverse topological
order. Every primitive here has a hand-written vector-Jacobian product;
:func:`check_gradients` compares those against central differences.

Primitives keep the dtype of their inputs, so a model built in float64 is
checked in float64 and a model built in float32 trains in float32.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GradientCheckError, InvalidInputError, InvalidMaskError, NumericError

# exp() of (this - row max) is exactly 0.0 in both float32 and float64
MASK_VALUE = -1.0e9
LN_EPS = 1e-5

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{', grad' if self.requires_grad else ''})"

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise InvalidInputError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, copy=True)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.ndim(x) == 0:
        # plain scalars adopt the other operand's dtype instead of float64
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _result(np.where(keep, a.data, 0), (a,), lambda g: (g * keep,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),))


def total(a: Tensor) -> Tensor:
    return _result(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


# ---------------------------------------------------------------- shape

def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a 2-D tensor; output shape is ``index.shape + (cols,)``.

    Used both for embedding lookup and for assembling padded batches from a
    flat pool of rows.
    """
    index = np.asarray(index, dtype=np.intp)
    if table.ndim != 2:
        raise InvalidInputError("take_rows expects a 2-D table")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise InvalidInputError("row index out of range")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index.ravel(), g.reshape(-1, table.shape[1]))
        return (out,)

    return _result(table.data[index], (table,), backward)


embedding = take_rows


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data @ b.data

    def backward(g):
        if b.ndim == 2 and a.ndim > 2:
            # (..., n, k) @ (k, m): fold the batch dims into one GEMM per side
            a2 = a.data.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ b.data.T, a2.T @ g2)
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _result(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- normalisers

def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    x = _wrap(x)
    if x.data.size == 0 or x.ndim == 0:
        raise InvalidInputError("softmax_rows needs a non-empty tensor with at least one column")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.shape[-1]
    if d < 2:
        raise InvalidInputError(f"layer_norm needs at least 2 features, got {d}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise InvalidInputError("gamma and beta must have shape (D,)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _result(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------- attention

def masked_attention(q, k, v, allow, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention restricted to ``allow[i, j]`` pairs.

    ``q``, ``k``, ``v`` have shape ``(..., T, D)``; ``allow`` is a boolean
    array broadcastable to ``(..., T, T)``. Disallowed pairs receive exactly
    zero weight.
    """
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    allow = np.asarray(allow, dtype=bool)
    t = q.shape[-2]
    if allow.shape[-2:] != (t, k.shape[-2]):
        raise InvalidMaskError(f"mask shape {allow.shape} does not match {t}x{k.shape[-2]}")
    if not allow.any(axis=-1).all():
        raise InvalidMaskError("attention mask has a row with no allowed positions")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    s = np.where(allow, s, MASK_VALUE).astype(q.dtype, copy=False)
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def backward(g):
        dv = np.swapaxes(p, -1, -2) @ g
        dp = g @ np.swapaxes(v.data, -1, -2)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        ds *= scale
        dq = ds @ k.data
        dk = np.swapaxes(ds, -1, -2) @ q.data
        return (dq, dk, dv)

    return _result(out, (q, k, v), backward)


# ---------------------------------------------------------------- loss

def slot_cross_entropy(logits, targets, mask) -> Tensor:
    """Mean negative log-likelihood over positions where ``mask`` is true.

    Only the selected rows enter the computation, so logits elsewhere can
    take any value without changing the loss or receiving gradient.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    c = logits.shape[-1]
    if mask.shape != logits.shape[:-1] or targets.shape != mask.shape:
        raise InvalidInputError("logits, targets and mask disagree in shape")
    rows = np.flatnonzero(mask.ravel())
    if rows.size == 0:
        raise InvalidInputError("slot_cross_entropy needs at least one masked position")
    t = targets.ravel()[rows].astype(np.intp)
    if t.min() < 0 or t.max() >= c:
        raise InvalidInputError(f"target index outside [0, {c})")
    flat = logits.data.reshape(-1, c)
    sel = flat[rows]
    z = sel - sel.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(rows.size), t]
    n = rows.size
    loss = nll.mean()

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), t] -= 1
        out = np.zeros_like(flat)
        out[rows] = p * (g / n)
        return (out.reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------- parameters

class Param(Tensor):
    """Trainable leaf tensor; ``grad`` always exists and matches ``data``."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie strictly between 0 and 1")
        if self.eps <= 0:
            raise InvalidInputError("Adam eps must be positive")
        if self.m.shape != self.v.shape:
            raise InvalidInputError("Adam moments disagree in shape")

    @classmethod
    def for_param(cls, p: Param, **hyper) -> "AdamState":
        return cls(np.zeros_like(p.data), np.zeros_like(p.data), **hyper)


def adam_step(params: Sequence[Param], states: Sequence[AdamState]) -> None:
    """One bias-corrected Adam update in place; zeroes every grad afterwards."""
    if len(params) != len(states):
        raise InvalidInputError("one AdamState per Param is required")
    counts = {s.step_count for s in states}
    if len(counts) > 1:
        raise InvalidInputError(f"inconsistent Adam step counts {sorted(counts)}")
    for p, s in zip(params, states):
        if p.grad.shape != p.data.shape or s.m.shape != p.data.shape:
            raise InvalidInputError(f"shape mismatch for parameter {p.name!r}")
    for p, s in zip(params, states):
        g = p.grad
        s.step_count += 1
        s.m *= s.beta1
        s.m += (1 - s.beta1) * g
        s.v *= s.beta2
        s.v += (1 - s.beta2) * (g * g)
        mhat = s.m / (1 - s.beta1 ** s.step_count)
        vhat = s.v / (1 - s.beta2 ** s.step_count)
        p.data -= (s.lr * mhat / (np.sqrt(vhat) + s.eps)).astype(p.dtype, copy=False)
        p.zero_grad()


class Adam:
    def __init__(self, params: Iterable[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
                       for p in self.params]

    @property
    def step_count(self) -> int:
        return self.states[0].step_count if self.states else 0

    def set_lr(self, lr: float) -> None:
        for s in self.states:
            s.lr = lr

    def step(self) -> None:
        adam_step(self.params, self.states)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: Sequence[Param], max_norm: float) -> float:
    norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= factor
    return norm


# ---------------------------------------------------------------- gradient check

def check_gradients(f: Callable[[Tensor], Tensor], point, tol: float | None = None,
                    h: float = 1e-4) -> float:
    """Max relative error between backprop and central differences.

    ``point`` is either an array (wrapped in a fresh float64 leaf) or an
    existing trainable tensor, which is perturbed in place and restored;
    the latter lets ``f`` close over a model that owns the parameter.
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    When ``tol`` is given, exceeding it raises :class:`GradientCheckError`.
    """
    if isinstance(point, Tensor) and point.requires_grad:
        x = point
    else:
        x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    if isinstance(x, Param):
        x.zero_grad()
    else:
        x.grad = None
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("function value is not finite at the check point")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad, copy=True)
    if isinstance(x, Param):
        x.zero_grad()

    numeric = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"function value not finite near coordinate {i}")
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    err = float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)))) if x.data.size else 0.0
    if tol is not None and err > tol:
        raise GradientCheckError(f"max relative gradient error {err:.3e} exceeds {tol:.1e}")
    return err
