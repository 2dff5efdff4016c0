"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: exactly the primitives the set encoder, the classifier MLP
and the loss heads need, with explicit backward rules per op. Every tensor
is checked for NaN/Inf at construction, so a non-finite value surfaces at
the op that produced it rather than three layers later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_PROB_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values produced by op '{_op}'")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(np.asarray(self.data).item())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph traversal ---------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; fills .grad on reachable leaves."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(_as_tensor(-1.0), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _broadcastable(a: tuple, b: tuple) -> bool:
    try:
        np.broadcast_shapes(a, b)
        return True
    except ValueError:
        return False


# -- elementwise and linear ops --------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("add", a.shape, b.shape)
    out = Tensor(a.data + b.data, _parents=(a, b), _op="add")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = back if out.requires_grad else None
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("sub", a.shape, b.shape)
    out = Tensor(a.data - b.data, _parents=(a, b), _op="sub")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    out._backward = back if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("mul", a.shape, b.shape)
    out = Tensor(a.data * b.data, _parents=(a, b), _op="mul")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = back if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = back if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,), _op="relu")

    def back(g):
        a._accumulate(g * (a.data > 0.0))

    out._backward = back if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, _parents=(a,), _op="sigmoid")

    def back(g):
        a._accumulate(g * y * (1.0 - y))

    out._backward = back if out.requires_grad else None
    return out


def softmax(a: Tensor) -> Tensor:
    """Row softmax (last axis), computed with max-subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, _parents=(a,), _op="softmax")

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accumulate(y * (g - dot))

    out._backward = back if out.requires_grad else None
    return out


def mean_pool(a: Tensor) -> Tensor:
    """Mean over rows of a 2-D tensor; the permutation-invariant set pool."""
    if a.data.ndim != 2:
        raise ShapeError("mean_pool", a.shape)
    n = a.shape[0]
    out = Tensor(a.data.mean(axis=0), _parents=(a,), _op="mean_pool")

    def back(g):
        a._accumulate(np.broadcast_to(g / n, a.shape).copy())

    out._backward = back if out.requires_grad else None
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    try:
        cat = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    out = Tensor(cat, _parents=tuple(parts), _op="concat")
    sizes = [d.shape[axis] for d in datas]

    def back(g):
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            if p.requires_grad:
                p._accumulate(g[tuple(sl)])
            offset += size

    out._backward = back if out.requires_grad else None
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), _parents=(a,), _op="sum")

    def back(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    out._backward = back if out.requires_grad else None
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), _parents=(a,), _op="mean")

    def back(g):
        a._accumulate(np.broadcast_to(g / n, a.shape).copy())

    out._backward = back if out.requires_grad else None
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.shape, shape)
    out = Tensor(a.data.reshape(shape), _parents=(a,), _op="reshape")

    def back(g):
        a._accumulate(g.reshape(a.shape))

    out._backward = back if out.requires_grad else None
    return out


def min_zero(a: Tensor) -> Tensor:
    """Elementwise min(x, 0); the negative part used by the OT penalty."""
    out = Tensor(np.minimum(a.data, 0.0), _parents=(a,), _op="min_zero")

    def back(g):
        a._accumulate(g * (a.data < 0.0))

    out._backward = back if out.requires_grad else None
    return out


# -- loss ops ---------------------------------------------------------------


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff), _parents=(pred, target), _op="mse")
    n = max(pred.data.size, 1)

    def back(g):
        if pred.requires_grad:
            pred._accumulate(g * 2.0 * diff / n)
        if target.requires_grad:
            target._accumulate(-g * 2.0 * diff / n)

    out._backward = back if out.requires_grad else None
    return out


def bce(prob: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross entropy on probabilities, clamped away from {0, 1}."""
    if prob.shape != target.shape:
        raise ShapeError("bce", prob.shape, target.shape)
    p = np.clip(prob.data, _PROB_EPS, 1.0 - _PROB_EPS)
    t = target.data
    out = Tensor(np.mean(-t * np.log(p) - (1.0 - t) * np.log(1.0 - p)), _parents=(prob, target), _op="bce")
    n = max(p.size, 1)

    def back(g):
        if prob.requires_grad:
            inside = (prob.data > _PROB_EPS) & (prob.data < 1.0 - _PROB_EPS)
            prob._accumulate(g * inside * (p - t) / (p * (1.0 - p)) / n)

    out._backward = back if out.requires_grad else None
    return out


def bce_logits(logit: Tensor, target: Tensor) -> Tensor:
    """Mean BCE on logits: softplus(z) - t*z, stable for large |z|."""
    if logit.shape != target.shape:
        raise ShapeError("bce_logits", logit.shape, target.shape)
    z, t = logit.data, target.data
    loss = np.logaddexp(0.0, z) - t * z
    out = Tensor(np.mean(loss), _parents=(logit, target), _op="bce_logits")
    n = max(z.size, 1)
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def back(g):
        if logit.requires_grad:
            logit._accumulate(g * (p - t) / n)

    out._backward = back if out.requires_grad else None
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross entropy against integer class labels."""
    if logits.data.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError("cross_entropy", logits.shape, (len(labels),))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    out = Tensor(np.mean(lse - z[rows, labels]), _parents=(logits,), _op="cross_entropy")
    n = len(labels)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)

    def back(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        logits._accumulate(g * grad / n)

    out._backward = back if out.requires_grad else None
    return out


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-3, **kw) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        return cls(
            lr=lr,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **kw,
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step", (len(params),), (len(grads),), (len(state.m),))
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", p.data.shape, g.shape)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def grads_for(loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
    """Run backward and collect per-param gradients (zeros if unreachable)."""
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
