"""A small define-by-run reverse-mode autodiff over float64 numpy arrays.

Only the operations the trajectory networks need are provided. Heavier
kernels (affine maps, layer norm, multi-head attention) are fused so the
graph of one training step stays a few hundred nodes.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward_fn: Callable) -> Tensor:
    """Create an op output; attach graph links only when some parent needs them."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaf gradients accumulate across calls until zeroed.
    """
    if grad is None:
        if root.data.size != 1:
            raise ValueError("backward() without a seed gradient needs a scalar root")
        grad = np.ones_like(root.data)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _make(np.mean(x.data), (x,),
                 lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    data = np.concatenate([x.data for x in xs], axis=axis)
    ax = axis % data.ndim
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(data, tuple(xs), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # exp of -|x| keeps both branches overflow-free
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU, tanh approximation. Smooth, so finite differences agree with it."""
    x = as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v * v * v)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# fused kernels


def linear(x, W, b=None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``; ``W`` is (in, out)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} does not match weight {W.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ W.data).reshape(x.shape[:-1] + (W.shape[1],))
    parents: tuple = (x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ValueError(f"linear: bias shape {b.shape} does not match weight {W.shape}")
        out = out + b.data
        parents = (x, W, b)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return _make(out, parents, bw)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    parents: tuple = (x,)
    if gamma is not None:
        gamma, beta = as_tensor(gamma), as_tensor(beta)
        out = xhat * gamma.data + beta.data
        parents = (x, gamma, beta)
    n = x.shape[-1]

    def bw(g):
        lead = g.reshape(-1, n)
        if gamma is not None:
            gxhat = g * gamma.data
        else:
            gxhat = g
        gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        if gamma is None:
            return (gx,)
        return gx, (lead * xhat.reshape(-1, n)).sum(axis=0), lead.sum(axis=0)

    return _make(out, parents, bw)


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_attention(Q, K, V, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention without masking.

    Inputs are ``(T, D)`` or ``(B, T, D)``; each head attends over width
    ``D // heads`` and head outputs are concatenated back to ``D``.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if not (Q.shape == K.shape == V.shape):
        raise ValueError(f"attention: Q/K/V shapes differ {Q.shape} {K.shape} {V.shape}")
    D = Q.shape[-1]
    if heads < 1 or D % heads:
        raise ValueError(f"attention: width {D} not divisible by {heads} heads")
    dh = D // heads
    lead = Q.shape[:-2]
    T = Q.shape[-2]
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        # (..., T, D) -> (..., h, T, dh)
        return np.swapaxes(a.reshape(lead + (T, heads, dh)), -2, -3)

    def merge(a):
        return np.swapaxes(a, -2, -3).reshape(lead + (T, D))

    q, k, v = split(Q.data), split(K.data), split(V.data)
    P = _softmax(q @ np.swapaxes(k, -1, -2) * scale)
    out = merge(P @ v)

    def bw(g):
        go = split(g)
        gv = np.swapaxes(P, -1, -2) @ go
        gP = go @ np.swapaxes(v, -1, -2)
        gS = P * (gP - (gP * P).sum(axis=-1, keepdims=True)) * scale
        gq = gS @ k
        gk = np.swapaxes(gS, -1, -2) @ q
        return merge(gq), merge(gk), merge(gv)

    return _make(out, (Q, K, V), bw)


def attention_weights(Q, K, heads: int) -> np.ndarray:
    """Softmax weights of :func:`softmax_attention` (inspection only, no graph)."""
    Q, K = as_tensor(Q).data, as_tensor(K).data
    D = Q.shape[-1]
    dh = D // heads
    lead, T = Q.shape[:-2], Q.shape[-2]
    q = np.swapaxes(Q.reshape(lead + (T, heads, dh)), -2, -3)
    k = np.swapaxes(K.reshape(lead + (T, heads, dh)), -2, -3)
    return _softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(dh))


def mse(a, b) -> Tensor:
    return mean_all(square(sub(a, b)))


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Ordered, uniquely named parameter tensors with paired gradients."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters the graph never reached get zeros."""
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for n, p in self._params.items()}

    def size(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for n, p in self._params.items():
            value = np.asarray(state[n], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {n}: {value.shape} vs {p.data.shape}")
            p.data = value.copy()
            p.grad = None

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, p in self._params.items():
            out.add(n, p.data)
        return out


def finite_diff_check(f: Callable[[], Tensor], params: ParamStore, h: float = 1e-5,
                      floor: float = 1e-6) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values. The
    relative error of each entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params.zero_grad()
    backward(f())
    analytic = params.grads()
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(f().data)
                flat[i] = orig - h
                down = float(f().data)
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                a = float(analytic[name].reshape(-1)[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    params.zero_grad()
    return worst
