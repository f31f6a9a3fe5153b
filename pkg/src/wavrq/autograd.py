"""Reverse-mode automatic differentiation over numpy arrays.

A tensor wraps an ndarray plus the vector-Jacobian products needed to
backpropagate to its parents. The op set is the minimum the model needs:
elementwise arithmetic with broadcasting, matmul, reshapes, reductions,
normalization, activations, softmax/log-softmax, strided 1-D convolution,
embedding lookup, and a few gather ops for the masked loss. Everything is
dtype-preserving so the same graph runs in float32 for training and
float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "matmul",
    "reshape",
    "permute",
    "tsum",
    "tmean",
    "normalize",
    "gelu",
    "sigmoid",
    "softmax",
    "log_softmax",
    "conv1d",
    "embedding",
    "select_positions",
    "take_labels",
    "dropout",
]


class Tensor:
    """An ndarray with an optional backward graph attached."""

    __slots__ = ("data", "grad", "requires_grad", "_vjps")

    def __init__(self, data, vjps=(), requires_grad=False):
        self.data = np.asarray(data)
        self._vjps = vjps  # tuple of (parent, fn: grad_out -> grad_parent)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in vjps)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients into every reachable tensor with requires_grad."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._vjps:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node._vjps:
                if not parent.requires_grad:
                    continue
                g = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # Operator sugar. Non-tensor operands become constants.
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    t = Tensor(np.asarray(data))
    t.requires_grad = True
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(out, vjps=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return Tensor(out, vjps=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor(out, vjps=(
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def matmul(a, b) -> Tensor:
    """Batched matrix product; operands must be >= 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def da(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def db(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return Tensor(out, vjps=((a, da), (b, db)))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    return Tensor(x.data.reshape(shape), vjps=((x, lambda g: g.reshape(old)),))


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return Tensor(x.data.transpose(axes), vjps=((x, lambda g: g.transpose(inv)),))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True)

    return Tensor(out, vjps=((x, vjp),))


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        n = x.data.shape[axis]
    s = tsum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


def normalize(x, axis=-1, eps=1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along one axis; affine terms live outside."""
    x = as_tensor(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.data.shape[axis]

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return inv * (g - gm - xhat * gx)

    return Tensor(xhat, vjps=((x, vjp),))


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return g * (cdf + x.data * pdf)

    return Tensor(out.astype(x.data.dtype, copy=False), vjps=((x, vjp),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def vjp(g):
        return g * y * (1.0 - y)

    return Tensor(y.astype(x.data.dtype, copy=False), vjps=((x, vjp),))


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    return Tensor(y, vjps=((x, vjp),))


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def vjp(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return Tensor(out, vjps=((x, vjp),))


def conv1d(x, w, stride: int) -> Tensor:
    """Valid-mode strided 1-D convolution (cross-correlation), no bias.

    x: (B, C_in, L), w: (C_out, C_in, K) -> (B, C_out, L_out) with
    L_out = (L - K) // stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    b, c_in, length = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    if length < k:
        raise ValueError("input shorter than receptive field")
    l_out = (length - k) // stride + 1
    # (B, C_in, L_out, K) windows, materialized once for the GEMM.
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b * l_out, c_in * k)
    wmat = w.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(b, l_out, c_out).transpose(0, 2, 1)

    def dw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * l_out, c_out)
        return (g2.T @ cols).reshape(c_out, c_in, k)

    def dx(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * l_out, c_out)
        dcols = (g2 @ wmat).reshape(b, l_out, c_in, k).transpose(0, 2, 1, 3)
        grad = np.zeros_like(x.data)
        pos = stride * np.arange(l_out)
        for j in range(k):
            grad[:, :, pos + j] += dcols[:, :, :, j]
        return grad

    return Tensor(np.ascontiguousarray(out), vjps=((x, dx), (w, dw)))


def embedding(table, idx: np.ndarray) -> Tensor:
    """Row lookup table[idx]; idx is a constant integer array."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = table.data[idx]

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        return grad

    return Tensor(out, vjps=((table, vjp),))


def select_positions(x, b_idx: np.ndarray, t_idx: np.ndarray) -> Tensor:
    """Gather rows x[b_idx[i], t_idx[i], :] from a (B, T, D) tensor."""
    x = as_tensor(x)
    out = x.data[b_idx, t_idx]

    def vjp(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, (b_idx, t_idx), g)
        return grad

    return Tensor(out, vjps=((x, vjp),))


def take_labels(x, labels: np.ndarray) -> Tensor:
    """Pick x[i, labels[i]] from a (N, V) tensor."""
    x = as_tensor(x)
    n = x.data.shape[0]
    rows = np.arange(n)
    out = x.data[rows, labels]

    def vjp(g):
        grad = np.zeros_like(x.data)
        grad[rows, labels] = g
        return grad

    return Tensor(out, vjps=((x, vjp),))


def dropout(x, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no rng is supplied (eval)."""
    x = as_tensor(x)
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, keep)
