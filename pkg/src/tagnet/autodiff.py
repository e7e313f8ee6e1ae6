"""Minimal dense reverse-mode autodiff over numpy arrays, plus Adam.

Every primitive returns a :class:`Tensor` holding its forward value and a
closure that pushes the upstream gradient to its inputs. ``backward`` walks
the recorded tape in reverse topological order. Gradients accumulate across
calls until :meth:`ParamStore.zero_grad` (or :meth:`Tensor.zero_grad`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, parents=parents if req else (), backward=backward if req else None)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    def back(g):
        a._accum(g * c)

    return _node(a.data * c, (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        a._accum(g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), back)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def back(g):
        a._accum(g * sign)

    return _node(np.abs(a.data), (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        a._accum(g * out * (1.0 - out))

    return _node(out, (a,), back)


# ------------------------------------------------------------------ linear


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D or batched 3-D operands (numpy matmul semantics)."""
    a, b = constant(a), constant(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node(out, (a, b), back)


def spmm(adj, x: Tensor) -> Tensor:
    """Constant sparse (or dense) matrix times tensor; ``adj`` carries no gradient."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {adj.shape} and {x.shape}")
    adj_t = adj.T.tocsr() if sp.issparse(adj) else adj.T
    out = np.asarray(adj @ x.data)

    def back(g):
        x._accum(np.asarray(adj_t @ g))

    return _node(out, (x,), back)


def neighbor_sum(adj, x: Tensor) -> Tensor:
    """``adj @ x`` for a constant CSR ``adj`` with each output entry summed in
    sorted-term order, so the result is bitwise independent of how the
    columns (neighbours) are numbered."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"neighbor_sum: incompatible shapes {adj.shape} and {x.shape}")
    adj = sp.csr_matrix(adj)
    n = adj.shape[0]
    deg = np.diff(adj.indptr)
    width = int(deg.max()) if n and adj.nnz else 0
    rows = np.repeat(np.arange(n), deg)
    slot = np.arange(adj.nnz) - adj.indptr[rows]
    terms = np.zeros((n, width) + x.shape[1:])
    terms[rows, slot] = adj.data.reshape((-1,) + (1,) * (x.data.ndim - 1)) * x.data[adj.indices]
    terms.sort(axis=1)  # zero padding is an exact identity wherever it lands
    out = terms.sum(axis=1)
    adj_t = adj.T.tocsr()

    def back(g):
        x._accum(np.asarray(adj_t @ g))

    return _node(out, (x,), back)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""

    def back(g):
        a._accum(np.swapaxes(g, -1, -2))

    return _node(np.swapaxes(a.data, -1, -2), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def back(g):
        a._accum(g.reshape(old))

    return _node(a.data.reshape(shape), (a,), back)


# --------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        a._accum(np.broadcast_to(g, a.shape))

    return _node(np.sum(a.data), (a,), back)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.shape[axis]

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g / n, a.shape))

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def logsumexp(x: Tensor, segments=None, num_segments=None, temperature: float = 1.0) -> Tensor:
    """``t * log(sum(exp(x / t)))`` over a 1-D tensor, optionally per segment.

    With ``segments`` (an int array, one id per element) the result has one
    entry per segment id in ``range(num_segments)``.
    """
    v = x.data / temperature
    if v.ndim != 1:
        raise ShapeError(f"logsumexp: expected 1-D input, got {x.shape}")
    if segments is None:
        m = v.max()
        w = np.exp(v - m)
        s = w.sum()
        # max taken on the unscaled input so the result never rounds below it
        out = x.data.max() + temperature * np.log(s)

        def back(g):
            x._accum(g * w / s)

        return _node(out, (x,), back)

    segments = np.asarray(segments)
    if num_segments is None:
        num_segments = int(segments.max()) + 1
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, segments, v)
    w = np.exp(v - m[segments])
    s = np.zeros(num_segments)
    np.add.at(s, segments, w)
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, segments, x.data)
    out = mx + temperature * np.log(s)

    def back(g):
        x._accum(g[segments] * w / s[segments])

    return _node(out, (x,), back)


# ------------------------------------------------------------ normalisation


def row_softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get probability 0."""
    z = a.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        a._accum(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _node(out, (a,), back)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if a.requires_grad:
            gx = g * gamma.data
            d = x.shape[-1]
            a._accum(inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True)))

    return _node(out, (a, gamma, beta), back)


def l2_norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of each row (last axis). Not defined in gradient at 0."""
    n = np.sqrt((a.data * a.data).sum(axis=-1))

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            a._accum(g[..., None] * a.data / n[..., None])

    return _node(n, (a,), back)


# ----------------------------------------------------------------- indexing


def concat_axis(tensors, axis: int = -1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return _node(out, tensors, back)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        a._accum(full)

    return _node(a.data[..., start:stop], (a,), back)


def gather_rows(a: Tensor, index) -> Tensor:
    """``a[index]`` along axis 0; index -1 yields a zero row (padding)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.max() >= a.shape[0] or index.min() < -1):
        raise ShapeError(f"gather_rows: index out of range for shape {a.shape}")
    valid = index >= 0
    safe = np.where(valid, index, 0)
    out = a.data[safe]
    out[~valid] = 0.0

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, safe[valid], g[valid])
        a._accum(full)

    return _node(out, (a,), back)


# ---------------------------------------------------------------- losses


def mse_loss(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape}")
    diff = pred.data - target
    denom = diff.size if reduction == "mean" else 1.0

    def back(g):
        pred._accum(g * 2.0 * diff / denom)

    return _node(np.sum(diff * diff) / denom, (pred,), back)


def bce_loss(prob: Tensor, target, reduction: str = "mean", eps: float = 1e-12) -> Tensor:
    """Binary cross-entropy on probabilities (clipped away from 0 and 1)."""
    target = np.asarray(target, dtype=np.float64)
    if prob.shape != target.shape:
        raise ShapeError(f"bce_loss: shapes {prob.shape} and {target.shape}")
    p = np.clip(prob.data, eps, 1.0 - eps)
    denom = p.size if reduction == "mean" else 1.0
    val = -np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)) / denom

    def back(g):
        prob._accum(g * (p - target) / (p * (1.0 - p)) / denom)

    return _node(val, (prob,), back)


# ---------------------------------------------------------------- backprop


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    if loss._backward is None:
        loss._accum(np.ones_like(loss.data))
        return
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t._backward is None:
            continue
        g = t.grad
        t.grad = None  # intermediates do not retain gradients
        if g is not None:
            t._backward(g)


# --------------------------------------------------------------- optimiser


class MissingGradientError(RuntimeError):
    pass


@dataclass
class ParamStore:
    """Named trainable tensors with Adam moment buffers."""

    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, arr in state.items():
            if self.params[k].data.shape != np.shape(arr):
                raise ShapeError(f"{k}: stored shape {np.shape(arr)} != parameter shape {self.params[k].data.shape}")
            self.params[k].data = np.array(arr, dtype=np.float64, copy=True)

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                  names=None, allow_missing: bool = True) -> None:
        """One bias-corrected Adam update over ``names`` (default: all params).

        Parameters without a gradient are skipped, unless ``allow_missing`` is
        False, in which case :class:`MissingGradientError` is raised.
        """
        names = self.names() if names is None else list(names)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name in names:
            p = self.params[name]
            if p.grad is None:
                if not allow_missing:
                    raise MissingGradientError(name)
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.adam_step(lr, beta1, beta2, eps, allow_missing=False)


# ------------------------------------------------------------- grad check


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(num / den)


def gradcheck(fn, arrays, seed: int = 0, h: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor; the scalar checked is ``sum(fn(...) * R)``
    for a fixed random ``R``, which exercises every output element.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weight = np.random.default_rng(seed).normal(size=out.shape)
    backward(sum_all(mul(out, Tensor(weight))))
    worst = 0.0
    for k, a in enumerate(arrays):
        def f():
            return float(np.sum(fn(*[Tensor(x) for x in arrays]).data * weight))
        num = numeric_grad(f, a, h)
        ana = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(a)
        worst = max(worst, relative_error(ana, num))
    return worst
