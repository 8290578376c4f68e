"""Small dense-tensor engine with reverse-mode automatic differentiation.

Every primitive records its inputs and a vector-Jacobian product; calling
:func:`backward` on a scalar walks the recorded graph in reverse creation
order, which is a valid topological order.

Forward matrix products go through a fixed-order kernel so that each output
row depends only on the matching input row. BLAS picks different micro-kernels
depending on the matrix shape, which breaks bit-exact locality checks.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numba
import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ContractError",
    "NumericalFault",
    "as_tensor",
    "set_default_dtype",
    "get_default_dtype",
    "set_checked",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "max_reduce",
    "mean",
    "sum",
    "concat",
    "gather",
    "scatter_add",
    "reshape",
    "smooth_l1",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericalFault(FloatingPointError):
    pass


_dtype = np.float64
_checked = True
_counter = itertools.count()


def set_default_dtype(dtype) -> None:
    """Switch between float64 (default) and the opt-in float32 mode."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype


def get_default_dtype():
    return _dtype


def set_checked(flag: bool) -> bool:
    """Enable/disable the finite-value check after every primitive; returns the old flag."""
    global _checked
    old, _checked = _checked, bool(flag)
    return old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "op", "uid")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None, op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.uid = next(_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return gather(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, op: str) -> None:
    if _checked and not np.all(np.isfinite(out)):
        raise NumericalFault(f"non-finite value produced by {op}")


def _make(out: np.ndarray, parents: tuple, vjp: Callable, op: str) -> Tensor:
    _check(out, op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(out, requires_grad=needs, parents=parents if needs else (), vjp=vjp if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@numba.njit(cache=True)
def _rowwise_matmul(a, w):
    m, k = a.shape
    n = w.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for p in range(k):
            v = a[i, p]
            for j in range(n):
                out[i, j] += v * w[p, j]
    return out


def _fixed_order_matmul(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    lead = a.shape[:-1]
    flat = np.ascontiguousarray(a.reshape(-1, a.shape[-1]))
    out = _rowwise_matmul(flat, np.ascontiguousarray(w))
    return out.reshape(lead + (w.shape[1],))


def matmul(x, w) -> Tensor:
    """``x[..., K] @ w[K, N]``; each output row depends only on its input row."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {x.shape} by {w.shape}")
    out = _fixed_order_matmul(x.data, w.data)

    def vjp(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return _make(out, (x, w), vjp, "matmul")


def _binary_shapes(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("multiply", a, b)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), vjp, "multiply")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * on,), "relu")


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``. Entries where ``mask`` is False get weight exactly 0.

    A slice with no unmasked entry produces all zeros.
    """
    x = as_tensor(x)
    if mask is None:
        z = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        z = np.where(mask, x.data, -np.inf)
        m = z.max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(np.where(mask, x.data - m, 0.0)), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), vjp, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), vjp, "log_softmax")


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (rstd * (g - gm - xhat * gxm),)

    return _make(xhat, (x,), vjp, "layer_norm")


def max_reduce(x, axis: int) -> Tensor:
    """Max over a set axis. Backward routes to the first maximal index on ties."""
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    t = _make(out, (x,), vjp, "max_reduce")
    return t


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.shape[axis]

    def vjp(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(np.asarray(out), (x,), vjp, "mean")


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def vjp(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), vjp, "sum")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(ts), vjp, "concat")


def gather(x, index) -> Tensor:
    """Index the leading axis (``x[index]``); backward scatter-adds."""
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(out, (x,), vjp, "gather")


def scatter_add(x, index, size: int) -> Tensor:
    """Sum rows of ``x`` into ``size`` output rows; row i goes to ``index[i]``."""
    x = as_tensor(x)
    index = np.asarray(index)
    if index.shape != x.shape[: index.ndim]:
        raise ShapeError(f"scatter_add: index {index.shape} does not match {x.shape}")
    out = np.zeros((size,) + x.shape[index.ndim:], dtype=x.data.dtype)
    np.add.at(out, index, x.data)
    return _make(out, (x,), lambda g: (g[index],), "scatter_add")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def smooth_l1(x, beta: float = 1.0) -> Tensor:
    x = as_tensor(x)
    ax = np.abs(x.data)
    out = np.where(ax < beta, 0.5 * x.data * x.data / beta, ax - 0.5 * beta)
    slope = np.clip(x.data / beta, -1.0, 1.0)
    return _make(out, (x,), lambda g: (g * slope,), "smooth_l1")


def backward(output: Tensor, inputs: Sequence[Tensor] | None = None):
    """Reverse-mode pass from a scalar ``output``.

    Gradients accumulate into ``.grad`` of every reachable tensor that
    requires them. If ``inputs`` is given, their gradients are returned,
    with exact zeros for inputs the output does not depend on.
    """
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    nodes = {}
    stack = [output]
    while stack:
        t = stack.pop()
        if t.uid in nodes or not t.requires_grad:
            continue
        nodes[t.uid] = t
        stack.extend(t.parents)
    grads = {output.uid: np.ones_like(output.data)}
    for uid in sorted(nodes, reverse=True):
        t = nodes[uid]
        g = grads.pop(uid, None)
        if g is None:
            continue
        if t.vjp is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.parents, t.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.uid)
            grads[parent.uid] = pg if prev is None else prev + pg
    if inputs is None:
        return None
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def grad_check(fn: Callable, params: Sequence[np.ndarray], eps: float = 1e-5,
               coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a list of Tensors to a scalar Tensor. Relative error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. With ``coords`` set,
    only that many randomly chosen coordinates per parameter are probed.
    """
    params = [np.array(p, dtype=_dtype) for p in params]
    leaves = [Tensor(p, requires_grad=True) for p in params]
    out = fn(leaves)
    if not np.all(np.isfinite(out.data)):
        raise NumericalFault("grad_check: non-finite function value")
    analytic = backward(out, leaves)

    def value(arrays):
        v = fn([Tensor(a) for a in arrays]).data
        if not np.all(np.isfinite(v)):
            raise NumericalFault("grad_check: non-finite function value")
        return float(v)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, p in enumerate(params):
        flat_idx = np.arange(p.size)
        if coords is not None and p.size > coords:
            flat_idx = np.sort(rng.choice(p.size, size=coords, replace=False))
        for j in flat_idx:
            trial = [q.copy() for q in params]
            flat = trial[i].reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            fp = value(trial)
            flat[j] = orig - eps
            fm = value(trial)
            num = (fp - fm) / (2 * eps)
            ana = analytic[i].reshape(-1)[j]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
