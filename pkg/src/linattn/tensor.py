"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array (float32 for training, float64 for verification)
and optionally participate in a differentiation graph. Graphs are built
eagerly as operations run and are single-use: ``backward`` consumes the
graph and a second pass through it raises ``GraphError``.

Broadcasting follows numpy's trailing-dimension alignment; gradients of a
broadcast operand are summed back over the expanded axes. The intended use
is batch-style broadcasting (a matrix applied across leading batch axes, a
per-feature vector against its trailing axis, a size-1 mask axis).
"""

from __future__ import annotations

import builtins
import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, GraphError, ShapeError

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation, timing)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense n-dimensional array with an optional differentiation node.

    Identity matters: tensors hash and compare by object identity so they
    can key gradient maps. Data is treated as immutable after construction.
    """

    __slots__ = ("data", "requires_grad", "_prev", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad})"

    # Arithmetic sugar; the module-level functions carry the semantics.
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

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def transpose(self):
        return swapaxes(self, -1, -2)

    def astype(self, dtype):
        return astype(self, dtype)

    def backward(self, params=None):
        return backward(self, params=params)


GradMap = dict
"""Gradient map: parameter tensor (by identity) -> gradient tensor of the same shape."""


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtypes(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed element types {a.dtype.name} and {b.dtype.name}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over broadcast axes so it matches the operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(out_data: np.ndarray, prev: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, attaching a graph node when grads are live."""
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad for p in prev):
        out.requires_grad = True
        out._prev = tuple(prev)
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_dtypes(a, b, "add")
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_dtypes(a, b, "sub")
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_dtypes(a, b, "mul")
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    """Elementwise division. Division by zero propagates inf/nan values,
    which the training harness detects via its non-finite guard."""
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_dtypes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            da = g / b.data
            db = -g * a.data / (b.data * b.data)
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _make(out, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    """Multiply by a python scalar."""
    x = _as_tensor(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def _softplus_raw(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x) -> Tensor:
    """ln(1 + e^x) in the overflow-safe form max(x, 0) + ln(1 + e^-|x|).

    The result is floored at the smallest positive normal of the element
    type so it stays strictly positive even where e^-|x| underflows.
    """
    x = _as_tensor(x)
    tiny = np.finfo(x.dtype).tiny
    out = np.maximum(_softplus_raw(x.data), tiny)
    return _make(out, (x,), lambda g: (g * _sigmoid_raw(x.data),))


def sigmoid(x) -> Tensor:
    """Logistic 1 / (1 + e^-x), overflow-safe, floored at the smallest
    positive normal so gates never collapse to exactly zero."""
    x = _as_tensor(x)
    tiny = np.finfo(x.dtype).tiny
    s = np.maximum(_sigmoid_raw(x.data), tiny)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x) -> Tensor:
    """Exact Gaussian error linear unit, 0.5 x (1 + erf(x / sqrt 2))."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _make(out.astype(x.dtype), (x,), vjp)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g / x.data,)

    return _make(out, (x,), vjp)


def square(x) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (g * 2.0 * x.data,))


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),))


def abs(x) -> Tensor:
    """Elementwise absolute value; subgradient 0 at the origin."""
    x = _as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_spread(g, x.shape, axis, keepdims),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def vjp(g):
        return (_spread(g, x.shape, axis, keepdims) / count,)

    return _make(np.asarray(out, dtype=x.dtype), (x,), vjp)


def _spread(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    """Broadcast a reduction gradient back to the input shape."""
    if axis is not None and not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for a in sorted(ax % len(shape) for ax in axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


# ---------------------------------------------------------------------------
# matrix and structural operations
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style broadcasting over leading batch axes."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        da = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        db = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return da, db

    return _make(out, (a, b), vjp)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = _as_tensor(x)
    out = np.ascontiguousarray(x.data.swapaxes(a, b))
    return _make(out, (x,), lambda g: (g.swapaxes(a, b),))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    for t in ts[1:]:
        _check_dtypes(ts[0], t, "concat")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def vjp(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(out, ts, vjp)


def getitem(x, key) -> Tensor:
    x = _as_tensor(x)
    out = x.data[key]

    def vjp(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, key, g)
        return (dx,)

    return _make(np.ascontiguousarray(out), (x,), vjp)


def astype(x, dtype) -> Tensor:
    x = _as_tensor(x)
    out = x.data.astype(dtype)
    return _make(out, (x,), lambda g: (g.astype(x.dtype),))


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding ids out of range [0, {table.shape[0]}): min={ids.min()}, max={ids.max()}")
    out = table.data[ids]

    def vjp(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (dt,)

    return _make(out, (table,), vjp)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax over the last axis, shifted by the row max."""
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), vjp)


def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels out of range [0, {k})")
    shifted = logits.data - np.max(logits.data, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1)) + np.max(logits.data, axis=-1)
    nll = lse - logits.data[np.arange(n), labels]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def vjp(g):
        p = np.exp(shifted)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _make(out, (logits,), vjp)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
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
        if node._consumed:
            raise GraphError("graph already consumed by a previous backward pass")
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> GradMap:
    """Reverse-mode gradients of a scalar loss for every trainable leaf.

    Returns a mapping from leaf tensor (identity) to its gradient tensor.
    When ``params`` is given (an iterable or name->tensor mapping), every
    requested tensor gets exactly one entry, zero-filled if the loss does
    not depend on it. The traversed graph is consumed.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any trainable tensor")

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: GradMap = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            leaves[node] = Tensor(g)
            continue
        for p, pg in zip(node._prev, node._vjp(g)):
            if not p.requires_grad or pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
        node._consumed = True
        node._vjp = None
        node._prev = ()

    if params is not None:
        requested = params.values() if isinstance(params, dict) else params
        for p in requested:
            if p not in leaves:
                leaves[p] = Tensor(np.zeros_like(p.data))
    return leaves


# ---------------------------------------------------------------------------
# finite-difference verification oracle
# ---------------------------------------------------------------------------

class FiniteDiffReport:
    """Per-parameter outcome of a finite-difference gradient check."""

    __slots__ = ("max_rel_err", "failed")

    def __init__(self, max_rel_err: float, failed: bool):
        self.max_rel_err = max_rel_err
        self.failed = failed

    def __repr__(self):
        status = "FAILED" if self.failed else "ok"
        return f"FiniteDiffReport(max_rel_err={self.max_rel_err:.3e}, {status})"


def finite_difference_check(f: Callable[[dict], Tensor], params: dict,
                            step: float = 1e-5) -> dict[str, FiniteDiffReport]:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must be a deterministic function of the parameter dict that
    returns a scalar tensor. The relative error per element uses the
    denominator max(|g|, |g_fd|, 1e-8). A non-finite evaluation marks the
    parameter under perturbation as failed.
    """
    if not step > 0:
        raise ContractError(f"finite-difference step must be > 0, got {step}")

    loss = f(params)
    grads = backward(loss, params=params)

    report: dict[str, FiniteDiffReport] = {}
    for name, p in params.items():
        g = grads[p].data
        worst = 0.0
        failed = False
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            with no_grad():
                p.data[idx] = orig + step
                up = float(f(params).item())
                p.data[idx] = orig - step
                down = float(f(params).item())
            p.data[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                failed = True
                continue
            g_fd = (up - down) / (2.0 * step)
            g_an = float(g[idx])
            denom = max(builtins.abs(g_an), builtins.abs(g_fd), 1e-8)
            worst = max(worst, builtins.abs(g_an - g_fd) / denom)
        report[name] = FiniteDiffReport(worst, failed)
    return report
