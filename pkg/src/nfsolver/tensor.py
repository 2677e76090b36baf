"""Tape-based reverse-mode autodiff over numpy arrays.

Tape granularity is whole arrays: each recorded node stores a
vector-Jacobian closure, so one backward pass costs a small constant factor
of the forward pass.  Only float64 and complex128 values are admitted;
anything else is promoted on entry or rejected.

Gradients of a real scalar loss with respect to complex values follow the
convention grad = dL/d(Re z) + 1j * dL/d(Im z), i.e. the conjugate of twice
the Wirtinger derivative.  With this layout a plain descent step
``z -= lr * grad`` decreases the loss, and real/imaginary finite differences
can be checked independently.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ContractError, NumericError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Toggled by tests: validate finiteness of every op output.
_DEBUG_FINITE = False
_GRAD_ENABLED = True


def set_debug_checks(enabled: bool) -> None:
    """Enable per-op finiteness validation (slow; meant for tests)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


@contextmanager
def no_grad():
    """Context manager that suspends tape recording."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _admit(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float64 or arr.dtype == np.complex128:
        return arr
    if np.issubdtype(arr.dtype, np.complexfloating):
        return arr.astype(np.complex128)
    if np.issubdtype(arr.dtype, np.number) or arr.dtype == np.bool_:
        return arr.astype(np.float64)
    raise ContractError(f"unsupported dtype for Tensor: {arr.dtype}")


class TapeNode:
    """One recorded operation: op id, parent tensors, and a VJP closure."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """A float64/complex128 array plus an optional tape node.

    Data must be treated as frozen once the tensor participates in an
    operation; optimizers swap in fresh arrays between steps instead of
    mutating in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _admit(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return self.data.reshape(()).item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ------------------------------------------------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter:
    """A named leaf tensor that optimizers update."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, value):
        self.name = name
        self.tensor = Tensor(value, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = _admit(value)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.data.shape

    @property
    def ndim(self) -> int:
        return self.tensor.data.ndim

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _ensure(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        return x.tensor
    return Tensor(x)


def _conj(arr: np.ndarray) -> np.ndarray:
    return np.conjugate(arr) if np.iscomplexobj(arr) else arr


def _result(data: np.ndarray, op: str, parents: tuple, vjp: Callable) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op {op!r}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, parents, vjp)
    else:
        out.requires_grad = False
        out.node = None
    return out


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _coerce_grad(grad: np.ndarray, parent: Tensor) -> np.ndarray:
    grad = _reduce_to(np.asarray(grad), parent.data.shape)
    if parent.data.dtype == np.float64 and np.iscomplexobj(grad):
        grad = np.ascontiguousarray(grad.real)
    elif parent.data.dtype == np.complex128 and not np.iscomplexobj(grad):
        grad = grad.astype(np.complex128)
    return grad


def backward(loss: Tensor) -> None:
    """Reverse sweep from a real scalar loss.

    Leaf tensors with requires_grad=True receive a fresh ``.grad`` array;
    previous accumulators are discarded, not added to.  Each tape node is
    visited exactly once.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    if np.iscomplexobj(loss.data):
        raise ContractError("backward requires a real-valued loss")

    # Iterative topological sort (graphs can be thousands of nodes deep).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data, dtype=np.float64)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                t.grad = g
            continue
        parent_grads = t.node.vjp(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _coerce_grad(pg, p)
            cur = grads.get(id(p))
            # Never accumulate in place: vjps may hand back aliased buffers.
            grads[id(p)] = pg if cur is None else cur + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def neg(a) -> Tensor:
    a = _ensure(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    ad, bd = a.data, b.data

    def vjp(g):
        return g * _conj(bd), g * _conj(ad)

    return _result(ad * bd, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if np.any(b.data == 0):
        raise NumericError("division by exact zero")
    inv = 1.0 / b.data
    ad = a.data

    def vjp(g):
        ci = _conj(inv)
        return g * ci, -g * _conj(ad) * ci * ci

    return _result(ad * inv, "div", (a, b), vjp)


def power(a, exponent) -> Tensor:
    """Elementwise real power with a fixed scalar exponent."""
    a = _ensure(a)
    e = float(exponent)
    if np.iscomplexobj(a.data):
        raise ContractError("power is defined for float64 tensors only")
    if e != int(e) and np.any(a.data < 0):
        raise NumericError("fractional power of a negative base")
    ad = a.data
    out = ad ** e
    return _result(out, "power", (a,), lambda g: (g * e * ad ** (e - 1.0),))


def exp(a) -> Tensor:
    a = _ensure(a)
    y = np.exp(a.data)
    return _result(y, "exp", (a,), lambda g: (g * _conj(y),))


def log(a) -> Tensor:
    a = _ensure(a)
    if np.iscomplexobj(a.data):
        raise ContractError("log is defined for float64 tensors only")
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    ad = a.data
    return _result(np.log(ad), "log", (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = _ensure(a)
    if np.iscomplexobj(a.data):
        raise ContractError("sqrt is defined for float64 tensors only")
    if np.any(a.data < 0):
        raise NumericError("sqrt of a negative value")
    y = np.sqrt(a.data)
    return _result(y, "sqrt", (a,), lambda g: (g * (0.5 / y),))


def gelu(a) -> Tensor:
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF."""
    a = _ensure(a)
    if np.iscomplexobj(a.data):
        raise ContractError("gelu is defined for float64 tensors only")
    ad = a.data
    cdf = ndtr(ad)  # equals 0.5*(1+erf(x/sqrt(2))) to machine epsilon

    def vjp(g):
        # in-place chain: t = g * (cdf + x * pdf(x)); this op sits on the
        # hottest path, so avoid temporaries
        t = np.multiply(ad, ad)
        t *= -0.5
        np.exp(t, out=t)
        t *= _INV_SQRT_2PI
        t *= ad
        t += cdf
        t *= g
        return (t,)

    return _result(ad * cdf, "gelu", (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    src_shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(ax % len(src_shape) for ax in axes)
            shape = tuple(1 if i in axes else n for i, n in enumerate(src_shape))
            g = g.reshape(shape)
        return (np.broadcast_to(g, src_shape),)

    return _result(np.asarray(out), "sum", (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in ((axis,) if np.isscalar(axis) else axis)]
    )
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    old = a.data.shape
    return _result(
        a.data.reshape(shape), "reshape", (a,), lambda g: (np.asarray(g).reshape(old),)
    )


def transpose(a, axes=None) -> Tensor:
    a = _ensure(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(
        a.data.transpose(axes), "transpose", (a,), lambda g: (np.asarray(g).transpose(inv),)
    )


def moveaxis(a, source, destination) -> Tensor:
    a = _ensure(a)
    order = list(range(a.data.ndim))
    order.remove(source % a.data.ndim)
    order.insert(destination % a.data.ndim, source % a.data.ndim)
    return transpose(a, order)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(_ensure(t) for t in tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        g = np.asarray(g)
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _result(data, "concat", tensors, vjp)


def take_slice(a, key) -> Tensor:
    """Basic (non-fancy) indexing; the adjoint scatters into zeros."""
    a = _ensure(a)
    if isinstance(key, (Tensor, np.ndarray, list)):
        raise ContractError("take_slice supports basic indexing only; use gather")
    data = a.data[key]
    src_shape = a.data.shape
    src_dtype = a.data.dtype

    def vjp(g):
        out = np.zeros(src_shape, dtype=np.result_type(src_dtype, np.asarray(g).dtype))
        out[key] = g
        return (out,)

    return _result(np.ascontiguousarray(data), "take_slice", (a,), vjp)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractError("matmul requires tensors with ndim >= 2")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, _conj(bd.swapaxes(-1, -2)))
        gb = np.matmul(_conj(ad.swapaxes(-1, -2)), g)
        return ga, gb

    return _result(np.matmul(ad, bd), "matmul", (a, b), vjp)


# ---------------------------------------------------------------------------
# gather / segment ops (hot path of the interpolation layers)


class GatherPlan:
    """Precomputed adjoint plan for repeated gathers with a fixed index.

    The scatter-add in the backward pass is realised as sort + segment
    reduction, which is vastly faster than np.add.at for large index sets.
    """

    __slots__ = ("index", "n_source", "order", "starts", "unique")

    def __init__(self, index: np.ndarray, n_source: int):
        index = np.asarray(index, dtype=np.int64)
        if index.ndim != 1:
            raise ContractError("gather index must be 1-d")
        if index.size and (index.min() < 0 or index.max() >= n_source):
            raise ContractError("gather index out of range")
        self.index = index
        self.n_source = int(n_source)
        self.order = np.argsort(index, kind="stable")
        sorted_idx = index[self.order]
        if sorted_idx.size:
            boundaries = np.flatnonzero(np.diff(sorted_idx)) + 1
            self.starts = np.concatenate(([0], boundaries))
            self.unique = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.unique = np.zeros(0, dtype=np.int64)


def gather(a, index, axis: int = 0, plan: GatherPlan | None = None) -> Tensor:
    """Select rows along one axis with an integer index array."""
    a = _ensure(a)
    axis = axis % a.data.ndim
    index = plan.index if plan is not None else np.asarray(index, dtype=np.int64)
    n_source = a.data.shape[axis]
    if plan is not None and plan.n_source != n_source:
        raise ContractError("gather plan does not match the source extent")
    data = np.take(a.data, index, axis=axis)
    src_shape = a.data.shape
    src_dtype = a.data.dtype

    def vjp(g):
        g = np.asarray(g)
        if plan is not None:
            gs = np.take(g, plan.order, axis=axis)
            if plan.starts.size:
                sums = np.add.reduceat(gs, plan.starts, axis=axis)
            else:
                sums = gs[(slice(None),) * axis + (slice(0, 0),)]
            out = np.zeros(
                src_shape[:axis] + (n_source,) + src_shape[axis + 1 :],
                dtype=np.result_type(src_dtype, g.dtype),
            )
            sel = (slice(None),) * axis + (plan.unique,)
            out[sel] = sums
            return (out,)
        out = np.zeros(src_shape, dtype=np.result_type(src_dtype, g.dtype))
        np.add.at(out, (slice(None),) * axis + (index,), g)
        return (out,)

    return _result(data, "gather", (a,), vjp)


def segment_sum(a, splits, axis: int = 0) -> Tensor:
    """Sum contiguous segments along an axis.

    ``splits`` holds segment boundaries: segment i covers
    [splits[i], splits[i+1]).  The final boundary must equal the axis
    extent.  Empty segments yield zero rows.
    """
    a = _ensure(a)
    axis = axis % a.data.ndim
    splits = np.asarray(splits, dtype=np.int64)
    if splits.ndim != 1 or splits.size < 1:
        raise ContractError("splits must be a 1-d boundary array")
    if splits[0] != 0 or splits[-1] != a.data.shape[axis]:
        raise ContractError("splits must start at 0 and end at the axis extent")
    if np.any(np.diff(splits) < 0):
        raise ContractError("splits must be non-decreasing")
    counts = np.diff(splits)
    nonempty = counts > 0
    n_seg = counts.size

    if nonempty.all():
        data = np.add.reduceat(a.data, splits[:-1], axis=axis)
    else:
        # np.add.reduceat misreads zero-length segments, so reduce only the
        # occupied ones and zero-fill the rest.
        out_shape = list(a.data.shape)
        out_shape[axis] = n_seg
        data = np.zeros(out_shape, dtype=a.data.dtype)
        if nonempty.any():
            occupied = np.add.reduceat(a.data, splits[:-1][nonempty], axis=axis)
            sel = (slice(None),) * axis + (np.flatnonzero(nonempty),)
            data[sel] = occupied

    def vjp(g):
        return (np.repeat(np.asarray(g), counts, axis=axis),)

    return _result(data, "segment_sum", (a,), vjp)


# ---------------------------------------------------------------------------
# complex structure ops


def real(a) -> Tensor:
    a = _ensure(a)
    return _result(
        np.ascontiguousarray(a.data.real), "real", (a,), lambda g: (g,)
    )


def imag(a) -> Tensor:
    a = _ensure(a)
    return _result(
        np.ascontiguousarray(a.data.imag), "imag", (a,), lambda g: (1j * np.asarray(g),)
    )


def conj(a) -> Tensor:
    a = _ensure(a)
    return _result(_conj(a.data), "conj", (a,), lambda g: (np.conjugate(g),))


def to_complex(re, im) -> Tensor:
    re, im = _ensure(re), _ensure(im)
    if np.iscomplexobj(re.data) or np.iscomplexobj(im.data):
        raise ContractError("to_complex expects float64 parts")
    data = re.data + 1j * im.data
    # real-part coercion of the returned grads projects out the right parts
    return _result(data, "to_complex", (re, im), lambda g: (g, -1j * np.asarray(g)))


def as_complex(a) -> Tensor:
    a = _ensure(a)
    if np.iscomplexobj(a.data):
        return a
    return _result(a.data.astype(np.complex128), "as_complex", (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# block extraction / embedding over trailing spatial axes


def take_block(a, axes: Sequence[int], index_lists: Sequence[np.ndarray]) -> Tensor:
    """Extract an outer-product block: per-axis integer index lists."""
    a = _ensure(a)
    axes = tuple(ax % a.data.ndim for ax in axes)
    idx = [np.asarray(ix, dtype=np.int64) for ix in index_lists]
    if len(axes) != len(idx):
        raise ContractError("one index list per axis is required")
    data = a.data
    for ax, ix in zip(axes, idx):
        data = np.take(data, ix, axis=ax)
    src_shape = a.data.shape

    def vjp(g):
        g = np.asarray(g)
        out = g
        # embed one axis at a time, innermost last; indices are unique so
        # plain assignment is the exact adjoint of take
        for ax, ix in sorted(zip(axes, idx), key=lambda t: -t[0]):
            shape = list(out.shape)
            shape[ax] = src_shape[ax]
            bigger = np.zeros(shape, dtype=out.dtype)
            sel = [slice(None)] * len(shape)
            sel[ax] = ix
            bigger[tuple(sel)] = out
            out = bigger
        return (out,)

    return _result(np.ascontiguousarray(data), "take_block", (a,), vjp)


def put_block(a, axes: Sequence[int], index_lists: Sequence[np.ndarray], extents: Sequence[int]) -> Tensor:
    """Embed a block into zeros with given full extents (adjoint of take_block)."""
    a = _ensure(a)
    axes = tuple(ax % a.data.ndim for ax in axes)
    idx = [np.asarray(ix, dtype=np.int64) for ix in index_lists]
    out_shape = list(a.data.shape)
    for ax, ext in zip(axes, extents):
        out_shape[ax] = int(ext)
    data = np.zeros(out_shape, dtype=a.data.dtype)
    mesh = [slice(None)] * len(out_shape)
    if len(axes) == 1:
        mesh[axes[0]] = idx[0]
    else:
        # several indexed axes need an open mesh; keep them contiguous so the
        # broadcastable index arrays line up with the right dimensions
        if axes != tuple(range(axes[0], axes[0] + len(axes))):
            raise ContractError("put_block requires contiguous axes")
        mesh[axes[0] : axes[0] + len(axes)] = list(np.ix_(*idx))
    data[tuple(mesh)] = a.data

    def vjp(g):
        g = np.asarray(g)
        out = g
        for ax, ix in sorted(zip(axes, idx), key=lambda t: -t[0]):
            out = np.take(out, ix, axis=ax)
        return (out,)

    return _result(data, "put_block", (a,), vjp)


# ---------------------------------------------------------------------------
# fused layer norm


def layer_norm(x, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along one axis, then affine.

    Uses the population variance (divide by n, not n-1).
    """
    x, gain, bias = _ensure(x), _ensure(gain), _ensure(bias)
    if np.iscomplexobj(x.data):
        raise ContractError("layer_norm is defined for float64 tensors only")
    axis = axis % x.data.ndim
    n = x.data.shape[axis]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ContractError("gain/bias must be 1-d with the normalized extent")
    bshape = tuple(n if i == axis else 1 for i in range(x.data.ndim))
    gr = gain.data.reshape(bshape)
    br = bias.data.reshape(bshape)

    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gr + br

    other_axes = tuple(i for i in range(x.data.ndim) if i != axis)

    def vjp(g):
        g = np.asarray(g)
        ghat = g * gr
        gx = (
            ghat
            - ghat.mean(axis=axis, keepdims=True)
            - xhat * np.mean(ghat * xhat, axis=axis, keepdims=True)
        ) * inv_std
        ggain = (g * xhat).sum(axis=other_axes)
        gbias = g.sum(axis=other_axes)
        return gx, ggain, gbias

    return _result(data, "layer_norm", (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_difference_grad(loss_fn: Callable[[], Tensor], param: Parameter,
                           entries: Sequence[tuple], step: float = 1e-6) -> dict:
    """Central finite differences on selected flat entries of a parameter.

    For complex parameters the real and imaginary parts are perturbed
    independently; the result dict maps entry -> d(loss)/d(entry) laid out in
    the same convention as ``backward`` (complex combining both parts).
    """
    flat = param.tensor.data.reshape(-1)
    out = {}
    for e in entries:
        e = int(e)
        base = flat[e]
        if np.iscomplexobj(flat):
            parts = []
            for unit in (1.0, 1.0j):
                h = step * max(1.0, abs(base))
                flat[e] = base + h * unit
                up = loss_fn().item()
                flat[e] = base - h * unit
                dn = loss_fn().item()
                flat[e] = base
                parts.append((up - dn) / (2.0 * h))
            out[e] = parts[0] + 1j * parts[1]
        else:
            h = step * max(1.0, abs(base))
            flat[e] = base + h
            up = loss_fn().item()
            flat[e] = base - h
            dn = loss_fn().item()
            flat[e] = base
            out[e] = (up - dn) / (2.0 * h)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                    max_entries: int = 16, step: float = 1e-6,
                    seed: int = 0) -> float:
    """Compare tape gradients with central differences; return the worst
    relative error across all checked entries."""
    loss = loss_fn()
    for p in params:
        p.zero_grad()
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name!r} received no gradient")
        n = p.tensor.size
        entries = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        fd = finite_difference_grad(loss_fn, p, entries, step=step)
        ad_flat = p.grad.reshape(-1)
        for e, fd_val in fd.items():
            ad_val = ad_flat[e]
            denom = max(abs(ad_val), abs(fd_val), 1e-8)
            worst = max(worst, abs(ad_val - fd_val) / denom)
    return worst
