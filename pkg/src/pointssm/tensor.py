"""Dense float64 tensors with reverse-mode automatic differentiation.

This is the value type for the whole library. A Tensor wraps a numpy array;
every differentiable operation records its taped inputs and a backward rule,
and ``backward`` replays the recorded operations exactly once, in reverse
creation order (creation order is a topological order by construction).

Everything is double precision. Taped tensors are never mutated in place;
parameter updates must assign fresh arrays.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Backward invoked on an invalid root or an already-consumed graph."""


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.checked = False


_state = _State()
_node_ids = itertools.count(1)


class no_grad:
    """Context manager that disables taping of new operations."""

    def __enter__(self):
        self._prev = _state.grad_enabled
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class checked_mode:
    """Context manager enabling construction-time finiteness and zero-division checks."""

    def __init__(self, enabled: bool = True):
        self._enabled = enabled

    def __enter__(self):
        self._prev = _state.checked
        _state.checked = self._enabled
        return self

    def __exit__(self, *exc):
        _state.checked = self._prev
        return False


def set_checked(enabled: bool) -> None:
    _state.checked = bool(enabled)


def is_checked() -> bool:
    return _state.checked


def grad_enabled() -> bool:
    return _state.grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_nid", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if _state.checked and arr.size and not np.isfinite(arr).all():
            raise ValueError("non-finite values rejected in checked mode")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._nid = 0
        self._consumed = False

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- arithmetic operators ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # ---- method forms of the op set -------------------------------------------

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def var(self, axis, keepdims=False):
        return reduce_variance(self, axis, keepdims)

    def softmax(self, axis):
        return softmax(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) != 1 else axes[0])

    def flip(self, axis):
        return flip(self, axis)

    def expand(self, shape):
        return expand(self, shape)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap op output; tape it when grad mode is on and an input is taped."""
    if _state.grad_enabled:
        taped = tuple(p for p in parents if p.requires_grad)
        if taped:
            out = Tensor(data, requires_grad=True)
            out._parents = taped
            out._backward_fn = backward_fn
            out._nid = next(_node_ids)
            return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient that may still be shared with another parent."""
    if not t.requires_grad:
        return
    gg = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        # unbroadcast output is a fresh owned array and can be adopted;
        # otherwise copy, since g may be handed to a second parent as well
        t.grad = gg if gg is not g else np.array(g)
    else:
        t.grad += gg


def _accum_owned(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient the caller exclusively owns (fresh array, or the
    consumed child buffer handed to a single recipient); adopt without copy."""
    if not t.requires_grad:
        return
    gg = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = gg if gg.flags.writeable else np.array(gg)
    else:
        t.grad += gg


def _grad_buffer(t: Tensor) -> np.ndarray | None:
    """Zero-initialized gradient buffer for scatter-style backward rules."""
    if not t.requires_grad:
        return None
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


# ---- backward pass ------------------------------------------------------------


def trace(root: Tensor) -> list[Tensor]:
    """Recorded operations reaching ``root``, in creation (topological) order."""
    seen = {id(root)}
    stack = [root] if root._backward_fn is not None else []
    ops: list[Tensor] = []
    while stack:
        node = stack.pop()
        ops.append(node)
        for p in node._parents:
            if p._backward_fn is not None and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    ops.sort(key=lambda t: t._nid)
    return ops


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every taped leaf's ``grad``.

    The graph is consumed: a second backward from the same root is rejected
    until a fresh forward pass rebuilds it.
    """
    if loss.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("backward called on a detached root (nothing is taped)")
    if loss._consumed:
        raise TapeError("backward already ran for this root; rebuild the graph "
                        "before calling backward again")
    ops = trace(loss)
    loss._consumed = True
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(ops):
        g = node.grad
        if g is None:
            continue
        node._backward_fn(g)
        # free intermediate state; leaves keep their grads
        node.grad = None
        node._backward_fn = None
        node._parents = ()


# ---- elementwise operations -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accum_owned(a, g)
        _accum(b, g)

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accum_owned(a, g)
        _accum_owned(b, -g)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accum_owned(a, g * b.data)
        _accum_owned(b, g * a.data)

    return _record(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if _state.checked and np.any(b.data == 0.0):
        raise ZeroDivisionError("division by exact zero rejected in checked mode")
    out = a.data / b.data

    def bwd(g):
        _accum_owned(a, g / b.data)
        _accum_owned(b, -g * out / b.data)

    return _record(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum_owned(a, -g)

    return _record(-a.data, (a,), bwd)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum_owned(a, g * out)

    return _record(out, (a,), bwd)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        _accum_owned(a, g / a.data)

    return _record(out, (a,), bwd)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        _accum_owned(a, g / (2.0 * out))

    return _record(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = expit(a.data)

    def bwd(g):
        _accum_owned(a, g * out * (1.0 - out))

    return _record(out, (a,), bwd)


def softplus(a) -> Tensor:
    # log(1 + e^x), computed stably for large |x|
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        _accum_owned(a, g * expit(a.data))

    return _record(out, (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum_owned(a, g * (a.data > 0.0))

    return _record(out, (a,), bwd)


def silu(a) -> Tensor:
    """x * sigmoid(x), the gate nonlinearity."""
    a = _as_tensor(a)
    s = expit(a.data)
    out = a.data * s

    def bwd(g):
        _accum_owned(a, g * (s + out * (1.0 - s)))

    return _record(out, (a,), bwd)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select by a constant boolean mask; gradients are routed by the mask."""
    a, b = _as_tensor(a), _as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)

    def bwd(g):
        _accum_owned(a, g * mask)
        _accum_owned(b, g * ~mask)

    return _record(out, (a, b), bwd)


# ---- matmul and convolution ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")

    if b.ndim == 2:
        # dominant case: batched data times a flat weight; fold the leading
        # axes so the weight gradient is one product instead of a huge
        # per-item stack that would be summed afterwards
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(lead + (b.shape[-1],))

        def bwd2(g):
            g2 = np.ascontiguousarray(g).reshape(-1, b.shape[-1])
            _accum_owned(a, (g2 @ b.data.T).reshape(a.shape))
            _accum_owned(b, a2.T @ g2)

        return _record(out, (a, b), bwd2)

    out = np.matmul(a.data, b.data)

    def bwd(g):
        _accum_owned(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        _accum_owned(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return _record(out, (a, b), bwd)


def conv1d(x, w, pad: int) -> Tensor:
    """Cross-correlation along the last axis with zero padding.

    ``x`` has shape (..., c_in, L), ``w`` has shape (c_out, c_in, k) with k odd,
    and ``pad`` must equal (k - 1) / 2 so the length is preserved.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 3:
        raise ShapeError(f"conv1d kernel must be rank 3, got {w.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd, got k={k}")
    if pad != (k - 1) // 2:
        raise ShapeError(f"conv1d pad must be (k-1)/2 = {(k - 1) // 2}, got {pad}")
    if x.ndim < 2 or x.shape[-2] != c_in:
        raise ShapeError(f"conv1d input {x.shape} does not match kernel {w.shape}")

    lead = x.shape[:-2]
    length = x.shape[-1]
    xf = x.data.reshape((-1, c_in, length))
    batch = xf.shape[0]
    xp = np.pad(xf, ((0, 0), (0, 0), (pad, pad))) if pad else xf
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * length, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).reshape(batch, length, c_out).transpose(0, 2, 1)

    def bwd(g):
        g2 = np.ascontiguousarray(np.asarray(g).reshape(-1, c_out, length)
                                  .transpose(0, 2, 1)).reshape(batch * length, c_out)
        _accum_owned(w, (g2.T @ cols).reshape(c_out, c_in, k))
        gwin = (g2 @ w2).reshape(batch, length, c_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + length] += gwin[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, pad:pad + length] if pad else gxp
        _accum_owned(x, gx.reshape(x.shape))

    return _record(np.ascontiguousarray(out).reshape(lead + (c_out, length)), (x, w), bwd)


# ---- reductions ------------------------------------------------------------------


def _restore_dims(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool):
    if keepdims or axis is None:
        return g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return np.expand_dims(g, axes)


def _check_axis(shape, axis):
    if axis is None:
        if int(np.prod(shape)) == 0:
            raise ShapeError("reduction over an empty tensor")
        return
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for a in axes:
        if not -len(shape) <= a < len(shape):
            raise ShapeError(f"axis {a} out of range for shape {shape}")
        if shape[a % len(shape)] == 0:
            raise ShapeError(f"reduction over empty axis {a} of shape {shape}")


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    _check_axis(a.shape, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = _restore_dims(np.asarray(g), a.shape, axis, keepdims)
        _accum(a, np.broadcast_to(gg, a.shape))

    return _record(out, (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    _check_axis(a.shape, axis)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size / max(out.size, 1)

    def bwd(g):
        gg = _restore_dims(np.asarray(g), a.shape, axis, keepdims)
        _accum_owned(a, np.broadcast_to(gg, a.shape) / n)

    return _record(out, (a,), bwd)


def reduce_max(a, axis: int, keepdims=False) -> Tensor:
    """Max over one axis; the gradient flows to the first maximal element."""
    a = _as_tensor(a)
    _check_axis(a.shape, axis)
    idx = np.argmax(a.data, axis=axis)
    idxk = np.expand_dims(idx, axis)
    outk = np.take_along_axis(a.data, idxk, axis=axis)
    out = outk if keepdims else np.squeeze(outk, axis=axis)

    def bwd(g):
        gk = np.asarray(g) if keepdims else np.expand_dims(np.asarray(g), axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idxk, gk, axis=axis)
        _accum_owned(a, buf)

    return _record(out, (a,), bwd)


def reduce_variance(a, axis: int, keepdims=False) -> Tensor:
    """Biased variance (divide by count) over one axis."""
    a = _as_tensor(a)
    _check_axis(a.shape, axis)
    mu = a.data.mean(axis=axis, keepdims=True)
    dev = a.data - mu
    out = np.mean(dev * dev, axis=axis, keepdims=keepdims)
    n = a.shape[axis % a.ndim]

    def bwd(g):
        gg = _restore_dims(np.asarray(g), a.shape, axis, keepdims)
        _accum_owned(a, gg * (2.0 / n) * dev)

    return _record(out, (a,), bwd)


def softmax(a, axis) -> Tensor:
    """Stable softmax: max is subtracted before exponentiation."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        _accum_owned(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _record(s, (a,), bwd)


def softmax_weighted_mean(a, axis: int) -> Tensor:
    """sum_k a_k softmax(a)_k over one axis, fused with its backward rule.

    For out = sum a s: d out / d a_j = s_j (1 + a_j - out).
    """
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = (a.data * s).sum(axis=axis)

    def bwd(g):
        gk = np.expand_dims(np.asarray(g), axis)
        outk = np.expand_dims(out, axis)
        _accum_owned(a, gk * s * (1.0 + a.data - outk))

    return _record(out, (a,), bwd)


def fma(a, b, c) -> Tensor:
    """Elementwise a * b + c in one recorded operation."""
    a, b, c = _as_tensor(a), _as_tensor(b), _as_tensor(c)
    out = a.data * b.data + c.data

    def bwd(g):
        _accum_owned(a, g * b.data)
        _accum_owned(b, g * a.data)
        _accum(c, g)

    return _record(out, (a, b, c), bwd)


# ---- shape manipulation ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accum_owned(a, np.asarray(g).reshape(a.shape))

    return _record(out, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bwd(g):
        _accum_owned(a, np.asarray(g).transpose(inv))

    return _record(out, (a,), bwd)


def flip(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    out = np.flip(a.data, axis=axis)

    def bwd(g):
        _accum_owned(a, np.flip(np.asarray(g), axis=axis))

    return _record(out, (a,), bwd)


def expand(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, tuple(shape))

    def bwd(g):
        _accum_owned(a, np.asarray(g))

    return _record(out, (a,), bwd)


def concat(tensors: Iterable, axis: int) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis % p.ndim] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        g = np.asarray(g)
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis % g.ndim] = slice(lo, hi)
            _accum_owned(p, g[tuple(sl)])

    return _record(out, parts, bwd)


def stack(tensors: Iterable, axis: int) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        g = np.asarray(g)
        sl = [slice(None)] * g.ndim
        for i, p in enumerate(parts):
            sl[axis % g.ndim] = i
            _accum_owned(p, g[tuple(sl)])

    return _record(out, parts, bwd)


def select(a, axis: int, index: int) -> Tensor:
    """Pick one slice along an axis (drops that axis)."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis % a.ndim] = index
    sl = tuple(sl)
    out = a.data[sl]

    def bwd(g):
        buf = _grad_buffer(a)
        if buf is not None:
            buf[sl] += _unbroadcast(np.asarray(g), out.shape)

    return _record(out, (a,), bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start + length) along an axis."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis % a.ndim] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl]

    def bwd(g):
        buf = _grad_buffer(a)
        if buf is not None:
            buf[sl] += np.asarray(g)

    return _record(out, (a,), bwd)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """Batched row gather: a is (B, R, C), idx is integer (B, ...) into axis 1.

    Returns shape (B, *idx.shape[1:], C). Repeated indices accumulate on the
    backward pass.
    """
    a = _as_tensor(a)
    idx = np.asarray(idx)
    if a.ndim != 3 or idx.ndim < 2 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"gather_rows expects (B, R, C) and (B, ...), got {a.shape} and {idx.shape}")
    batch = np.arange(a.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    out = a.data[batch, idx]

    def bwd(g):
        buf = _grad_buffer(a)
        if buf is not None:
            np.add.at(buf, (batch, idx), np.asarray(g))

    return _record(out, (a,), bwd)


# ---- tag dispatchers ---------------------------------------------------------------

_ELEMENTWISE_UNARY = {
    "exp": exp, "neg": neg, "sigmoid": sigmoid, "softplus": softplus, "relu": relu,
}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch elementwise ops by tag; binary tags require two operands."""
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise ShapeError(f"elementwise '{op}' needs two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ShapeError(f"elementwise '{op}' takes one operand")
        return _ELEMENTWISE_UNARY[op](a)
    raise ShapeError(f"unknown elementwise op tag '{op}'")


_REDUCES = {
    "sum": reduce_sum, "mean": reduce_mean, "max": reduce_max,
    "variance": reduce_variance,
}


def reduce(op: str, a, axis=None, keepdims=False) -> Tensor:
    if op not in _REDUCES:
        raise ShapeError(f"unknown reduce op tag '{op}'")
    return _REDUCES[op](a, axis, keepdims)
