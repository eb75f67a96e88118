"""Dense tensors with reverse-mode differentiation.

Every kernel that touches a tensor requiring gradients appends an entry to
the tape (a ``_TapeEntry`` holding the inputs, a monotonically increasing
sequence number and a closure mapping the output gradient to input
gradients).  ``backward`` collects the entries reachable from the loss and
replays them once each in reverse sequence order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

_DEFAULT_DTYPE = np.float64
_seq = itertools.count()
_state = threading.local()


def set_default_dtype(dtype) -> None:
    """Switch the dtype used for new tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype!r}; use float64 or float32")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class _TapeEntry:
    __slots__ = ("seq", "inputs", "backward", "kernel")

    def __init__(self, inputs, backward, kernel):
        self.seq = next(_seq)
        self.inputs = inputs
        self.backward = backward
        self.kernel = kernel


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_entry", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._entry = None
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators ------------------------------------------------------
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

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out: np.ndarray, inputs, backward, kernel: str) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._entry = None
    t.requires_grad = False
    if grad_enabled() and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        t._entry = _TapeEntry(tuple(inputs), backward, kernel)
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(kernel: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kernel}: shape mismatch {a.shape} vs {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a plain scalar."""
    a = as_tensor(a)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        # (..., n) @ (n, m): fold the leading axes so the weight grad is one GEMM
        lead = a.shape[:-1]
        flat = matmul(reshape(a, (-1, a.shape[-1])), b)
        return reshape(flat, lead + (b.shape[1],))
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        ad, bd = a.data, b.data
        if b.ndim == 1:
            if a.requires_grad:
                ga = _unbroadcast(g[..., None] * bd, a.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g[..., None])[..., 0], b.shape)
            return ga, gb
        if a.ndim == 1:
            if a.requires_grad:
                ga = _unbroadcast(np.matmul(g[..., None, :], np.swapaxes(bd, -1, -2))[..., 0, :], a.shape)
            if b.requires_grad:
                gb = _unbroadcast(ad[:, None] * g[..., None, :], b.shape)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), bw, "matmul")


# -- shape manipulation -----------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: no inputs")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax
        ):
            raise ValueError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _record(out, tensors, bw, "concat")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data
    out = a.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(out, (a,), bw, "slice")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` along the first axis."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        flat = g.reshape((-1,) + a.shape[1:])
        np.add.at(full, idx.ravel(), flat)
        return (full,)

    return _record(out, (a,), bw, "take_rows")


def scatter_rows(base, idx, values) -> Tensor:
    """Copy of ``base`` with rows ``idx`` replaced by ``values`` (idx unique)."""
    base, values = as_tensor(base), as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    if values.shape != (len(idx),) + base.shape[1:]:
        raise ValueError(f"scatter_rows: shape mismatch {base.shape} vs {values.shape}")
    out = base.data.copy()
    out[idx] = values.data

    def bw(g):
        gb = None
        if base.requires_grad:
            gb = g.copy()
            gb[idx] = 0.0
        return gb, g[idx]

    return _record(out, (base, values), bw, "scatter_rows")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _record(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


# -- reductions -------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities ---------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return _record(np.where(keep, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * keep,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    A slice with every entry masked yields all zeros.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record(out, (a,), bw, "softmax")


def dropout(a, p: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: probability {p} outside [0, 1)")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: train mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.dtype)
    return _record(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# -- backward -----------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape."""
    if loss.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    entries = {}
    stack = [loss]
    seen = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._entry is not None:
            entries[t._entry.seq] = t
            stack.extend(x for x in t._entry.inputs if x.requires_grad)

    grads = {id(loss): np.ones_like(loss.data)}
    for seq in sorted(entries, reverse=True):
        out = entries[seq]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        _accumulate(out, g)
        in_grads = out._entry.backward(g)
        for x, gx in zip(out._entry.inputs, in_grads):
            if gx is None or not x.requires_grad:
                continue
            if x._entry is None:
                _accumulate(x, gx)
            elif id(x) in grads:
                grads[id(x)] = grads[id(x)] + gx
            else:
                grads[id(x)] = gx


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    if t.grad is None:
        # grads are never mutated in place, so sharing the buffer is safe
        t.grad = g
    else:
        t.grad = t.grad + g
