"""A small reverse-mode autodiff engine on top of numpy.

Every differentiable op appends one record to the active :class:`Tape`
(a thread-local default is used when none is entered).  :func:`backward`
replays the tape in exact reverse recording order, so each record runs after
every record that consumed its output.

Layout follows the usual image convention: NHWC activations, kernels shaped
``[kh, kw, in_ch, out_ch]``, cross-correlation (no kernel flip), and SAME
padding that puts the odd extra pixel on the bottom/right.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import KwsError, ParameterError, ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    """An ndarray plus gradient bookkeeping.

    Leaves created with ``requires_grad=True`` own a zero-initialised
    ``grad`` accumulator of the same shape; op outputs get their gradient
    only transiently during :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape: Tape | None = None

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

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

class Tape:
    """Ordered log of op records ``(output, parents, backward_fn)``."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def clear(self) -> None:
        for out, _, _ in self.records:
            out._tape = None
        self.records.clear()

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        out.requires_grad = True
        out._tape = self
        self.records.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise KwsError("loss was not recorded on this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        try:
            for out, parents, fn in reversed(self.records):
                g = pending.pop(id(out), None)
                if g is None:
                    continue
                for parent, pg in zip(parents, fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    if parent.is_leaf:
                        if parent.grad is None:
                            parent.grad = np.zeros_like(parent.data)
                        parent.grad += pg
                    else:
                        key = id(parent)
                        pending[key] = pending[key] + pg if key in pending else pg
        finally:
            self.clear()


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = [Tape()]
        _local.grad_enabled = True
    return _local.stack


def current_tape() -> Tape:
    return _stack()[-1]


def grad_enabled() -> bool:
    _stack()
    return _local.grad_enabled


@contextmanager
def no_grad():
    _stack()
    prev = _local.grad_enabled
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        current_tape().record(out, tuple(parents), backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise KwsError("loss is not on a tape (no input requires grad, or no_grad was active)")
    loss._tape.backward(loss)


# --------------------------------------------------------------------------
# Elementary ops
# --------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias broadcast along the last axis."""
    b = _as_tensor(b, a.dtype)
    if a.shape != b.shape and not (b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]):
        raise ShapeError(f"add: cannot combine shapes {a.shape} and {b.shape}")
    broadcast = a.shape != b.shape

    def fn(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if broadcast else g
        return g, gb

    return _make(a.data + b.data, (a, b), fn)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        if c.ndim:
            raise ShapeError("mul by a raw array is only supported for scalars")
        return _make(a.data * c, (a,), lambda g: (g * c,))
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def tensor_sum(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``x @ weights + bias`` for ``x [batch, m]``, ``weights [m, n]``, ``bias [n]``."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weights {weights.shape}")

    def fn(g):
        return g @ weights.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(x.data @ weights.data + bias.data, (x, weights, bias), fn)


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg_exp = np.exp(np.minimum(x.data, 0))
    out = np.where(pos, x.data, alpha * np.expm1(np.minimum(x.data, 0))).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * np.where(pos, 1, alpha * neg_exp),))


def sigmoid(x: Tensor) -> Tensor:
    s = (0.5 * (np.tanh(0.5 * x.data) + 1.0)).astype(x.dtype)
    return _make(s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1 - t * t),))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "elu": elu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def dropout(x: Tensor, keep_prob: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout; the identity at inference or with ``keep_prob == 1``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ParameterError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = (rng.random(x.shape) < keep_prob).astype(x.dtype) / x.dtype.type(keep_prob)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


# --------------------------------------------------------------------------
# Convolution and pooling
# --------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, (int, np.integer)) else (int(v[0]), int(v[1]))


def conv_output_size(n: int, k: int, stride: int, padding: str) -> int:
    """Output length of one spatial axis; raises if the kernel does not fit."""
    if stride < 1 or k < 1:
        raise ParameterError(f"kernel and stride must be >= 1, got k={k}, stride={stride}")
    if padding == "SAME":
        return -(-n // stride)
    if padding == "VALID":
        if k > n:
            raise ShapeError(f"kernel {k} larger than input {n} with VALID padding")
        return (n - k) // stride + 1
    raise ParameterError(f"padding must be SAME or VALID, got {padding!r}")


def _same_pad(n: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, stride_h: int = 1, stride_w: int = 1,
           padding: str = "SAME") -> Tensor:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected NHWC input and HWIO kernel, got {x.shape} and {kernel.shape}")
    n, h, w, c = x.shape
    kh, kw, kc, co = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {kc}")
    oh = conv_output_size(h, kh, stride_h, padding)
    ow = conv_output_size(w, kw, stride_w, padding)
    if padding == "SAME":
        (pt, pb), (pl, pr) = _same_pad(h, kh, stride_h), _same_pad(w, kw, stride_w)
    else:
        pt = pb = pl = pr = 0
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x.data
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {xp.shape[1]}x{xp.shape[2]}")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride_h, ::stride_w][:, :oh, :ow]
    # win: (n, oh, ow, c, kh, kw)
    out = np.tensordot(win, kernel.data, axes=([3, 4, 5], [2, 0, 1]))

    def fn(g):
        dk = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        dcols = np.tensordot(g, kernel.data, axes=([3], [3]))  # (n, oh, ow, kh, kw, c)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride_h * (oh - 1) + 1:stride_h,
                    j:j + stride_w * (ow - 1) + 1:stride_w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, pt:pt + h, pl:pl + w, :], dk

    return _make(out.astype(x.dtype, copy=False), (x, kernel), fn)


def pool_output_size(n: int, stride: int) -> int:
    return -(-n // stride)


def maxpool2d(x: Tensor, pool_h: int = 2, pool_w: int = 2, stride=2) -> Tensor:
    """Max pooling with SAME-style ceil sizing and -inf padding.

    Gradient goes to the first maximum of each window in row-major order.
    """
    if pool_h < 1 or pool_w < 1:
        raise ParameterError(f"pool size must be >= 1, got {pool_h}x{pool_w}")
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ParameterError(f"pool stride must be >= 1, got {stride}")
    n, h, w, c = x.shape
    oh, ow = pool_output_size(h, sh), pool_output_size(w, sw)
    (pt, pb), (pl, pr) = _same_pad(h, pool_h, sh), _same_pad(w, pool_w, sw)
    xp = x.data
    if pt + pb + pl + pr:
        xp = np.pad(xp, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    win = sliding_window_view(xp, (pool_h, pool_w), axis=(1, 2))[:, ::sh, ::sw][:, :oh, :ow]
    flat = win.reshape(n, oh, ow, c, pool_h * pool_w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def fn(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for t in range(pool_h * pool_w):
            i, j = divmod(t, pool_w)
            dxp[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :] += np.where(arg == t, g, 0)
        return (dxp[:, pt:pt + h, pl:pl + w, :],)

    return _make(out, (x,), fn)


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------

def softmax(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} do not match")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels must lie in [0, {k - 1}]")
    batch = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = np.mean(lse - z[rows, labels])

    def fn(g):
        d = np.exp(z - lse[:, None])
        d[rows, labels] -= 1.0
        return (d * (g / batch),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), fn)


# --------------------------------------------------------------------------
# Gradient check
# --------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
                      exclude: np.ndarray | None = None) -> float:
    """Max relative error between ``backward`` and central differences.

    ``exclude`` marks coordinates left out of the comparison (e.g. inputs
    sitting on an activation kink).
    """
    base = np.array(x.data, dtype=np.float64 if x.dtype == np.float64 else x.dtype)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape():
        loss = f(probe)
        backward(loss)
    analytic = probe.grad.reshape(-1)

    numeric = np.zeros(base.size)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            if exclude is not None and exclude.reshape(-1)[i]:
                continue
            old = flat[i]
            flat[i] = old + eps
            up = f(Tensor(base.copy())).item()
            flat[i] = old - eps
            down = f(Tensor(base.copy())).item()
            flat[i] = old
            numeric[i] = (up - down) / (2 * eps)

    keep = np.ones(base.size, bool) if exclude is None else ~exclude.reshape(-1)
    if not keep.any():
        return 0.0
    a, n = analytic[keep], numeric[keep]
    err = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(err.max())


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


__all__ = [
    "Tensor", "Tape", "backward", "no_grad", "current_tape",
    "add", "mul", "tensor_sum", "reshape", "flatten", "matmul", "dense",
    "relu", "elu", "sigmoid", "tanh", "ACTIVATIONS", "dropout",
    "conv2d", "maxpool2d", "conv_output_size", "pool_output_size",
    "softmax", "softmax_cross_entropy", "finite_diff_check",
]
