"""Dense tensors with tape-based reverse-mode differentiation.

Only the primitives the adapters, networks and training loop need are
provided. There is no broadcasting: the few shape-mixing cases (per-channel
bias, per-sample channel scaling, noise injection) get dedicated ops.

Operations record onto the innermost active :class:`Tape`. Outside a tape
nothing is recorded, so inference runs without bookkeeping::

    with Tape() as tape:
        loss = mean(relu(matmul(x, w)))
    backward(tape, loss)
    w.grad
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from colora import kernels
from colora.errors import NumericalError, ShapeError, TapeError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype: type = np.float32
_tape_stack: list["Tape"] = []


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(name: str) -> None:
    global _default_dtype
    try:
        _default_dtype = _DTYPES[name]
    except KeyError:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(_DTYPES)}") from None


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default dtype ("float32" or "float64")."""
    global _default_dtype
    previous = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype, copy=True)
        if arr.size == 0:
            raise ShapeError("tensors must have positive extents")
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

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

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications, consumed by :func:`backward`."""

    entries: list[TapeEntry] = field(default_factory=list)

    def __post_init__(self):
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, fn) -> None:
        self.entries.append(TapeEntry(op, inputs, output, fn))
        self._produced.add(id(output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def __len__(self) -> int:
        return len(self.entries)


@contextlib.contextmanager
def no_tape() -> Iterator[None]:
    """Suspend recording (e.g. generating fakes for a critic step)."""
    saved = list(_tape_stack)
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack.extend(saved)


def _emit(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], fn) -> Tensor:
    _check_finite(out, op)
    tape = _tape_stack[-1] if _tape_stack else None
    if tape is not None and any(t.requires_grad for t in inputs):
        result = Tensor._wrap(out, requires_grad=True)
        tape.record(op, inputs, result, fn)
        return result
    return Tensor._wrap(out)


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``.grad`` of every trainable leaf used on ``tape`` with dloss/dleaf.

    Leaves that are on the tape but not connected to ``loss`` receive zeros.
    Existing ``.grad`` values are overwritten, not accumulated.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise TapeError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for entry in tape.entries:
        for inp in entry.inputs:
            if inp.requires_grad and not tape.produced(inp):
                leaves.setdefault(id(inp), inp)

    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        else:
            g = np.array(g, dtype=leaf.dtype).reshape(leaf.shape)
            _check_finite(g, "backward")
        leaf.grad = g


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _emit("matmul", ad @ bd, (a, b), grad)


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {t.shape}")
    return _emit("transpose", np.ascontiguousarray(t.data.T), (t,),
                 lambda g: (np.ascontiguousarray(g.T),))


def permute(t: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {t.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _emit("permute", np.ascontiguousarray(t.data.transpose(axes)), (t,),
                 lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Stride-1 same-padded cross-correlation.

    ``x`` is ``[c_in, h, w]`` or batched ``[n, c_in, h, w]``; ``w`` is
    ``[c_out, c_in, k, k]`` with odd ``k``.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be [c_out, c_in, k, k], got {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or x.shape[-3] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {w.shape}")

    xd = x.data if batched else x.data[None]
    n, c, h, wd = xd.shape
    o = w.shape[0]
    w2 = w.data.reshape(o, c * k * k)
    p = k // 2
    if k == 1:
        cols = np.ascontiguousarray(xd.transpose(1, 0, 2, 3)).reshape(c, n * h * wd)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = kernels.im2col(xp, k, h, wd)
    out = np.ascontiguousarray((w2 @ cols).reshape(o, n, h, wd).transpose(1, 0, 2, 3))
    if not batched:
        out = out[0]

    def grad(g):
        gb = g if batched else g[None]
        gflat = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(o, n * h * wd)
        gx = gw = None
        if w.requires_grad:
            gw = (gflat @ cols.T).reshape(w.shape)
        if x.requires_grad:
            dcols = w2.T @ gflat
            if k == 1:
                gx = np.ascontiguousarray(dcols.reshape(c, n, h, wd).transpose(1, 0, 2, 3))
            else:
                gx = kernels.col2im(dcols, n, c, h, wd, k)[:, :, p:p + h, p:p + wd]
            gx = gx if batched else gx[0]
        return gx, gw

    return _emit("conv2d", out, (x, w), grad)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(t: Tensor, s: float) -> Tensor:
    s = t.dtype.type(s)
    return _emit("scale", t.data * s, (t,), lambda g: (g * s,))


def relu(t: Tensor) -> Tensor:
    # derivative at exactly 0 is 1 so zero-initialised adapters still train
    mask = t.data >= 0
    zero = t.dtype.type(0)
    return _emit("relu", np.where(mask, t.data, zero), (t,),
                 lambda g: (np.where(mask, g, zero),))


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    mask = t.data >= 0
    slope = t.dtype.type(slope)
    out = np.where(mask, t.data, t.data * slope)
    return _emit("leaky_relu", out, (t,), lambda g: (np.where(mask, g, g * slope),))


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _emit("tanh", y, (t,), lambda g: (g * (1 - y * y),))


def rsqrt(t: Tensor, eps: float = 1e-8) -> Tensor:
    """Elementwise ``1 / sqrt(t + eps)``."""
    y = 1.0 / np.sqrt(t.data + t.dtype.type(eps))
    return _emit("rsqrt", y, (t,), lambda g: (g * (-0.5) * y * y * y,))


def _as_batched(op: str, t: Tensor) -> None:
    if t.ndim != 4:
        raise ShapeError(f"{op} expects [n, c, h, w], got {t.shape}")


def upsample2x_nearest(t: Tensor) -> Tensor:
    _as_batched("upsample2x_nearest", t)
    out = kernels.upsample2x(np.ascontiguousarray(t.data))
    return _emit("upsample2x_nearest", out, (t,),
                 lambda g: (kernels.upsample2x_backward(np.ascontiguousarray(g)),))


def avgpool2x(t: Tensor) -> Tensor:
    _as_batched("avgpool2x", t)
    if t.shape[2] % 2 or t.shape[3] % 2:
        raise ShapeError(f"avgpool2x needs even spatial extents, got {t.shape}")
    out = kernels.avgpool2x(np.ascontiguousarray(t.data))
    return _emit("avgpool2x", out, (t,),
                 lambda g: (kernels.avgpool2x_backward(np.ascontiguousarray(g)),))


# ---------------------------------------------------------------- reductions and reshapes


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum(t: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    axes = _norm_axis(axis, t.ndim)
    out = np.sum(t.data, axis=axes, keepdims=False)
    out = np.asarray(out, dtype=t.dtype)

    def grad(g):
        return (np.broadcast_to(np.expand_dims(g, axes), t.shape).copy(),)

    return _emit("sum", out, (t,), grad)


def mean(t: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, t.ndim)
    count = int(np.prod([t.shape[a] for a in axes]))
    out = np.asarray(np.mean(t.data, axis=axes), dtype=t.dtype)
    inv = t.dtype.type(1.0 / count)

    def grad(g):
        return (np.broadcast_to(np.expand_dims(g * inv, axes), t.shape).copy(),)

    return _emit("mean", out, (t,), grad)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"reshape: cannot view {t.shape} as {shape}")
    return _emit("reshape", t.data.reshape(shape).copy(), (t,),
                 lambda g: (g.reshape(t.shape),))


def expand_batch(t: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``t`` along a new leading axis."""
    out = np.broadcast_to(t.data[None], (n,) + t.shape).copy()
    return _emit("expand_batch", out, (t,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------- channel-wise helpers


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """``x[n, c, h, w] * s[n, c]``; the style modulation of an input feature map."""
    _as_batched("scale_channels", x)
    if s.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: scales {s.shape} do not match {x.shape}")
    xd, sd = x.data, s.data
    out = xd * sd[:, :, None, None]

    def grad(g):
        return (g * sd[:, :, None, None] if x.requires_grad else None,
                np.einsum("nchw,nchw->nc", g, xd) if s.requires_grad else None)

    return _emit("scale_channels", out, (x, s), grad)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[n, c, h, w] + b[c]``."""
    _as_batched("add_channel_bias", x)
    if b.shape != (x.shape[1],):
        raise ShapeError(f"add_channel_bias: bias {b.shape} vs input {x.shape}")
    return _emit("add_channel_bias", x.data + b.data[None, :, None, None], (x, b),
                 lambda g: (g, g.sum(axis=(0, 2, 3))))


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[n, d] + b[d]``."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_row_bias: bias {b.shape} vs input {x.shape}")
    return _emit("add_row_bias", x.data + b.data[None, :], (x, b),
                 lambda g: (g, g.sum(axis=0)))


def inject_noise(x: Tensor, noise: np.ndarray, strength: Tensor) -> Tensor:
    """``x + strength * noise`` with a fixed ``[n, 1, h, w]`` noise map and scalar strength."""
    _as_batched("inject_noise", x)
    if noise.shape != (x.shape[0], 1) + x.shape[2:] or strength.size != 1:
        raise ShapeError(f"inject_noise: noise {noise.shape} / strength {strength.shape} vs {x.shape}")
    nd = noise.astype(x.dtype, copy=False)
    sd = strength.data.reshape(())
    out = x.data + sd * nd

    def grad(g):
        return (g, np.asarray(np.sum(g * nd)).reshape(strength.shape) if strength.requires_grad else None)

    return _emit("inject_noise", out, (x, strength), grad)
