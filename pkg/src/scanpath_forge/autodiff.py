"""Minimal reverse-mode differentiation on numpy arrays.

Operations executed inside an active :class:`Tape` are recorded together
with a closure that maps the output gradient to input gradients.
``Tape.backward`` replays the records in exact reverse order, accumulating
gradients additively into ``Tensor.grad``.  Outside a tape every op is a plain
numpy computation, which is how detached forwards (evaluation, sampling) run.

All values are float64.  Batched layouts put the batch axis first:
images are ``N x C x H x W`` and sequences ``N x C x L``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array with a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """A named, optionally trainable tensor owned by a model."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True, name: str | None = None):
        super().__init__(data, requires_grad=trainable, name=name)
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Tape:
    """Ordered record of executed ops.

    Use as a context manager; ops run inside the block are recorded when at
    least one input requires a gradient.
    """

    def __init__(self) -> None:
        self.records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, output: Tensor, grad: np.ndarray | None = None) -> None:
        """Propagate ``d output`` back to every recorded input.

        ``grad`` defaults to ones (a scalar loss).  The tape is consumed.
        """
        if grad is None:
            grad = np.ones_like(output.data)
        output.grad = np.asarray(grad, dtype=np.float64) + (
            output.grad if output.grad is not None else 0.0
        )
        for inputs, out, fn in reversed(self.records):
            if out.grad is None:
                continue
            in_grads = fn(out.grad)
            for t, g in zip(inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                t.grad = g if t.grad is None else t.grad + g
        self.records.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].records.append((tuple(inputs), out, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def neg(a: Tensor) -> Tensor:
    return _record(Tensor(-a.data), (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    return _record(Tensor(np.log(a.data)), (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _record(Tensor(a.data**2), (a,), lambda g: (2.0 * g * a.data,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient passes only where no clipping happened."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(Tensor(np.clip(a.data, lo, hi)), (a,), lambda g: (g * inside,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    """``x if x >= 0 else slope * x``; the subgradient at 0 is ``slope``."""
    if slope < 0:
        raise ValueError("slope must be >= 0")
    scale = np.where(a.data > 0, 1.0, slope)
    return _record(Tensor(a.data * scale), (a,), lambda g: (g * scale,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


# -- reductions and shape ops ----------------------------------------------


def sum_(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), fn)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    return _record(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return _record(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(Tensor(a.data[index]), (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Join along ``axis`` (the channel axis for batched layouts)."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeMismatch(f"cannot concat {t.shape} with {ref} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def spatial_mean(a: Tensor) -> Tensor:
    """Average over the last two (spatial) axes."""
    return mean(a, axis=(-2, -1))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)

    def fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``W x + b`` applied to the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"dense input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        gx = g @ wd
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    return _record(Tensor(out), inputs, fn)


def global_max_pool_1d(x: Tensor) -> Tensor:
    """Max over the last axis; the first maximal index takes the gradient."""
    if x.shape[-1] < 1:
        raise ShapeMismatch("cannot pool an empty sequence")
    idx = np.argmax(x.data, axis=-1)[..., None]
    out = Tensor(np.take_along_axis(x.data, idx, axis=-1)[..., 0])

    def fn(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return _record(out, (x,), fn)


# -- convolutions ------------------------------------------------------------


def _same_pad(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim - 1}- or {ndim}-d input, got {x.shape}")
    return x, False


def _unbatch(out: Tensor, squeezed: bool) -> Tensor:
    return reshape(out, out.shape[1:]) if squeezed else out


def _geometry2d(h: int, w: int, k: int, stride: int):
    ho, pt, pb = _same_pad(h, k, stride)
    wo, pl, pr = _same_pad(w, k, stride)
    return (ho, wo), ((0, 0), (0, 0), (pt, pb), (pl, pr))


def _window(xp: np.ndarray, di: int, dj: int, out_hw, stride: int) -> np.ndarray:
    ho, wo = out_hw
    return xp[:, :, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride]


def _check_kernel(k: int, stride: int) -> None:
    if k % 2 == 0:
        raise ShapeMismatch(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise ValueError("stride must be >= 1")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation.

    ``x`` is ``C_in x H x W`` or ``N x C_in x H x W``; ``weight`` is
    ``C_out x C_in x k x k``.  Output spatial size is ``ceil(H / stride)``.
    """
    x, squeezed = _batched(x, 4)
    c_out, c_in, k, k2 = weight.shape
    _check_kernel(k, stride)
    if k != k2 or x.shape[1] != c_in:
        raise ShapeMismatch(f"conv2d input {x.shape} vs weight {weight.shape}")
    n, _, h, w = x.shape
    out_hw, pads = _geometry2d(h, w, k, stride)
    wd = weight.data
    if k == 1 and stride == 1:
        cols = None
        out = np.einsum("oc,nchw->nohw", wd[:, :, 0, 0], x.data, optimize=True)
    else:
        xp = np.pad(x.data, pads)
        # N x Ho x Wo x C x k x k, contiguous for a single BLAS call
        cols = np.ascontiguousarray(
            sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, : out_hw[0], : out_hw[1]]
            .transpose(0, 2, 3, 1, 4, 5)
        )
        out = (cols.reshape(n * out_hw[0] * out_hw[1], -1) @ wd.reshape(c_out, -1).T).reshape(n, *out_hw, c_out)
        out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        gx = None
        if cols is None:
            gw = np.einsum("nohw,nchw->oc", g, x.data, optimize=True)[:, :, None, None]
            if x.requires_grad:
                gx = np.einsum("oc,nohw->nchw", wd[:, :, 0, 0], g, optimize=True)
        else:
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
            gw = (g2.T @ cols.reshape(g2.shape[0], -1)).reshape(wd.shape)
            if x.requires_grad:
                dcols = (g2 @ wd.reshape(c_out, -1)).reshape(n, *out_hw, c_in, k, k)
                dcols = dcols.transpose(4, 5, 0, 3, 1, 2)  # k, k, N, C, Ho, Wo
                gxp = np.zeros((n, c_in, h + sum(pads[2]), w + sum(pads[3])))
                for di in range(k):
                    for dj in range(k):
                        _window(gxp, di, dj, out_hw, stride)[...] += dcols[di, dj]
                gx = gxp[:, :, pads[2][0] : pads[2][0] + h, pads[3][0] : pads[3][0] + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _unbatch(_record(Tensor(np.ascontiguousarray(out)), inputs, fn), squeezed)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Per-channel same-padded cross-correlation; ``weight`` is ``C x 1 x k x k``."""
    x, squeezed = _batched(x, 4)
    c, one, k, k2 = weight.shape
    _check_kernel(k, stride)
    if one != 1 or k != k2 or x.shape[1] != c:
        raise ShapeMismatch(f"depthwise input {x.shape} vs weight {weight.shape}")
    n, _, h, w = x.shape
    out_hw, pads = _geometry2d(h, w, k, stride)
    xp = np.pad(x.data, pads)
    wd = weight.data[:, 0]
    out = np.zeros((n, c, *out_hw))
    for di in range(k):
        for dj in range(k):
            out += _window(xp, di, dj, out_hw, stride) * wd[None, :, di, dj, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for di in range(k):
            for dj in range(k):
                gw[:, 0, di, dj] = np.einsum("nchw,nchw->c", g, _window(xp, di, dj, out_hw, stride))
                if gxp is not None:
                    _window(gxp, di, dj, out_hw, stride)[...] += g * wd[None, :, di, dj, None, None]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, pads[2][0] : pads[2][0] + h, pads[3][0] : pads[3][0] + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _unbatch(_record(Tensor(out), inputs, fn), squeezed)


def depthwise_separable_block(
    x: Tensor,
    depth_weights: Tensor,
    point_weights: Tensor,
    stride: int = 1,
    slope: float = 0.2,
) -> Tensor:
    """Depthwise k x k conv then pointwise 1 x 1 conv, each followed by Leaky ReLU."""
    if point_weights.ndim != 4 or point_weights.shape[2:] != (1, 1):
        raise ShapeMismatch(f"pointwise weights must be C_out x C x 1 x 1, got {point_weights.shape}")
    h = leaky_relu(depthwise_conv2d(x, depth_weights, stride=stride), slope)
    return leaky_relu(conv2d(h, point_weights), slope)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation along the last axis.

    ``x`` is ``C_in x L`` or ``N x C_in x L``; ``weight`` is ``C_out x C_in x k``.
    """
    x, squeezed = _batched(x, 3)
    c_out, c_in, k = weight.shape
    _check_kernel(k, 1)
    if x.shape[1] != c_in:
        raise ShapeMismatch(f"conv1d input {x.shape} vs weight {weight.shape}")
    length = x.shape[2]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p)))
    cols = sliding_window_view(xp, k, axis=2)  # N, C, L, k
    out = np.tensordot(cols, weight.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)
    wd = weight.data

    def fn(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        gx = None
        if x.requires_grad:
            dcols = np.tensordot(g, wd, axes=([1], [0]))  # N, L, C, k
            gxp = np.zeros(xp.shape)
            for j in range(k):
                gxp[:, :, j : j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, p : p + length]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _unbatch(_record(Tensor(np.ascontiguousarray(out)), inputs, fn), squeezed)


# -- utilities ---------------------------------------------------------------


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.2) -> np.ndarray:
    """He/Kaiming uniform init for Leaky ReLU stacks."""
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def numerical_grad(f: Callable[[], float], array: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``array`` (mutated in place, restored)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
