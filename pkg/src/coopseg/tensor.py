"""Minimal dense tensor library with reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Every differentiable operation records a node on
the active gradient tape; ``backward`` replays the tape in exact reverse
execution order and accumulates gradients into ``requires_grad`` leaves.
The op set is intentionally small: just what a two-branch segmentation
network with a fusion decoder needs. Everything runs on CPU; float64 is the
test/verification precision and float32 the training precision.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import special


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class GradientError(RuntimeError):
    """Raised when a backward pass is requested on an invalid target."""


# --------------------------------------------------------------------------
# Tape machinery
# --------------------------------------------------------------------------


class TapeNode:
    """One executed op: its output, its tensor inputs, and a backward rule.

    ``backward_fn`` maps the upstream gradient (an ndarray shaped like the
    output) to a tuple of gradients aligned with ``inputs``; entries may be
    None for non-differentiable arguments.
    """

    __slots__ = ("op", "inputs", "backward_fn", "out", "tape")

    def __init__(self, op: str, inputs, backward_fn, out, tape):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.out = out
        self.tape = tape


class GradTape:
    """Ordered record of executed ops, replayed in reverse by ``backward``."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self):
        return len(self.nodes)


class _EngineState:
    __slots__ = ("enabled", "tape")

    def __init__(self):
        self.enabled = True
        self.tape: Optional[GradTape] = None


_state = _EngineState()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / oracle paths)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


_branch_sink: Optional[list] = None


@contextmanager
def record_branch_pattern(sink: list):
    """Log a fingerprint of every branch decision (relu signs, max winners,
    clip saturation) executed inside the block.

    Two forward passes append equal sequences exactly when every piecewise
    op stayed on the same linear piece, i.e. the function was smooth between
    the evaluation points. Finite-difference probes use this to detect steps
    that straddle a kink, where the central difference does not estimate the
    derivative and a comparison against it is meaningless.
    """
    global _branch_sink
    prev = _branch_sink
    _branch_sink = sink
    try:
        yield sink
    finally:
        _branch_sink = prev


def _log_branch(mask: np.ndarray):
    if _branch_sink is not None:
        _branch_sink.append(hash(mask.tobytes()))


def _record(op, inputs, backward_fn, out):
    if _state.tape is None:
        _state.tape = GradTape()
    node = TapeNode(op, inputs, backward_fn, out, _state.tape)
    _state.tape.nodes.append(node)
    out.node = node


class Tensor:
    """Dense N-d array of reals, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shape, unlike unconditional copy
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._non_scalar()

    def _non_scalar(self):
        raise GradientError(f"item() on non-scalar tensor of shape {self.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def gelu(self):
        return gelu(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, visit_log: Optional[list] = None):
        backward(self, visit_log=visit_log)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors: Optional[Tensor]) -> bool:
    if not _state.enabled:
        return False
    return any(t is not None and (t.requires_grad or t.node is not None) for t in tensors)


def _from_op(op: str, data: np.ndarray, inputs: Sequence[Optional[Tensor]], backward_fn) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*inputs):
        out.requires_grad = True
        _record(op, tuple(inputs), backward_fn, out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# Elementwise arithmetic (numpy broadcasting; same-shape-only wrapper below)
# --------------------------------------------------------------------------


def _raw(x):
    # python scalars stay raw so numpy's weak promotion keeps the array dtype
    return x if isinstance(x, (int, float)) else np.asarray(x)


def add(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    da = ta.data if ta is not None else _raw(a)
    db = tb.data if tb is not None else _raw(b)
    out = da + db

    def bw(g):
        return (
            _unbroadcast(g, da.shape) if ta is not None else None,
            _unbroadcast(g, db.shape) if tb is not None else None,
        )

    return _from_op("add", out, (ta, tb), bw)


def sub(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    da = ta.data if ta is not None else _raw(a)
    db = tb.data if tb is not None else _raw(b)
    out = da - db

    def bw(g):
        return (
            _unbroadcast(g, da.shape) if ta is not None else None,
            _unbroadcast(-g, db.shape) if tb is not None else None,
        )

    return _from_op("sub", out, (ta, tb), bw)


def mul(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    da = ta.data if ta is not None else _raw(a)
    db = tb.data if tb is not None else _raw(b)
    out = da * db

    def bw(g):
        return (
            _unbroadcast(g * db, da.shape) if ta is not None else None,
            _unbroadcast(g * da, db.shape) if tb is not None else None,
        )

    return _from_op("mul", out, (ta, tb), bw)


def div(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    da = ta.data if ta is not None else _raw(a)
    db = tb.data if tb is not None else _raw(b)
    out = da / db

    def bw(g):
        return (
            _unbroadcast(g / db, da.shape) if ta is not None else None,
            _unbroadcast(-g * da / (db * db), db.shape) if tb is not None else None,
        )

    return _from_op("div", out, (ta, tb), bw)


def neg(a: Tensor) -> Tensor:
    return _from_op("neg", -a.data, (a,), lambda g: (-g,))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Pointwise add/mul with strictly identical shapes (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise '{op}': shapes {a.shape} and {b.shape} differ")
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"elementwise: unknown op {op!r} (expected 'add' or 'mul')")


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _from_op("matmul", out, (a, b), bw)


# --------------------------------------------------------------------------
# Convolution (cross-correlation, zero padding) via im2col
# --------------------------------------------------------------------------


def _conv_out_dim(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv2d: input size {size} with kernel {k}, stride {stride}, "
            f"padding {padding} gives a non-integral output dimension"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    b, c, h, w = x.shape
    oh = _conv_out_dim(h, kh, stride, padding)
    ow = _conv_out_dim(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: B x C x OH x OW x KH x KW
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, padding, oh, ow) -> np.ndarray:
    b, c, h, w = x_shape
    dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    g = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g[:, :, :, :, i, j]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + w]
    return dxp


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of B x Cin x H x W input with Cout x Cin x kh x kw kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, cin, h, w = x.shape
    cout, kc, kh, kw = kernel.shape
    if kc != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernel.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)

    def bw(g):
        gcols = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
        gw = (gcols.T @ cols).reshape(cout, cin, kh, kw)
        gx = _col2im(gcols @ wmat, x.shape, kh, kw, stride, padding, oh, ow)
        return gx, gw

    return _from_op("conv2d", np.ascontiguousarray(out), (x, kernel), bw)


# --------------------------------------------------------------------------
# Shape ops
# --------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return _from_op("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _from_op("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: need at least one tensor")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _from_op("concat", out, tuple(xs), bw)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Channel-axis concatenation of B x Ci x H x W maps, in argument order."""
    xs = [as_tensor(x) for x in xs]
    for x in xs:
        if x.ndim != 4:
            raise ShapeError(f"concat_channels: expected 4-d maps, got shape {x.shape}")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: batch/spatial dims differ: {ref} vs {x.shape}")
    return concat(xs, axis=1)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """Replicate each pixel of a B x C x H x W map into a 2x2 block."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2x_nearest: expected 4-d map, got shape {x.shape}")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _from_op("upsample2x_nearest", out, (x,), bw)


def avgpool2x(x: Tensor) -> Tensor:
    """Average non-overlapping 2x2 blocks; exact inverse of upsample2x_nearest."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avgpool2x: expected 4-d map, got shape {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x: spatial dims must be even, got {h}x{w}")
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return _from_op("avgpool2x", out, (x,), bw)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _from_op("sum", out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes)
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return _from_op("mean", out, (a,), bw)


def amax(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    """Maximum over axes; ties share the gradient equally."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    mx = a.data.max(axis=axes, keepdims=True)
    out = mx if keepdims else mx.squeeze(axis=axes)
    if _branch_sink is not None:
        _log_branch(a.data == mx)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        mask = (a.data == mx).astype(a.data.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (mask * g,)

    return _from_op("amax", out, (a,), bw)


# --------------------------------------------------------------------------
# Nonlinearities and normalization
# --------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    if _branch_sink is not None:
        _log_branch(a.data > 0)
    # subgradient at 0 is defined as 0
    return _from_op("relu", out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _from_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """x * Phi(x) with the exact standard-normal CDF (erf form)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    out = x * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _from_op("gelu", out, (a,), bw)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"activation: unknown kind {kind!r}")


def softmax_lastdim(a: Tensor) -> Tensor:
    """Row-stable softmax along the last dimension."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return _from_op("softmax_lastdim", out, (a,), bw)


def layernorm_lastdim(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-token normalization over the last dim, then affine gamma/beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _from_op("layernorm_lastdim", out, (x, gamma, beta), bw)


def batchnorm_channel(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization for B x C x H x W maps.

    In training mode statistics come from the batch and the running buffers
    are updated in place (momentum 0.1, unbiased variance, matching the
    common framework convention); in eval mode the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm_channel: expected 4-d map, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // c
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean += momentum * (mu - running_mean)
        running_var += momentum * (unbiased - running_var)
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    shape = (1, c, 1, 1)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape)
    xhat = (x.data - mu.reshape(shape)) * inv
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = inv * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return _from_op("batchnorm_channel", out, (x, gamma, beta), bw)


def norm(x: Tensor, kind: str, gamma: Tensor, beta: Tensor, eps: float = 1e-5, **kwargs) -> Tensor:
    if kind == "layernorm_lastdim":
        return layernorm_lastdim(x, gamma, beta, eps=eps)
    if kind == "batchnorm_channel":
        return batchnorm_channel(x, gamma, beta, eps=eps, **kwargs)
    raise ValueError(f"norm: unknown kind {kind!r}")


# --------------------------------------------------------------------------
# Misc pointwise
# --------------------------------------------------------------------------


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    if _branch_sink is not None:
        _log_branch(mask)
    return _from_op("clip", out, (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _from_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


# --------------------------------------------------------------------------
# Backward pass
# --------------------------------------------------------------------------


def backward(loss: Tensor, visit_log: Optional[list] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The loss must be a scalar produced by taped ops. Nodes are visited in
    exact reverse execution order; a node is skipped when no gradient has
    reached its output. ``visit_log``, when given, collects visited op names.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    tape = loss.node.tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holder: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        holder.pop(id(node.out), None)
        if visit_log is not None:
            visit_log.append(node.op)
        grads = node.backward_fn(g)
        for t, ig in zip(node.inputs, grads):
            if t is None or ig is None or not (t.requires_grad or t.node is not None):
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + ig
            else:
                pending[key] = ig
                holder[key] = t
    for key, g in pending.items():
        leaf = holder[key]
        if leaf.requires_grad:
            leaf.grad = g if leaf.grad is None else leaf.grad + g
    # this tape is spent; the next recorded op starts a fresh one
    if _state.tape is tape:
        _state.tape = None


def active_tape() -> Optional[GradTape]:
    return _state.tape


def reset_tape() -> None:
    """Drop the current recording tape (used between independent steps)."""
    _state.tape = None
