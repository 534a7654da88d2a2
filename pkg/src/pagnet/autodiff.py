"""Dense float64 tensors and a recorded tape for reverse-mode differentiation.

Every op is a pure function of its inputs.  An op records itself on a
:class:`Tape` only when at least one input was produced by (or watched on)
that tape; ops on plain tensors just compute values.  This keeps the numeric
finite-difference path (constants) and the analytic path (taped) on exactly
the same forward code.

Feature maps are laid out channel, height, width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ConvSpec",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "square",
    "absolute",
    "log",
    "arccos",
    "clip",
    "log_sigmoid",
    "tsum",
    "tmean",
    "softmax",
    "log_softmax",
    "l2_normalize",
    "channel",
    "reshape",
    "select_labels",
    "frozen_norm",
    "conv2d",
    "conv2d_perforated",
    "im2col_active",
    "gather_pixels",
    "scatter_pixels",
    "upsample2x",
    "avgpool2x",
    "grad_check",
]


class Tensor:
    """A float64 array, optionally bound to a node of a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    dims = shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

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

    def __repr__(self) -> str:
        taped = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{taped})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple
    backward: Optional[Callable]


class Tape:
    """Ordered record of ops.  Single writer: never share one across threads."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, value) -> Tensor:
        """Register ``value`` as a leaf and return the taped tensor."""
        data = value.data if isinstance(value, Tensor) else value
        self.nodes.append(Node("leaf", (), None))
        return Tensor(np.array(data, dtype=np.float64), self, len(self.nodes) - 1)

    def record(self, op: str, value: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
        ids = tuple(t.node if isinstance(t, Tensor) and t.tape is self else None for t in inputs)
        self.nodes.append(Node(op, ids, backward))
        return Tensor(value, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {loss.node: np.ones_like(loss.data)}
        for nid in range(loss.node, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.backward is None:
                continue
            for inp, ig in zip(node.inputs, node.backward(g)):
                if inp is None or ig is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + ig
                else:
                    grads[inp] = ig
        self.grads = grads

    def grad(self, t: Tensor) -> np.ndarray:
        if t.tape is not self:
            raise ValueError("tensor is not on this tape")
        g = self.grads.get(t.node)
        return np.zeros_like(t.data) if g is None else g


def _tape_of(inputs) -> Optional[Tape]:
    tape = None
    for t in inputs:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError("inputs are recorded on different tapes")
    return tape


def _emit(op: str, value: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op} produced non-finite values")
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(op, value, inputs, backward)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    return _emit("add", ad + bd, (a, b),
                 lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    return _emit("sub", ad - bd, (a, b),
                 lambda g: (_unbroadcast(g, ad.shape), -_unbroadcast(g, bd.shape)))


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    return _emit("scale", _data(a) * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    ad = _data(a)
    on = ad > 0
    return _emit("relu", np.where(on, ad, 0.0), (a,), lambda g: (g * on,))


def square(a) -> Tensor:
    ad = _data(a)
    return _emit("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def absolute(a) -> Tensor:
    # subgradient at 0 is 0
    ad = _data(a)
    return _emit("abs", np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def log(a) -> Tensor:
    ad = _data(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _emit("log", out, (a,), lambda g: (g / ad,))


def arccos(a) -> Tensor:
    ad = _data(a)
    if np.any(np.abs(ad) >= 1.0):
        raise FloatingPointError("arccos derivative is singular at |x| >= 1; clip first")
    return _emit("arccos", np.arccos(ad), (a,), lambda g: (-g / np.sqrt(1.0 - ad * ad),))


def clip(a, lo: float, hi: float, passthrough: bool = False) -> Tensor:
    """Clamp to ``[lo, hi]``.  ``passthrough`` keeps the identity gradient
    outside the range instead of zeroing it."""
    ad = _data(a)
    if passthrough:
        return _emit("clip", np.clip(ad, lo, hi), (a,), lambda g: (g,))
    inside = (ad >= lo) & (ad <= hi)
    return _emit("clip", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def log_sigmoid(a) -> Tensor:
    ad = _data(a)
    out = -np.logaddexp(0.0, -ad)
    return _emit("log_sigmoid", out, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, ad)),))


# ----------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return _emit("sum", np.asarray(out, dtype=np.float64), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    n = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(a, axis: int = 0) -> Tensor:
    ad = _data(a)
    e = np.exp(ad - ad.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (a,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = 0) -> Tensor:
    ad = _data(a)
    shifted = ad - ad.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    y = np.exp(out)
    return _emit("log_softmax", out, (a,),
                 lambda g: (g - y * g.sum(axis=axis, keepdims=True),))


def l2_normalize(a, axis: int = 0, min_norm: float = 1e-12) -> Tensor:
    ad = _data(a)
    norm = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    if np.any(norm < min_norm):
        raise ValueError("cannot normalize a zero-length vector")
    y = ad / norm
    return _emit("l2_normalize", y, (a,),
                 lambda g: ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,))


# ------------------------------------------------------------------- indexing


def channel(a, k: int) -> Tensor:
    ad = _data(a)

    def backward(g):
        out = np.zeros_like(ad)
        out[k] = g
        return (out,)

    return _emit("channel", ad[k].copy(), (a,), backward)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    return _emit("reshape", ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def select_labels(a, labels: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """Pick ``a[labels[y, x], y, x]`` at every valid pixel (row-major order)."""
    ad = _data(a)
    if valid is None:
        valid = np.ones(labels.shape, dtype=bool)
    ys, xs = np.nonzero(valid)
    ks = labels[ys, xs].astype(np.intp)

    def backward(g):
        out = np.zeros_like(ad)
        np.add.at(out, (ks, ys, xs), g)
        return (out,)

    return _emit("select_labels", ad[ks, ys, xs], (a,), backward)


def gather_pixels(a, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """C x H x W -> C x n, the columns at the given coordinates."""
    ad = _data(a)

    def backward(g):
        out = np.zeros_like(ad)
        np.add.at(out, (slice(None), ys, xs), g)
        return (out,)

    return _emit("gather", ad[:, ys, xs], (a,), backward)


def scatter_pixels(v, ys: np.ndarray, xs: np.ndarray, hw: tuple) -> Tensor:
    """C x n -> C x H x W with zeros away from the given coordinates."""
    vd = _data(v)
    out = np.zeros((vd.shape[0],) + tuple(hw))
    out[:, ys, xs] = vd
    return _emit("scatter", out, (v,), lambda g: (g[:, ys, xs],))


# ----------------------------------------------------------------- resampling


def upsample2x(a) -> Tensor:
    ad = _data(a)
    out = ad.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        c, h, w = ad.shape
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _emit("upsample2x", out, (a,), backward)


def avgpool2x(a) -> Tensor:
    ad = _data(a)
    c, h, w = ad.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    out = ad.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return _emit("avgpool2x", out, (a,),
                 lambda g: (0.25 * g.repeat(2, axis=-2).repeat(2, axis=-1),))


# --------------------------------------------------------------- normalization


def frozen_norm(x, gain, shift, mean: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Batch normalization with constant moments: an affine map per channel."""
    xd, gd, sd = _data(x), _data(gain), _data(shift)
    inv = 1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + eps)
    xhat = (xd - np.asarray(mean, dtype=np.float64)[:, None, None]) * inv[:, None, None]
    out = xhat * gd[:, None, None] + sd[:, None, None]

    def backward(g):
        return (g * (gd * inv)[:, None, None],
                (g * xhat).sum(axis=(1, 2)),
                g.sum(axis=(1, 2)))

    return _emit("frozen_norm", out, (x, gain, shift), backward)


# ---------------------------------------------------------------- convolution


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry.  Padding is always zero "same"; stride is always 1."""

    out_channels: int
    in_channels: int
    kh: int = 3
    kw: int = 3
    dilation: int = 1

    def __post_init__(self):
        if self.dilation < 0:
            raise ValueError("dilation must be non-negative")

    @property
    def kernel_dims(self) -> tuple:
        return (self.out_channels, self.in_channels, self.kh, self.kw)


def _check_conv(xd: np.ndarray, kd: np.ndarray, dilation: int) -> None:
    if xd.ndim != 3 or kd.ndim != 4:
        raise ValueError(f"conv expects CxHxW input and 4-d kernel, got {xd.shape}, {kd.shape}")
    if kd.shape[1] != xd.shape[0]:
        raise ValueError(f"kernel expects {kd.shape[1]} input channels, input has {xd.shape[0]}")
    if dilation < 1:
        raise ValueError(f"convolution needs dilation >= 1, got {dilation}")
    _, h, w = xd.shape
    _, _, kh, kw = kd.shape
    if dilation * (kh - 1) + 1 > 2 * h or dilation * (kw - 1) + 1 > 2 * w:
        raise ValueError(f"dilation {dilation} gives a receptive field beyond twice the {h}x{w} input")


def _offsets(k: int, d: int) -> tuple:
    before = d * (k // 2)
    after = d * (k - 1 - k // 2)
    return before, after


def im2col_active(xd: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                  kh: int, kw: int, dilation: int) -> np.ndarray:
    """Patch matrix with one row per active pixel.

    Column index of tap (c, i, j) is ``c + C * (i + kh * j)``: channel varies
    fastest, then kernel row, then kernel column.
    """
    c = xd.shape[0]
    pt, pb = _offsets(kh, dilation)
    pl, pr = _offsets(kw, dilation)
    padded = np.pad(xd, ((0, 0), (pt, pb), (pl, pr)))
    patches = np.empty((len(ys), kw, kh, c))
    for j in range(kw):
        cols = xs + dilation * j
        for i in range(kh):
            patches[:, j, i, :] = padded[:, ys + dilation * i, cols].T
    return patches.reshape(len(ys), kw * kh * c)


def _col2im(dpatches: np.ndarray, shape: tuple, ys, xs, kh, kw, dilation) -> np.ndarray:
    c, h, w = shape
    pt, pb = _offsets(kh, dilation)
    pl, pr = _offsets(kw, dilation)
    dpadded = np.zeros((c, h + pt + pb, w + pl + pr))
    dp = dpatches.reshape(len(ys), kw, kh, c)
    for j in range(kw):
        cols = xs + dilation * j
        for i in range(kh):
            # one tap maps distinct pixels to distinct padded cells
            dpadded[:, ys + dilation * i, cols] += dp[:, j, i, :].T
    return dpadded[:, pt:pt + h, pl:pl + w]


def _kernel_matrix(kd: np.ndarray) -> np.ndarray:
    return kd.transpose(0, 3, 2, 1).reshape(kd.shape[0], -1)


def _conv_at(op: str, x, kernel, bias, dilation: int, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    xd, kd = _data(x), _data(kernel)
    _check_conv(xd, kd, dilation)
    cout, _, kh, kw = kd.shape
    _, h, w = xd.shape
    patches = im2col_active(xd, ys, xs, kh, kw, dilation)
    wmat = _kernel_matrix(kd)
    vals = patches @ wmat.T
    if bias is not None:
        bd = _data(bias)
        if bd.shape != (cout,):
            raise ValueError(f"bias shape {bd.shape} does not match {cout} output channels")
        vals = vals + bd
    out = np.zeros((cout, h, w))
    out[:, ys, xs] = vals.T

    def backward(g):
        gv = g[:, ys, xs].T
        dk = (gv.T @ patches).reshape(cout, kw, kh, -1).transpose(0, 3, 2, 1)
        dx = _col2im(gv @ wmat, xd.shape, ys, xs, kh, kw, dilation)
        db = gv.sum(axis=0) if bias is not None else None
        return (dx, dk, db)

    return _emit(op, out, (x, kernel, bias), backward)


def conv2d(x, kernel, bias=None, dilation: int = 1) -> Tensor:
    """Stride-1 convolution with zero "same" padding (cross-correlation form)."""
    xd = _data(x)
    if xd.ndim != 3:
        raise ValueError(f"conv expects CxHxW input, got {xd.shape}")
    _, h, w = xd.shape
    ys, xs = np.divmod(np.arange(h * w), w)
    return _conv_at("conv2d", x, kernel, bias, dilation, ys, xs)


def _mask_coords(mask, hw: tuple) -> tuple:
    md = _data(mask)
    if md.shape != hw:
        raise ValueError(f"mask shape {md.shape} does not match spatial dims {hw}")
    if not np.all((md == 0.0) | (md == 1.0)):
        raise ValueError("perforation mask must be binary")
    return np.nonzero(md)


def conv2d_perforated(x, kernel, mask, bias=None, dilation: int = 1) -> Tensor:
    """Convolution evaluated only where ``mask`` is 1; exactly 0 elsewhere.

    Gathers the active pixels' patches, multiplies by the kernel matrix and
    scatters the results back.  ``mask`` carries no gradient.
    """
    xd = _data(x)
    if xd.ndim != 3:
        raise ValueError(f"conv expects CxHxW input, got {xd.shape}")
    ys, xs = _mask_coords(mask, xd.shape[1:])
    return _conv_at("conv2d_perforated", x, kernel, bias, dilation, ys, xs)


# ----------------------------------------------------------------- checking


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Relative gap between the taped gradient and central differences.

    Normwise: ``max|a - n| / max(max|a|, max|n|)``, so components that are
    near zero do not turn round-off into a large ratio.
    """
    x = np.array(_data(x), dtype=np.float64)
    tape = Tape()
    xt = tape.watch(x)
    tape.backward(f(xt))
    analytic = tape.grad(xt)
    numeric = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        numeric[idx] = (f(Tensor(xp)).data.sum() - f(Tensor(xm)).data.sum()) / (2 * eps)
    denom = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / denom
