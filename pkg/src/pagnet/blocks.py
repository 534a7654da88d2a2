"""Bottleneck residual blocks with pixel-wise, layer-wise and static gating.

A block computes ``O = I + F3(F2(F1(I)))`` where each ``F`` is
conv -> bias -> frozen norm -> ReLU (no ReLU after ``F3``).  The gated
variants evaluate ``F2`` and ``F3`` only at pixels whose gate is on.

Two execution modes are available for the gated blocks:

* ``perforated=True`` gathers active pixels and leaves the rest untouched.
  This is the inference path and what the FLOP counts describe.
* ``perforated=False`` evaluates the residual densely and multiplies by the
  gate.  Forward values are the same; the difference is that the gate also
  receives a gradient at pixels where it is currently off, which training
  needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    _data,
    add,
    conv2d,
    conv2d_perforated,
    frozen_norm,
    mul,
    relu,
    sub,
    tmean,
)
from .gating import binary_gate

TRAINABLE = ("w1", "b1", "g1", "s1", "w2", "b2", "g2", "s2",
             "w3", "b3", "g3", "s3", "gate_w", "gate_b")
MOMENTS = ("m1", "v1", "m2", "v2", "m3", "v3")


@dataclass
class BlockParams:
    """Parameters of one bottleneck block (arrays or taped tensors)."""

    w1: object
    b1: object
    g1: object
    s1: object
    w2: object
    b2: object
    g2: object
    s2: object
    w3: object
    b3: object
    g3: object
    s3: object
    gate_w: object
    gate_b: object
    m1: np.ndarray
    v1: np.ndarray
    m2: np.ndarray
    v2: np.ndarray
    m3: np.ndarray
    v3: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        c = _data(self.w1).shape[1]
        inner = _data(self.w1).shape[0]
        if _data(self.w2).shape[:2] != (inner, inner) or _data(self.w3).shape[:2] != (c, inner):
            raise ValueError("bottleneck channel arithmetic is inconsistent")
        if _data(self.gate_w).shape[:2] != (2, c):
            raise ValueError("gate head must map C channels to 2 logits")

    @property
    def channels(self) -> int:
        return _data(self.w1).shape[1]

    @property
    def inner(self) -> int:
        return _data(self.w1).shape[0]

    def arrays(self) -> dict:
        return {f.name: np.asarray(_data(getattr(self, f.name)))
                for f in fields(self) if f.name != "dilation"}

    def watch(self, tape: Tape) -> "BlockParams":
        kw = {name: tape.watch(getattr(self, name)) for name in TRAINABLE}
        kw.update({name: getattr(self, name) for name in MOMENTS})
        return BlockParams(dilation=self.dilation, **kw)


def init_block(channels: int, ratio: int, rng: np.random.Generator,
               dilation: int = 1, residual_scale: float = 0.1) -> BlockParams:
    if ratio < 1 or channels % ratio:
        raise ValueError(f"bottleneck ratio {ratio} must divide {channels}")
    inner = channels // ratio

    def he(cout, cin, k):
        return rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))

    return BlockParams(
        w1=he(inner, channels, 1), b1=np.zeros(inner), g1=np.ones(inner), s1=np.zeros(inner),
        w2=he(inner, inner, 3), b2=np.zeros(inner), g2=np.ones(inner), s2=np.zeros(inner),
        w3=residual_scale * he(channels, inner, 1), b3=np.zeros(channels),
        g3=np.ones(channels), s3=np.zeros(channels),
        gate_w=rng.normal(0.0, 0.01, (2, channels, 1, 1)),
        # start with gates mostly on
        gate_b=np.array([0.0, 3.0]),
        m1=np.zeros(inner), v1=np.ones(inner), m2=np.zeros(inner), v2=np.ones(inner),
        m3=np.zeros(channels), v3=np.ones(channels),
        dilation=dilation,
    )


def _unit(x, w, b, g, s, m, v, *, relu_after: bool, dilation: int = 1, mask=None) -> Tensor:
    if mask is None:
        y = conv2d(x, w, b, dilation)
    else:
        y = conv2d_perforated(x, w, mask, b, dilation)
    y = frozen_norm(y, g, s, m, v)
    if relu_after:
        y = relu(y)
    if mask is not None:
        # the norm shift must not leak into skipped pixels
        y = mul(y, mask)
    return y


def f1(x, p: BlockParams, mask=None) -> Tensor:
    return _unit(x, p.w1, p.b1, p.g1, p.s1, p.m1, p.v1, relu_after=True, mask=mask)


def f2(x, p: BlockParams, mask=None) -> Tensor:
    return _unit(x, p.w2, p.b2, p.g2, p.s2, p.m2, p.v2, relu_after=True,
                 dilation=p.dilation, mask=mask)


def f3(x, p: BlockParams, mask=None) -> Tensor:
    return _unit(x, p.w3, p.b3, p.g3, p.s3, p.m3, p.v3, relu_after=False, mask=mask)


def gate_logits(inp, p: BlockParams) -> Tensor:
    return conv2d(inp, p.gate_w, p.gate_b)


def _check_input(inp, p: BlockParams) -> None:
    d = _data(inp)
    if d.ndim != 3 or d.shape[0] != p.channels:
        raise ValueError(f"block expects {p.channels}xHxW input, got {d.shape}")


def standard_block(inp, p: BlockParams) -> Tensor:
    _check_input(inp, p)
    return add(inp, f3(f2(f1(inp, p), p), p))


def gated_residual(inp, x, gate: Tensor, p: BlockParams, *,
                   perforated: bool = True, dense_f3: bool = False) -> Tensor:
    """Apply ``F2``/``F3`` under a binary spatial gate, given ``x = F1(inp)``."""
    gm = _data(gate)
    if dense_f3:
        # literal mixing form with F3 evaluated everywhere
        y = f2(x, p, mask=gm)
        mixed = add(mul(sub(1.0, gate), x), mul(gate, y))
        return add(inp, f3(mixed, p))
    if perforated:
        y = f2(x, p, mask=gm)
        mixed = add(mul(sub(1.0, gate), x), mul(gate, y))
        z = f3(mixed, p, mask=gm)
    else:
        z = f3(f2(x, p), p)
    return add(inp, mul(gate, z))


def pag_block(inp, p: BlockParams, tau: float = 1.0, rng: Optional[np.random.Generator] = None,
              *, mask=None, perforated: bool = True, dense_f3: bool = False):
    """Pixel-gated residual block.  Returns ``(output, gate)``.

    ``mask`` forces the gate (no gradient reaches the gate head then).
    ``rng=None`` gives deterministic inference gates.
    """
    _check_input(inp, p)
    if mask is None:
        gate = binary_gate(gate_logits(inp, p), tau, rng)
    else:
        gate = Tensor(np.asarray(mask, dtype=np.float64))
        if gate.shape != _data(inp).shape[1:]:
            raise ValueError("forced mask does not match the input's spatial dims")
    x = f1(inp, p)
    return gated_residual(inp, x, gate, p, perforated=perforated, dense_f3=dense_f3), gate


def layer_skip_block(inp, p: BlockParams, tau: float = 1.0,
                     rng: Optional[np.random.Generator] = None, *,
                     gate: Optional[float] = None, perforated: bool = True):
    """Residual gated by one scalar decision from pooled gate logits.

    Returns ``(output, gate)`` with a 1x1 gate tensor.
    """
    _check_input(inp, p)
    if gate is None:
        pooled = tmean(gate_logits(inp, p), axis=(1, 2), keepdims=True)
        s = binary_gate(pooled, tau, rng)
    else:
        s = Tensor(np.full((1, 1), float(gate)))
    if perforated and s.data[0, 0] == 0.0:
        return inp if isinstance(inp, Tensor) else Tensor(inp), s
    z = f3(f2(f1(inp, p), p), p)
    return add(inp, mul(s, z)), s


def static_perforation_block(inp, p: BlockParams, static_logits, tau: float = 1.0,
                             rng: Optional[np.random.Generator] = None, *,
                             perforated: bool = True):
    """Pixel gating from learned, input-independent logits of a fixed size."""
    _check_input(inp, p)
    hw = _data(inp).shape[1:]
    if _data(static_logits).shape[1:] != hw:
        raise ValueError(f"static mask is {_data(static_logits).shape[1:]}, input is {hw}; "
                         "static perforation needs a fixed input size")
    gate = binary_gate(static_logits, tau, rng)
    x = f1(inp, p)
    return gated_residual(inp, x, gate, p, perforated=perforated), gate


# ------------------------------------------------------------------ ponder maps


@dataclass
class PonderMap:
    values: np.ndarray
    layer_count: int

    def normalized(self) -> np.ndarray:
        return self.values / max(self.layer_count, 1)


def accumulate_ponder(masks: Sequence) -> PonderMap:
    """Per-pixel count of active gates over all gated layers."""
    if not masks:
        raise ValueError("need at least one mask")
    arrays = [np.asarray(_data(m)) for m in masks]
    shape = arrays[0].shape
    total = np.zeros(shape, dtype=np.int64)
    for a in arrays:
        if a.shape != shape:
            raise ValueError("all masks must share one shape")
        total += np.rint(a).astype(np.int64)
    return PonderMap(total, len(arrays))


# ------------------------------------------------------------------ FLOP counts


@dataclass(frozen=True)
class ConvLayer:
    """One convolution in a network description.

    ``block`` groups layers removed together by truncation; ``gate_key``
    names the mask whose active fraction scales this layer's cost.
    """

    name: str
    h: int
    w: int
    cin: int
    cout: int
    kh: int = 1
    kw: int = 1
    block: Optional[str] = None
    gate_key: Optional[str] = None

    @property
    def dense_flops(self) -> int:
        # one multiply-accumulate = 2 FLOPs
        return 2 * self.h * self.w * self.cin * self.cout * self.kh * self.kw


@dataclass
class FlopReport:
    names: list
    dense: list
    gated: list
    rho: Optional[float] = None
    densities: dict = field(default_factory=dict)

    @property
    def total_dense(self) -> float:
        return float(sum(self.dense))

    @property
    def total_gated(self) -> float:
        return float(sum(self.gated))

    @property
    def ratio(self) -> float:
        return self.total_gated / self.total_dense if self.total_dense else 1.0

    def rows(self):
        return list(zip(self.names, self.dense, self.gated))


def count_flops(layers: Sequence[ConvLayer], densities: Optional[dict] = None, *,
                removed: Sequence[str] = (), rho: Optional[float] = None) -> FlopReport:
    """Dense vs executed FLOPs.

    ``densities`` maps a gate key to an active fraction in [0, 1] or to a
    binary mask (its mean is used).  Keys missing from ``densities`` count as
    fully active.  Layers of ``removed`` blocks cost nothing.
    """
    densities = dict(densities or {})
    frac = {}
    for key, val in densities.items():
        v = float(np.mean(_data(val))) if not np.isscalar(val) else float(val)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"density for {key!r} is {v}, outside [0, 1]")
        frac[key] = v
    removed = set(removed)
    names, dense, gated = [], [], []
    for layer in layers:
        d = float(layer.dense_flops)
        if layer.block in removed:
            g = 0.0
        elif layer.gate_key is not None:
            g = d * frac.get(layer.gate_key, 1.0)
        else:
            g = d
        names.append(layer.name)
        dense.append(d)
        gated.append(g)
    return FlopReport(names, dense, gated, rho, frac)
