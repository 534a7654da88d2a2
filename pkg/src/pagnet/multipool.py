"""Pixel-wise choice among dilated 3x3 pooling branches.

Rate 0 is the copy branch: the input passes through unchanged.  In hard
mode each pixel picks exactly one branch through a straight-through gate and
each branch is evaluated only on its own pixels.  Soft mode is the weighted
average baseline: every branch is evaluated everywhere and mixed with
softmax weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    _data,
    add,
    channel,
    conv2d,
    conv2d_perforated,
    mul,
    softmax,
    scale,
)
from .blocks import ConvLayer
from .gating import select_gate

DEFAULT_RATES = (0, 1, 2, 4, 6, 8, 10)


@dataclass
class PoolBranchSet:
    rates: tuple
    kernels: list
    biases: list
    sel_w: object
    sel_b: object

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        if not rates or any(r < 0 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"rates must be non-negative and strictly increasing, got {rates}")
        self.rates = rates
        if len(self.kernels) != len(rates) or len(self.biases) != len(rates):
            raise ValueError("need one kernel and bias slot per rate")
        for r, k in zip(rates, self.kernels):
            if (r == 0) != (k is None):
                raise ValueError("exactly the rate-0 branch has no kernel")
        if _data(self.sel_w).shape[0] != len(rates):
            raise ValueError("selector head must emit one logit per branch")

    @property
    def n_branches(self) -> int:
        return len(self.rates)

    def arrays(self) -> dict:
        out = {"sel_w": np.asarray(_data(self.sel_w)), "sel_b": np.asarray(_data(self.sel_b))}
        for r, k, b in zip(self.rates, self.kernels, self.biases):
            if k is not None:
                out[f"k{r}"] = np.asarray(_data(k))
                out[f"b{r}"] = np.asarray(_data(b))
        return out

    @classmethod
    def from_arrays(cls, rates: Sequence[int], arrays: dict) -> "PoolBranchSet":
        kernels = [None if r == 0 else arrays[f"k{r}"] for r in rates]
        biases = [None if r == 0 else arrays[f"b{r}"] for r in rates]
        return cls(tuple(rates), kernels, biases, arrays["sel_w"], arrays["sel_b"])

    def watch(self, tape: Tape) -> "PoolBranchSet":
        return PoolBranchSet(
            self.rates,
            [None if k is None else tape.watch(k) for k in self.kernels],
            [None if b is None else tape.watch(b) for b in self.biases],
            tape.watch(self.sel_w), tape.watch(self.sel_b))


def init_branches(channels: int, rng: np.random.Generator,
                  rates: Sequence[int] = DEFAULT_RATES, noise: float = 0.05) -> PoolBranchSet:
    """Branches start near the identity so insertion into a trained net is gentle."""
    kernels, biases = [], []
    for r in rates:
        if r == 0:
            kernels.append(None)
            biases.append(None)
            continue
        k = rng.normal(0.0, noise / np.sqrt(channels), (channels, channels, 3, 3))
        k[:, :, 1, 1] += np.eye(channels)
        kernels.append(k)
        biases.append(np.zeros(channels))
    sel_w = rng.normal(0.0, 0.01, (len(rates), channels, 1, 1))
    return PoolBranchSet(tuple(rates), kernels, biases, sel_w, np.zeros(len(rates)))


def selector_logits(x, branches: PoolBranchSet) -> Tensor:
    return conv2d(x, branches.sel_w, branches.sel_b)


def multipool(x, branches: PoolBranchSet, mode: str = "hard", tau: Optional[float] = None,
              rng: Optional[np.random.Generator] = None, *, selection=None,
              perforated: bool = True):
    """Returns ``(output, selection)`` with selection of shape P x H x W.

    ``selection`` forces the per-pixel weights.  In hard mode with
    ``perforated=False`` every branch runs densely before selection, so the
    selector sees gradients from branches it did not pick (training path).
    """
    xd = _data(x)
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "hard" and tau is None and selection is None and branches.n_branches > 1:
        raise ValueError("hard selection needs a temperature")
    hw = xd.shape[1:]
    p = branches.n_branches
    if selection is not None:
        sel = Tensor(np.asarray(selection, dtype=np.float64))
        if sel.shape != (p,) + hw:
            raise ValueError(f"selection must be {(p,) + hw}, got {sel.shape}")
    elif p == 1:
        sel = Tensor(np.ones((1,) + hw))
    else:
        logits = selector_logits(x, branches)
        if mode == "hard":
            sel = select_gate(logits, tau, rng)
        else:
            sel = softmax(logits if tau is None else scale(logits, 1.0 / tau), axis=0)

    sparse = mode == "hard" and perforated
    out = None
    for i, (r, k, b) in enumerate(zip(branches.rates, branches.kernels, branches.biases)):
        w = channel(sel, i)
        if r == 0:
            m = x
        elif sparse:
            m = conv2d_perforated(x, k, w.data, b, r)
        else:
            m = conv2d(x, k, b, r)
        term = mul(w, m)
        out = term if out is None else add(out, term)
    return out, sel


def branch_layers(name: str, channels: int, h: int, w: int, rates: Sequence[int],
                  block: Optional[str] = None) -> list:
    """FLOP description: selector head (always dense) plus one gated conv per rate > 0."""
    layers = [ConvLayer(f"{name}.selector", h, w, channels, len(rates), 1, 1, block=block)]
    for r in rates:
        if r > 0:
            layers.append(ConvLayer(f"{name}.r{r}", h, w, channels, channels, 3, 3,
                                    block=block, gate_key=f"{name}/r{r}"))
    return layers


def branch_densities(name: str, rates: Sequence[int], selection) -> dict:
    sd = np.asarray(_data(selection))
    return {f"{name}/r{r}": float(sd[i].mean()) for i, r in enumerate(rates) if r > 0}
