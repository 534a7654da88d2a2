"""Gumbel-max gates with the straight-through concrete estimator.

Binary gates use K=2 categories: index 1 is "compute", index 0 is "skip".
Randomness is always passed in as a ``numpy.random.Generator``; passing
``None`` where a generator is accepted means inference (zero noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _data, _emit, channel

UNIFORM_EPS = 1e-12


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def gumbel_sample(dims, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. standard Gumbel noise of the given shape."""
    # 1 - [0, 1) is (0, 1]; the clamp keeps both logs finite
    return gumbel_from_uniform(1.0 - rng.random(dims))


def _check_logits(ld: np.ndarray, md: np.ndarray, tau: float) -> None:
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if ld.shape != md.shape:
        raise ValueError(f"logits {ld.shape} and gumbels {md.shape} differ in shape")
    if ld.shape[0] < 2:
        raise ValueError("a gate needs at least two categories")


def concrete_relax(logits, gumbels, tau: float) -> Tensor:
    """Softmax over axis 0 of ``(logits + gumbels) / tau``."""
    ld, md = _data(logits), np.asarray(_data(gumbels))
    _check_logits(ld, md, tau)
    z = (ld + md) / tau
    e = np.exp(z - z.max(axis=0, keepdims=True))
    y = e / e.sum(axis=0, keepdims=True)
    return _emit("concrete_relax", y, (logits,),
                 lambda g: (y * (g - (g * y).sum(axis=0, keepdims=True)) / tau,))


def one_hot_argmax(scores: np.ndarray) -> np.ndarray:
    """One-hot over axis 0; ties go to the lowest index."""
    idx = np.argmax(scores, axis=0)
    out = np.zeros_like(scores, dtype=np.float64)
    np.put_along_axis(out, idx[None], 1.0, axis=0)
    return out


def straight_through_gate(logits, gumbels, tau: float) -> Tensor:
    """Hard one-hot sample forward, concrete-relaxation Jacobian backward."""
    ld, md = _data(logits), np.asarray(_data(gumbels))
    _check_logits(ld, md, tau)
    hard = one_hot_argmax(ld + md)
    z = (ld + md) / tau
    e = np.exp(z - z.max(axis=0, keepdims=True))
    y = e / e.sum(axis=0, keepdims=True)
    return _emit("straight_through", hard, (logits,),
                 lambda g: (y * (g - (g * y).sum(axis=0, keepdims=True)) / tau,))


def binary_gate(logits, tau: float, rng: np.random.Generator | None = None) -> Tensor:
    """On-channel of a K=2 straight-through gate, shape ``logits.shape[1:]``."""
    ld = _data(logits)
    if ld.shape[0] != 2:
        raise ValueError(f"binary gate needs 2 logit channels, got {ld.shape[0]}")
    gumbels = np.zeros_like(ld) if rng is None else gumbel_sample(ld.shape, rng)
    return channel(straight_through_gate(logits, gumbels, tau), 1)


def select_gate(logits, tau: float, rng: np.random.Generator | None = None) -> Tensor:
    """Full K-way one-hot straight-through selection."""
    ld = _data(logits)
    gumbels = np.zeros_like(ld) if rng is None else gumbel_sample(ld.shape, rng)
    return straight_through_gate(logits, gumbels, tau)


@dataclass(frozen=True)
class TemperatureSchedule:
    tau_start: float = 1.0
    tau_end: float = 0.1
    total_steps: int = 1000

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


def anneal_tau(step: int, schedule: TemperatureSchedule) -> float:
    """Geometric interpolation from ``tau_start`` to ``tau_end``."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    frac = step / schedule.total_steps
    return schedule.tau_start * (schedule.tau_end / schedule.tau_start) ** frac
