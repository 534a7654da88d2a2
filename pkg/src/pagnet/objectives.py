"""Task losses and the sparsity budget penalty.

All losses are sums over pixels and return scalar tensors, so they can be
fed straight to :meth:`Tape.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    _data,
    absolute,
    add,
    arccos,
    clip,
    l2_normalize,
    log,
    log_sigmoid,
    log_softmax,
    mul,
    reshape,
    scale,
    select_labels,
    square,
    sub,
    tmean,
    tsum,
)

DENSITY_CLAMP = 1e-6
COS_CLAMP = 1e-7
IGNORE_LABEL = 255


@dataclass(frozen=True)
class SparsityBudget:
    rho: float
    lam: float = 1e-4
    scope: str = "per-layer"

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.scope not in ("per-layer", "total"):
            raise ValueError(f"unknown scope {self.scope!r}")


def sparsity_kl(g, rho: float) -> Tensor:
    """KL(rho || g) between Bernoulli rates.

    ``g`` is clamped away from 0 and 1 but the gradient still flows through
    the clamp, so a mask that is entirely on (or off) is still pulled back.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    g = clip(g, DENSITY_CLAMP, 1.0 - DENSITY_CLAMP, passthrough=True)
    on = scale(log(g), -rho)
    off = scale(log(sub(1.0, g)), -(1.0 - rho))
    const = rho * np.log(rho) + (1.0 - rho) * np.log(1.0 - rho)
    return add(add(on, off), const)


def mask_density(mask) -> Tensor:
    return tmean(mask)


def total_loss(task_loss, masks: Sequence, budget: SparsityBudget) -> Tensor:
    """Task loss plus ``lam`` times the KL budget penalty."""
    task_loss = task_loss if isinstance(task_loss, Tensor) else Tensor(task_loss)
    if budget.lam == 0:
        return task_loss
    if not masks:
        raise ValueError("a positive lambda needs at least one gate mask")
    densities = [mask_density(m) for m in masks]
    if budget.scope == "per-layer":
        penalty = sparsity_kl(densities[0], budget.rho)
        for d in densities[1:]:
            penalty = add(penalty, sparsity_kl(d, budget.rho))
    else:
        mean = densities[0]
        for d in densities[1:]:
            mean = add(mean, d)
        penalty = sparsity_kl(scale(mean, 1.0 / len(densities)), budget.rho)
    return add(task_loss, scale(penalty, budget.lam))


def boundary_weights(target: np.ndarray) -> tuple:
    """``(beta_pos, beta_neg)``: positives are weighted by the negative fraction."""
    t = np.asarray(target)
    beta_pos = float((t == 0).sum()) / t.size
    return beta_pos, 1.0 - beta_pos


def boundary_loss(predictions: Sequence, target: np.ndarray) -> Tensor:
    """Class-balanced logistic loss summed over branches and pixels.

    Each prediction is a 1 x H x W (or H x W) logit map.
    """
    t = np.asarray(target).reshape(-1)
    if not predictions:
        raise ValueError("need at least one prediction branch")
    beta_pos, beta_neg = boundary_weights(t)
    sign = np.where(t > 0, 1.0, -1.0)
    weight = np.where(t > 0, beta_pos, beta_neg)
    total = None
    for pred in predictions:
        flat = reshape(pred, (-1,))
        if _data(flat).shape != t.shape:
            raise ValueError("prediction and target sizes differ")
        term = scale(tsum(mul(log_sigmoid(mul(flat, sign)), weight)), -1.0)
        total = term if total is None else add(total, term)
    return total


def semantic_loss(class_logits, labels: np.ndarray, ignore_label: int = IGNORE_LABEL) -> Tensor:
    """K-way cross-entropy summed over labelled pixels."""
    k = _data(class_logits).shape[0]
    labels = np.asarray(labels)
    valid = labels != ignore_label
    if np.any(labels[valid] >= k) or np.any(labels[valid] < 0):
        raise ValueError(f"labels must lie in [0, {k}) or equal {ignore_label}")
    picked = select_labels(log_softmax(class_logits, axis=0), labels, valid)
    return scale(tsum(picked), -1.0)


def depth_loss(pred, target, gamma: float = 2.0) -> Tensor:
    """Squared plus ``gamma``-weighted absolute log-depth error, summed."""
    diff = sub(pred, np.asarray(_data(target)))
    return add(tsum(square(diff)), scale(tsum(absolute(diff)), gamma))


def normal_loss(pred, target, lam: float = 4.0) -> Tensor:
    """Negative cosine plus ``lam`` times the angle, after unit-normalizing ``pred``.

    ``pred`` and ``target`` are 3 x H x W.  Dot products are clamped to
    ``[-1 + 1e-7, 1 - 1e-7]`` to keep the arccos derivative finite.
    """
    n = l2_normalize(pred, axis=0)
    cos = tsum(mul(n, np.asarray(_data(target))), axis=0)
    cos = clip(cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    return add(scale(tsum(cos), -1.0), scale(tsum(arccos(cos)), lam))
