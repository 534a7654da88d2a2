"""Seeded synthetic per-pixel labelling tasks.

shapes-semantic  flat-coloured discs and squares on a striped ground; the
                 class is the shape's size bucket, so labelling the middle of
                 a large shape needs context from its edges.
shapes-boundary  the outlines of the same shapes.
ramp-depth       piecewise-planar log-depth with depth-dependent haze.
facet-normal     piecewise-constant unit normals rendered under three lights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("shapes-semantic", "shapes-boundary", "ramp-depth", "facet-normal")
EVAL_SEED_OFFSET = 1_000_003

# half-extent ranges per class (1 = small, 2 = medium, 3 = large)
SIZE_BUCKETS = ((2, 3), (4, 5), (7, 9))
LIGHTS = np.array([[0.6, 0.0, 0.8], [-0.3, 0.52, 0.8], [-0.3, -0.52, 0.8]])


@dataclass
class SyntheticDataset:
    kind: str
    size: int
    seed: int
    split: str
    images: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], self.targets[i]


def _ground(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(2.5, 4.0)
    phase = 2 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period
    stripes = 0.25 * np.sign(np.sin(phase + rng.uniform(0, 2 * np.pi)))
    tint = rng.uniform(0.3, 0.7, size=3)
    img = tint[:, None, None] + stripes[None]
    return img + rng.normal(0, 0.03, (3, size, size))


def _shape_scene(rng: np.random.Generator, size: int, max_shapes: int = 3):
    img = _ground(rng, size)
    labels = np.zeros((size, size), dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size]
    occupied = np.zeros((size, size), dtype=bool)
    n = rng.integers(1, max_shapes + 1)
    placed, attempts = 0, 0
    while placed < n and attempts < 50:
        attempts += 1
        cls = int(rng.integers(1, 4))
        lo, hi = SIZE_BUCKETS[cls - 1]
        r = int(rng.integers(lo, hi + 1))
        if 2 * r + 1 > size:
            continue
        cy, cx = rng.integers(r, size - r, size=2)
        if rng.random() < 0.5:
            region = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
        else:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r + r
        grown = (np.abs(yy - cy) <= r + 1) & (np.abs(xx - cx) <= r + 1)
        if np.any(occupied & grown):
            continue
        occupied |= region
        labels[region] = cls
        color = rng.uniform(0.0, 1.0, size=3)
        img[:, region] = color[:, None] + rng.normal(0, 0.03, (3, int(region.sum())))
        placed += 1
    return img, labels


def _edges(labels: np.ndarray) -> np.ndarray:
    e = np.zeros(labels.shape, dtype=bool)
    e[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    e[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    e[1:, :] |= labels[1:, :] != labels[:-1, :]
    e[:-1, :] |= labels[1:, :] != labels[:-1, :]
    # keep only the inner side of each outline
    return (e & (labels > 0)).astype(np.float64)


def _regions(rng: np.random.Generator, size: int, n_lo: int, n_hi: int) -> np.ndarray:
    n = int(rng.integers(n_lo, n_hi + 1))
    seeds = rng.uniform(0, size, size=(n, 2))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = (yy[None] - seeds[:, 0, None, None]) ** 2 + (xx[None] - seeds[:, 1, None, None]) ** 2
    return np.argmin(d, axis=0)


def _depth_scene(rng: np.random.Generator, size: int):
    region = _regions(rng, size, 2, 4)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    logd = np.zeros((size, size))
    img = np.zeros((3, size, size))
    for k in range(region.max() + 1):
        sel = region == k
        a, b, c = rng.uniform(0.2, 1.5), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)
        logd[sel] = (a + b * xx + c * yy)[sel]
        albedo = rng.uniform(0.4, 1.0, size=3)
        img[:, sel] = albedo[:, None]
    haze = np.exp(-logd)
    img = img * haze[None] + 0.5 * (1 - haze[None]) + rng.normal(0, 0.02, img.shape)
    return img, logd


def _normal_scene(rng: np.random.Generator, size: int):
    region = _regions(rng, size, 3, 6)
    normals = np.zeros((3, size, size))
    for k in range(region.max() + 1):
        v = rng.normal(size=3)
        v[2] = abs(v[2]) + 0.3
        v /= np.linalg.norm(v)
        normals[:, region == k] = v[:, None]
    shade = np.einsum("lc,chw->lhw", LIGHTS, normals)
    img = np.maximum(shade, 0.0) + rng.normal(0, 0.02, (3, size, size))
    return img, normals


def gen_dataset(kind: str, size: int, n: int, seed: int, split: str = "train") -> SyntheticDataset:
    """``n`` (image, target) pairs fully determined by ``(kind, size, n, seed, split)``.

    The eval split draws from a disjoint seed stream.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {KINDS}")
    if n < 1:
        raise ValueError("need at least one sample")
    if split not in ("train", "eval"):
        raise ValueError(f"unknown split {split!r}")
    stream = seed + (EVAL_SEED_OFFSET if split == "eval" else 0)
    rng = np.random.default_rng(stream)
    ds = SyntheticDataset(kind, size, seed, split)
    for _ in range(n):
        if kind in ("shapes-semantic", "shapes-boundary"):
            img, labels = _shape_scene(rng, size)
            target = labels if kind == "shapes-semantic" else _edges(labels)
        elif kind == "ramp-depth":
            img, target = _depth_scene(rng, size)
        else:
            img, target = _normal_scene(rng, size)
        ds.images.append(img)
        ds.targets.append(target)
    return ds


def augment(image: np.ndarray, target: np.ndarray, crop: int, rng: np.random.Generator,
            flip: bool = True):
    """Random left-right flip and a random ``crop`` x ``crop`` window.

    Pass ``flip=False`` for facet-normal: its fixed lights are not mirror
    symmetric, so a flipped image no longer matches its normals.
    """
    # the coin is drawn either way so the crop stream does not depend on ``flip``
    if rng.random() < 0.5 and flip:
        image = image[..., ::-1]
        target = target[..., ::-1]
    h, w = image.shape[-2:]
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    return (np.ascontiguousarray(image[..., y0:y0 + crop, x0:x0 + crop]),
            np.ascontiguousarray(target[..., y0:y0 + crop, x0:x0 + crop]))


def center_crop(array: np.ndarray, crop: int) -> np.ndarray:
    h, w = array.shape[-2:]
    y0, x0 = (h - crop) // 2, (w - crop) // 2
    return np.ascontiguousarray(array[..., y0:y0 + crop, x0:x0 + crop])
