"""Synthetic in-memory datasets for desk-scale experiments and demos.

Two generators are provided: a linearly separable bright/dark set for
learning sanity checks, and a harder set whose incorrect class is made of
several visually distinct pattern subclasses (the situation that makes
random same-class pairing unstable for a pair-trained verifier).
"""

from __future__ import annotations

import numpy as np

from .augment import seed_rng
from .data import CLASS_CORRECT, CLASS_INCORRECT, DatasetIndex, ImageRef


def _base(rng: np.random.Generator, resolution: int, level: float, noise: float = 0.02) -> np.ndarray:
    img = np.full((resolution, resolution, 3), level, dtype=np.float32)
    img += rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return img


def _add_square(img: np.ndarray, rng: np.random.Generator, level: float, frac: float = 0.3) -> None:
    res = img.shape[0]
    side = max(2, int(res * frac))
    jitter = max(1, res // 10)
    cy = res // 2 + int(rng.integers(-jitter, jitter + 1))
    cx = res // 2 + int(rng.integers(-jitter, jitter + 1))
    y0, x0 = max(0, cy - side // 2), max(0, cx - side // 2)
    img[y0:y0 + side, x0:x0 + side, :] = level


def separable_squares(n_train: int = 200, n_val: int = 200, resolution: int = 64,
                      seed: int = 0) -> DatasetIndex:
    """Bright correct images vs. dark incorrect images, balanced splits."""
    rng = seed_rng((seed, 41))
    splits = {"train": [], "validation": []}
    for split, n in (("train", n_train), ("validation", n_val)):
        for i in range(n):
            correct = i % 2 == 0
            level = rng.uniform(0.72, 0.85) if correct else rng.uniform(0.15, 0.28)
            img = _base(rng, resolution, level)
            _add_square(img, rng, level - 0.12 if correct else level + 0.12)
            np.clip(img, 0.0, 1.0, out=img)
            label = CLASS_CORRECT if correct else CLASS_INCORRECT
            splits[split].append(ImageRef(
                source_id=f"sep-{split}-{i:04d}", label=label, split=split,
                subclass=None if correct else "dark", pixels=img))
    return DatasetIndex(splits=splits, seed=seed, layout="synthetic")


def _pattern(img: np.ndarray, kind: int, rng: np.random.Generator) -> None:
    res = img.shape[0]
    period = max(4, res // 8)
    yy, xx = np.mgrid[0:res, 0:res]
    phase = int(rng.integers(period))
    if kind == 0:  # vertical stripes
        mask = ((xx + phase) // (period // 2)) % 2 == 0
    elif kind == 1:  # horizontal stripes
        mask = ((yy + phase) // (period // 2)) % 2 == 0
    elif kind == 2:  # checkerboard
        mask = (((yy + phase) // (period // 2)) + ((xx + phase) // (period // 2))) % 2 == 0
    elif kind == 3:  # diagonal bands
        mask = ((yy + xx + phase) // (period // 2)) % 2 == 0
    else:  # bright ring on dark
        cy = cx = res / 2
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = (r > res * 0.25) & (r < res * 0.38)
    img[mask] = np.float32(0.85)


def patterned_subclasses(n_train: int = 200, n_val: int = 200, resolution: int = 64,
                         n_subclasses: int = 5, seed: int = 0) -> DatasetIndex:
    """Uniform bright correct class vs. incorrect class of distinct patterns.

    The incorrect subclasses look nothing like one another, so labeling
    two of them as "same" (as uniform random pairing does) pulls a
    pair-trained verifier in conflicting directions.
    """
    rng = seed_rng((seed, 43))
    splits = {"train": [], "validation": []}
    names = [f"pattern-{k}" for k in range(n_subclasses)]
    for split, n in (("train", n_train), ("validation", n_val)):
        for i in range(n):
            correct = i % 2 == 0
            if correct:
                img = _base(rng, resolution, float(rng.uniform(0.70, 0.80)))
                _add_square(img, rng, 0.55, frac=0.25)
                subclass = None
            else:
                k = int(rng.integers(n_subclasses))
                img = _base(rng, resolution, float(rng.uniform(0.10, 0.20)))
                _pattern(img, k, rng)
                subclass = names[k]
            np.clip(img, 0.0, 1.0, out=img)
            label = CLASS_CORRECT if correct else CLASS_INCORRECT
            splits[split].append(ImageRef(
                source_id=f"pat-{split}-{i:04d}", label=label, split=split,
                subclass=subclass, pixels=img))
    return DatasetIndex(splits=splits, seed=seed, layout="synthetic")
