"""Seeded image augmentation: one affine resample plus brightness scaling.

Rotation, shear, zoom and translation are composed about the image center
into a single matrix and applied with one bilinear resample, so repeated
interpolation never compounds.  Horizontal/vertical flips fold into the
same matrix.  Cropping is intentionally not available: it could remove
the very region that distinguishes a correct installation.

Every augmentation is fully determined by a seed tuple
``(global_seed, epoch, sample_index)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentationPolicy:
    """Sampling ranges for the augmentation parameters.

    All parameters are drawn uniformly from closed ranges:
    rotation in +-rotation_deg degrees, height/width translation in
    +-translate_frac of the image size, zoom in +-zoom_frac, shear in
    +-shear_frac, brightness factor in ``brightness_range``.  Flips are
    independent 50% draws when enabled.
    """

    rotation_deg: float = 40.0
    translate_frac: float = 0.10
    zoom_frac: float = 0.20
    shear_frac: float = 0.20
    brightness_range: Tuple[float, float] = (0.70, 1.30)
    hflip: bool = True
    vflip: bool = True
    fill_mode: str = "edge"  # "edge" replicates border pixels; "constant" uses fill_value
    fill_value: float = 0.0

    def __post_init__(self):
        if self.rotation_deg < 0 or self.translate_frac < 0 or self.zoom_frac < 0 or self.shear_frac < 0:
            raise ConfigError("augmentation ranges must be non-negative")
        lo, hi = self.brightness_range
        if not (0 < lo <= hi):
            raise ConfigError(f"invalid brightness range {self.brightness_range}")
        if self.fill_mode not in ("edge", "constant"):
            raise ConfigError(f"fill_mode must be 'edge' or 'constant', got {self.fill_mode!r}")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        """A policy whose draws always produce the untouched input."""
        return cls(rotation_deg=0.0, translate_frac=0.0, zoom_frac=0.0, shear_frac=0.0,
                   brightness_range=(1.0, 1.0), hflip=False, vflip=False)

    def without_flips(self) -> "AugmentationPolicy":
        return replace(self, hflip=False, vflip=False)


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw from a policy."""

    rotation_deg: float
    translate_y: float
    translate_x: float
    zoom: float
    shear: float
    hflip: bool
    vflip: bool
    brightness: float

    @property
    def is_identity_transform(self) -> bool:
        return (self.rotation_deg == 0.0 and self.translate_y == 0.0 and self.translate_x == 0.0
                and self.zoom == 0.0 and self.shear == 0.0 and not self.hflip and not self.vflip)


def seed_rng(seed_tuple: Sequence[int]) -> np.random.Generator:
    """Generator fully determined by a tuple of non-negative integers."""
    for v in seed_tuple:
        if int(v) < 0:
            raise ConfigError(f"seed components must be non-negative, got {tuple(seed_tuple)}")
    return np.random.default_rng(np.random.SeedSequence([int(v) for v in seed_tuple]))


def draw_params(policy: AugmentationPolicy, rng: np.random.Generator) -> AugmentParams:
    """Sample one parameter set.  Draw order is fixed for determinism."""
    r = policy.rotation_deg
    t = policy.translate_frac
    z = policy.zoom_frac
    s = policy.shear_frac
    lo, hi = policy.brightness_range
    return AugmentParams(
        rotation_deg=float(rng.uniform(-r, r)) if r > 0 else 0.0,
        translate_y=float(rng.uniform(-t, t)) if t > 0 else 0.0,
        translate_x=float(rng.uniform(-t, t)) if t > 0 else 0.0,
        zoom=float(rng.uniform(-z, z)) if z > 0 else 0.0,
        shear=float(rng.uniform(-s, s)) if s > 0 else 0.0,
        hflip=bool(rng.random() < 0.5) if policy.hflip else False,
        vflip=bool(rng.random() < 0.5) if policy.vflip else False,
        brightness=float(rng.uniform(lo, hi)) if hi > lo else float(lo),
    )


def _affine_matrix(params: AugmentParams, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Output->input matrix and offset for scipy's affine_transform.

    Coordinates are (row, col).  The forward map applies, about the image
    center: rotation, then shear, then zoom, then flips, then translation.
    """
    theta = np.deg2rad(params.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, 0.0],
                      [params.shear, 1.0]])  # col' = col + shear * row
    scale = 1.0 + params.zoom
    zoom = np.array([[scale, 0.0], [0.0, scale]])
    flip = np.diag([-1.0 if params.vflip else 1.0,
                    -1.0 if params.hflip else 1.0])
    fwd = flip @ zoom @ shear @ rot
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    translate = np.array([params.translate_y * height, params.translate_x * width])
    inv = np.linalg.inv(fwd)
    offset = center - inv @ (center + translate)
    return inv, offset


def apply_params(pixels: np.ndarray, params: AugmentParams, policy: AugmentationPolicy) -> np.ndarray:
    """Apply a drawn parameter set to an (H, W, C) float image in [0, 1]."""
    out = pixels
    if not params.is_identity_transform:
        h, w = pixels.shape[:2]
        matrix, offset = _affine_matrix(params, h, w)
        mode = "nearest" if policy.fill_mode == "edge" else "constant"
        out = np.empty_like(pixels)
        for ch in range(pixels.shape[2]):
            ndimage.affine_transform(
                pixels[:, :, ch], matrix, offset=offset, output=out[:, :, ch],
                order=1, mode=mode, cval=policy.fill_value)
    if params.brightness != 1.0:
        out = np.clip(out * np.float32(params.brightness), 0.0, 1.0)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment_array(pixels: np.ndarray, policy: AugmentationPolicy, seed_tuple: Sequence[int]) -> np.ndarray:
    """Seeded augmentation of a raw (H, W, C) array; shape is preserved."""
    params = draw_params(policy, seed_rng(seed_tuple))
    return apply_params(pixels, params, policy)
