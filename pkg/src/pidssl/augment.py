"""Two-view augmentation for vectors (noise / mask / scale) and small images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class VectorPolicy:
    noise_sigma: float = 0.0
    mask_prob: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        lo, hi = self.scale_range
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in [0, 1]")
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be positive and ordered")


@dataclass(frozen=True)
class ImagePolicy:
    crop_scale: tuple[float, float] = (0.5, 1.0)
    aspect_range: tuple[float, float] = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    jitter_strength: float = 0.4
    grayscale_prob: float = 0.2
    blur_sigma: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self):
        for name in ("crop_scale", "aspect_range", "blur_sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not 0 < self.crop_scale[0] <= self.crop_scale[1] <= 1:
            raise ValueError("crop_scale must satisfy 0 < lo <= hi <= 1")
        if not 0 < self.aspect_range[0] <= self.aspect_range[1]:
            raise ValueError("aspect_range must be positive and ordered")
        if not 0 <= self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ValueError("blur_sigma must be non-negative and ordered")
        for name in ("flip_prob", "grayscale_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.jitter_strength < 0:
            raise ValueError("jitter_strength must be non-negative")


def augment_vectors(x: np.ndarray, policy: VectorPolicy, rng: np.random.Generator) -> np.ndarray:
    """One independent draw per row: ``mask * (scale * x + sigma * noise)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] if x.ndim > 1 else 1
    lo, hi = policy.scale_range
    scale = rng.uniform(lo, hi, size=(n, 1)) if hi > lo else np.full((n, 1), lo)
    out = x.reshape(n, -1) * scale
    if policy.noise_sigma > 0:
        out = out + policy.noise_sigma * rng.standard_normal(out.shape)
    if policy.mask_prob > 0:
        out = out * (rng.random(out.shape) >= policy.mask_prob)
    return out.reshape(x.shape)


def _crop_resize(img: np.ndarray, policy: ImagePolicy, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    area = rng.uniform(*policy.crop_scale) * h * w
    log_lo, log_hi = np.log(policy.aspect_range)
    aspect = np.exp(rng.uniform(log_lo, log_hi))
    ch = int(np.clip(round(np.sqrt(area / aspect)), 1, h))
    cw = int(np.clip(round(np.sqrt(area * aspect)), 1, w))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    rows = top + (np.arange(h) + 0.5) * ch / h - 0.5
    cols = left + (np.arange(w) + 0.5) * cw / w - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    channels = [
        ndimage.map_coordinates(img[..., c], [rr, cc], order=1, mode="nearest") for c in range(img.shape[2])
    ]
    return np.stack(channels, axis=-1)


def augment_image(img: np.ndarray, policy: ImagePolicy, rng: np.random.Generator) -> np.ndarray:
    """Random crop (with aspect jitter) resized back, flip, colour jitter, grayscale, blur.

    Input is H x W x C, uint8 or float in [0, 1]; output is float in [0, 1].
    """
    x = np.asarray(img)
    x = x / 255.0 if x.dtype == np.uint8 else x.astype(np.float64)
    x = _crop_resize(x, policy, rng)
    if rng.random() < policy.flip_prob:
        x = x[:, ::-1, :]
    s = policy.jitter_strength
    if s > 0:
        brightness, contrast, saturation = rng.uniform(max(0.0, 1 - s), 1 + s, size=3)
        x = x * brightness
        x = (x - x.mean()) * contrast + x.mean()
        gray = x.mean(axis=2, keepdims=True)
        x = (x - gray) * saturation + gray
    if rng.random() < policy.grayscale_prob:
        x = np.repeat(x.mean(axis=2, keepdims=True), x.shape[2], axis=2)
    sigma = rng.uniform(*policy.blur_sigma)
    if sigma > 0:
        x = ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0), mode="nearest")
    return np.clip(x, 0.0, 1.0)


def make_views(sample, policy, rng: np.random.Generator):
    """Two independently augmented views of one sample (or of each row of a batch)."""
    return _augment(sample, policy, rng), _augment(sample, policy, rng)


def _augment(x, policy, rng):
    if isinstance(policy, VectorPolicy):
        return augment_vectors(x, policy, rng)
    if isinstance(policy, ImagePolicy):
        x = np.asarray(x)
        if x.ndim == 3:
            return augment_image(x, policy, rng)
        return np.stack([augment_image(im, policy, rng) for im in x])
    raise TypeError(f"unsupported augmentation policy {type(policy).__name__}")
