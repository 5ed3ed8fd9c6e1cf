"""Photometric augmentation and cross-domain mixture composition.

The target-styled view comes from a deterministic per-channel color
statistics transfer instead of a learned translator; any target-looking
rendition of the source image satisfies the mixture's contract.  All
operations are pure given (inputs, seed) and never move pixels, so the
source label map stays valid for every augmented view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
_BLUR_KERNEL = np.array([0.25, 0.5, 0.25])


class AugmentError(Exception):
    pass


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and standard deviation of an image population."""

    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise AugmentError("channel std must be > 0")


def estimate_channel_stats(samples) -> ChannelStats:
    """Population mean/std per channel over all pixels of all samples."""
    if not samples:
        raise AugmentError("cannot estimate stats from an empty split")
    pixels = np.concatenate([s.image.reshape(-1, 3) for s in samples], axis=0)
    return ChannelStats(pixels.mean(axis=0), pixels.std(axis=0))


def _blur3(img: np.ndarray) -> np.ndarray:
    """Separable 3x3 binomial blur with edge replication."""
    k = _BLUR_KERNEL
    out = (
        np.pad(img, ((1, 1), (0, 0), (0, 0)), mode="edge")[:-2] * k[0]
        + img * k[1]
        + np.pad(img, ((1, 1), (0, 0), (0, 0)), mode="edge")[2:] * k[2]
    )
    out = (
        np.pad(out, ((0, 0), (1, 1), (0, 0)), mode="edge")[:, :-2] * k[0]
        + out * k[1]
        + np.pad(out, ((0, 0), (1, 1), (0, 0)), mode="edge")[:, 2:] * k[2]
    )
    return out


def photometric_augment(image: np.ndarray, seed: int, cfg: TrainConfig) -> np.ndarray:
    """Randomized color jitter, grayscale, and blur; geometry untouched.

    With all amplitudes and probabilities zero this is the identity.
    """
    rng = np.random.default_rng(seed)
    out = image
    gains = rng.uniform(1.0 - cfg.aug_gain, 1.0 + cfg.aug_gain, size=3)
    bias = rng.uniform(-cfg.aug_brightness, cfg.aug_brightness)
    if cfg.aug_gain > 0 or cfg.aug_brightness > 0:
        out = out * gains + bias
    if rng.uniform() < cfg.aug_grayscale_prob:
        gray = out @ GRAY_WEIGHTS
        out = np.repeat(gray[..., None], 3, axis=-1)
    if rng.uniform() < cfg.aug_blur_prob:
        out = _blur3(out)
    return np.clip(out, 0.0, 1.0)


def translate_to_stats(
    image: np.ndarray,
    target: ChannelStats,
    source: ChannelStats | None = None,
) -> np.ndarray:
    """Re-normalize per-channel statistics toward `target`.

    With `source` given, applies the fixed population-to-population affine
    map (x - mu_s) * sigma_t / sigma_s + mu_t, which is the identity when
    target equals source.  Without `source`, the image's own per-channel
    statistics are matched instead (zero-variance channels map straight to
    the target mean).  Deterministic, pointwise, clamped to [0, 1].
    """
    if source is not None:
        mu_s, sd_s = source.mean, source.std
        out = (image - mu_s) * (target.std / sd_s) + target.mean
    else:
        mu_s = image.reshape(-1, 3).mean(axis=0)
        sd_s = image.reshape(-1, 3).std(axis=0)
        flat = sd_s <= 1e-9  # constant channels map straight to the target mean
        scale = np.where(flat, 0.0, target.std / np.where(flat, 1.0, sd_s))
        out = (image - mu_s) * scale + target.mean
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class ClassMask:
    mask: np.ndarray  # (H, W) bool
    chosen_classes: frozenset[int]


def build_class_mask(label: np.ndarray, seed: int, ignore_id: int) -> ClassMask:
    """Select half the available classes and return their support mask.

    Classes are sorted by id, shuffled with the seed, and the first
    max(1, floor(n/2)) are chosen.  Ignore pixels never enter the mask.
    """
    available = np.unique(label)
    available = available[available != ignore_id]
    if available.size == 0:
        raise AugmentError("label map has no non-ignore pixels")
    rng = np.random.default_rng(seed)
    order = np.sort(available)
    rng.shuffle(order)
    n_pick = max(1, available.size // 2)
    chosen = frozenset(int(c) for c in order[:n_pick])
    mask = np.isin(label, list(chosen)) & (label != ignore_id)
    return ClassMask(mask, chosen)


def crdomix(aug_view: np.ndarray, translated_view: np.ndarray, cm: ClassMask) -> np.ndarray:
    """Per-pixel composition: mask picks the augmented view, else the translated one."""
    if aug_view.shape != translated_view.shape or aug_view.shape[:2] != cm.mask.shape:
        raise AugmentError(
            f"shape mismatch: {aug_view.shape} vs {translated_view.shape} vs {cm.mask.shape}"
        )
    m = cm.mask[..., None]
    return np.where(m, aug_view, translated_view)
