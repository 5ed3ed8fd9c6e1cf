"""Per-class feature centroid bank: init, nearest-centroid voting, EMA.

Centroids live in the encoder's feature space.  Initialization averages
per-image masked feature means over the images that contain each class;
voting assigns every feature pixel to its nearest present centroid in
raw L2 distance with ties broken toward the smallest class id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import downsample_nearest


class CentroidError(Exception):
    pass


@dataclass
class CentroidBank:
    rho: np.ndarray  # (C, D) float64
    present: np.ndarray  # (C,) bool

    def copy(self) -> "CentroidBank":
        return CentroidBank(self.rho.copy(), self.present.copy())


def batch_class_means(features: np.ndarray, labels: np.ndarray, num_classes: int, ignore_id: int):
    """Mean feature vector and pixel count per class.

    `features` is (D, h, w) or (B, D, h, w); `labels` matches at feature
    resolution.  Absent classes report count 0 and a zero mean vector.
    """
    if features.ndim == 3:
        features = features[None]
        labels = labels[None]
    b, d, h, w = features.shape
    feats = features.transpose(0, 2, 3, 1).reshape(-1, d)
    labs = labels.reshape(-1).astype(np.int64)
    valid = labs != ignore_id
    feats = feats[valid]
    labs = labs[valid]
    counts = np.bincount(labs, minlength=num_classes).astype(np.int64)
    sums = np.zeros((num_classes, d))
    np.add.at(sums, labs, feats)
    means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return means, counts


def init_centroids(samples, encode_fn, make_view_fn, num_classes: int, ignore_id: int, stride: int) -> CentroidBank:
    """Offline centroid init over a labelled corpus.

    For every image, the training view is built by `make_view_fn`, encoded
    by `encode_fn` into (D, h, w) features, and per-class masked means are
    taken; each class centroid is then the plain average of those per-image
    means over the images that contain the class.
    """
    sums = None
    image_counts = np.zeros(num_classes, dtype=np.int64)
    for i, sample in enumerate(samples):
        view = make_view_fn(sample, i)
        feats = encode_fn(view)
        labs = downsample_nearest(sample.label, stride)
        means, counts = batch_class_means(feats, labs, num_classes, ignore_id)
        if sums is None:
            sums = np.zeros_like(means)
        has = counts > 0
        sums[has] += means[has]
        image_counts += has
    if sums is None:
        raise CentroidError("empty corpus")
    present = image_counts > 0
    rho = np.divide(
        sums, image_counts[:, None], out=np.zeros_like(sums), where=image_counts[:, None] > 0
    )
    return CentroidBank(rho, present)


def vote_labels(features: np.ndarray, bank: CentroidBank) -> np.ndarray:
    """Nearest-centroid class per feature pixel, at feature resolution.

    Distances are raw L2 over present classes only; exact ties go to the
    smallest class id.  Matches a brute-force per-pixel scan bit-for-bit.
    """
    if not bank.present.any():
        raise CentroidError("centroid bank has no present classes")
    present_ids = np.flatnonzero(bank.present)
    d, h, w = features.shape[-3:]
    squeeze = features.ndim == 3
    feats = features.reshape(-1, d, h, w) if not squeeze else features[None]
    flat = feats.transpose(0, 2, 3, 1).reshape(-1, 1, d)
    diffs = flat - bank.rho[present_ids][None, :, :]
    dists = np.sum(diffs * diffs, axis=2)
    votes = present_ids[np.argmin(dists, axis=1)].astype(np.uint8)
    votes = votes.reshape(feats.shape[0], h, w)
    return votes[0] if squeeze else votes


def ema_update_centroids(
    bank: CentroidBank,
    means_source: np.ndarray,
    counts_source: np.ndarray,
    means_target: np.ndarray,
    counts_target: np.ndarray,
    momentum: float,
) -> CentroidBank:
    """Nested EMA mixing source and target batch means.

    With both contributions present:
        rho <- m * (m * rho + (1 - m) * rho_source) + (1 - m) * rho_target
    A missing contribution drops its term, degrading to a single-source
    EMA; a class absent from both batches is left unchanged.  A class new
    to the bank adopts the batch mean directly.
    """
    if not 0.0 <= momentum <= 1.0:
        raise CentroidError(f"centroid momentum must be in [0, 1], got {momentum}")
    rho = bank.rho.copy()
    present = bank.present.copy()
    m = momentum
    for k in range(rho.shape[0]):
        has_s = counts_source[k] > 0
        has_t = counts_target[k] > 0
        if not has_s and not has_t:
            continue
        if not present[k]:
            if has_s and has_t:
                rho[k] = m * means_source[k] + (1.0 - m) * means_target[k]
            else:
                rho[k] = means_source[k] if has_s else means_target[k]
            present[k] = True
            continue
        if has_s and has_t:
            rho[k] = m * (m * rho[k] + (1.0 - m) * means_source[k]) + (1.0 - m) * means_target[k]
        elif has_s:
            rho[k] = m * rho[k] + (1.0 - m) * means_source[k]
        else:
            rho[k] = m * rho[k] + (1.0 - m) * means_target[k]
    return CentroidBank(rho, present)
