"""Segmentation metrics and experiment analyses.

Confusion-matrix mIoU, multi-scale testing, pseudo-label quality,
uncertainty maps, a per-class-threshold pseudo-labelling baseline, and
the pseudo-labelling strategy comparison harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import TrainConfig
from .data import PALETTE, Sample
from .model import forward, resize_bilinear


class EvalError(Exception):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = ground truth, cols = prediction
    ignored: int = 0

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), 0)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray, ignore_id: int) -> ConfusionMatrix:
    """Add per-pixel (gt, pred) counts; gt-ignore pixels go to `ignored`."""
    if pred.shape != gt.shape:
        raise EvalError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    c = cm.counts.shape[0]
    pred = pred.astype(np.int64)
    gt = gt.astype(np.int64)
    if np.any(pred == ignore_id) or np.any(pred >= c):
        raise EvalError("predictions must be complete class ids, no ignore values")
    valid = gt != ignore_id
    cm.ignored += int((~valid).sum())
    idx = gt[valid] * c + pred[valid]
    cm.counts += np.bincount(idx, minlength=c * c).reshape(c, c)
    return cm


def miou(cm: ConfusionMatrix):
    """Per-class IoU (NaN where the class has no gt pixels) and their mean.

    IoU_k = TP / (TP + FP + FN); classes absent from the ground truth are
    excluded from the mean.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    gt_present = counts.sum(axis=1) > 0
    denom = tp + fp + fn
    ious = np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), 0.0)
    ious = np.where(gt_present, ious, np.nan)
    mean = float(np.nanmean(ious[gt_present])) if gt_present.any() else float("nan")
    return ious, mean


def _snap(value: float, stride: int) -> int:
    return max(stride, int(round(value / stride)) * stride)


def mst_predict(layers, params, image_chw: np.ndarray, scales, stride: int) -> np.ndarray:
    """Average class probabilities over multiple input scales.

    The input is resized bilinearly to each scale (snapped to the encoder
    stride), forwarded, and the probability maps are resized back and
    averaged, then renormalized.
    """
    if not scales:
        raise EvalError("mst_predict needs at least one scale")
    x = image_chw[None] if image_chw.ndim == 3 else image_chw
    h, w = x.shape[-2:]
    acc = np.zeros((x.shape[0], layers[-1].cout, h, w))
    for s in scales:
        hs, ws = _snap(h * s, stride), _snap(w * s, stride)
        xi = resize_bilinear(x, hs, ws) if (hs, ws) != (h, w) else x
        out, _ = forward(layers, params, xi)
        probs = out.probs if (hs, ws) == (h, w) else resize_bilinear(out.probs, h, w)
        acc += probs
    acc /= acc.sum(axis=1, keepdims=True)
    return acc[0] if image_chw.ndim == 3 else acc


class PseudoQuality(NamedTuple):
    precision: float
    recall: float
    coverage: float


def pseudo_quality(pl: np.ndarray, gt: np.ndarray, ignore_id: int) -> PseudoQuality:
    """Precision/recall/coverage of a pseudo-label map against ground truth.

    All three restrict to gt-valid pixels; undefined ratios are NaN.
    """
    if pl.shape != gt.shape:
        raise EvalError(f"shape mismatch: {pl.shape} vs {gt.shape}")
    valid = gt != ignore_id
    covered = valid & (pl != ignore_id)
    correct = covered & (pl == gt)
    n_valid = int(valid.sum())
    n_cov = int(covered.sum())
    n_cor = int(correct.sum())
    precision = n_cor / n_cov if n_cov else float("nan")
    recall = n_cor / n_valid if n_valid else float("nan")
    coverage = n_cov / n_valid if n_valid else float("nan")
    return PseudoQuality(precision, recall, coverage)


def uncertainty_map(probs: np.ndarray) -> np.ndarray:
    """Per-pixel 1 - max class probability."""
    return 1.0 - probs.max(axis=-3)


def threshold_labels(probs: np.ndarray, per_class_thresholds, ignore_id: int) -> np.ndarray:
    """Argmax labels kept only where confidence reaches the class threshold."""
    thr = np.asarray(per_class_thresholds, dtype=np.float64)
    arg = probs.argmax(axis=-3)
    conf = probs.max(axis=-3)
    keep = conf >= thr[arg]
    return np.where(keep, arg, ignore_id).astype(np.uint8)


def per_class_median_confidence(labels: np.ndarray, conf: np.ndarray, num_classes: int) -> np.ndarray:
    """Median max-prob per predicted class; 0 for classes never predicted."""
    thr = np.zeros(num_classes)
    flat_l = labels.reshape(-1)
    flat_c = conf.reshape(-1)
    for k in range(num_classes):
        sel = flat_c[flat_l == k]
        if sel.size:
            thr[k] = float(np.median(sel))
    return thr


def predict_labels(layers, params, samples: list[Sample], cfg: TrainConfig, mst: bool = False, batch: int = 16):
    """Hard predictions for a list of samples, optionally with MST."""
    preds = []
    stride = cfg.feature_stride
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        x = np.stack([s.image.transpose(2, 0, 1) for s in chunk])
        if mst:
            probs = mst_predict(layers, params, x, cfg.mst_scales, stride)
        else:
            out, _ = forward(layers, params, x)
            probs = out.probs
        preds.extend(probs.argmax(axis=1).astype(np.uint8))
    return preds


def evaluate_split(layers, params, samples: list[Sample], cfg: TrainConfig, mst: bool = False):
    """Mean IoU of the model on a labelled split; returns (per-class, mean)."""
    cm = ConfusionMatrix.empty(cfg.num_classes)
    for pred, sample in zip(predict_labels(layers, params, samples, cfg, mst=mst), samples):
        accumulate(cm, pred, sample.label, cfg.ignore_id)
    return miou(cm)


# ---------------------------------------------------------------------------
# pseudo-labelling strategy comparison


class ThresholdRule:
    """Class-threshold pseudo-labelling baseline.

    Keeps the stored warm labels only where their confidence reaches a
    per-class threshold (default: the median max-prob of the class over
    the target-train split, recomputed whenever the store is refreshed).
    """

    def __init__(self, num_classes: int, ignore_id: int, percentile: float = 50.0):
        self.num_classes = num_classes
        self.ignore_id = ignore_id
        self.percentile = percentile
        self.thresholds = np.zeros(num_classes)

    def refresh(self, store) -> None:
        labels = np.stack([store.labels[sid] for sid in sorted(store.labels)])
        conf = np.stack([store.conf[sid] for sid in sorted(store.conf)])
        thr = np.zeros(self.num_classes)
        flat_l = labels.reshape(-1)
        flat_c = conf.reshape(-1)
        for k in range(self.num_classes):
            sel = flat_c[flat_l == k]
            if sel.size:
                thr[k] = float(np.percentile(sel, self.percentile))
        self.thresholds = thr

    def __call__(self, yfeat: np.ndarray, ywarm: np.ndarray, conf: np.ndarray) -> np.ndarray:
        keep = conf >= self.thresholds[ywarm.astype(np.int64)]
        return np.where(keep, ywarm, self.ignore_id).astype(np.uint8)


class FeatOnlyRule:
    def __call__(self, yfeat, ywarm, conf):
        return yfeat


class WarmOnlyRule:
    def __call__(self, yfeat, ywarm, conf):
        return ywarm


STRATEGY_NAMES = ("feat", "warm", "threshold", "consensus")


def compare_strategies(
    warm_pair,
    bank,
    store,
    source_samples,
    target_samples,
    cfg: TrainConfig,
    stats,
    val_samples,
    target_gt=None,
    strategies=STRATEGY_NAMES,
):
    """Re-run the self-training stage with only the pseudo-labelling swapped.

    Every strategy starts from copies of the same warm-up artifacts and
    consumes identical seeds and budgets, so runs differ only through the
    target supervision.  Returns {strategy: {"miou": .., "metrics": [...]}}.
    """
    from . import selftrain  # local import; this module is also used by warmup

    def make_rule(name: str):
        if name == "feat":
            return FeatOnlyRule()
        if name == "warm":
            return WarmOnlyRule()
        if name == "threshold":
            rule = ThresholdRule(cfg.num_classes, cfg.ignore_id)
            rule.refresh(store)
            return rule
        if name == "consensus":
            return None  # train_st default
        raise EvalError(f"unknown strategy {name!r}")

    report = {}
    for name in strategies:
        pair = type(warm_pair)(
            [p.copy() for p in warm_pair.student],
            [p.copy() for p in warm_pair.teacher],
            warm_pair.layers,
        )
        run_store = store.copy()
        pair, _, _, metrics = selftrain.train_st(
            source_samples,
            target_samples,
            pair,
            bank.copy(),
            run_store,
            cfg,
            stats,
            val_samples=val_samples,
            target_gt=target_gt,
            pseudo_rule=make_rule(name),
        )
        _, final_miou = evaluate_split(pair.layers, pair.student, val_samples, cfg, mst=True)
        report[name] = {"miou": final_miou, "metrics": metrics}
    return report


# ---------------------------------------------------------------------------
# colorized dumps

UNCERTAINTY_GRAY = 255


def colorize_labels(label: np.ndarray, ignore_id: int) -> np.ndarray:
    """Map class ids to the fixed palette (ignore pixels to black), as uint8."""
    out = np.zeros((*label.shape, 3), dtype=np.uint8)
    valid = label != ignore_id
    pal8 = np.clip(np.round(PALETTE * 255.0), 0, 255).astype(np.uint8)
    out[valid] = pal8[label[valid] % len(pal8)]
    return out


def colorize_uncertainty(unc: np.ndarray) -> np.ndarray:
    """Grayscale confidence rendering: darker means lower confidence."""
    return np.clip(np.round((1.0 - unc) * 255.0), 0, 255).astype(np.uint8)
