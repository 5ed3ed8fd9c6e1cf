"""Warm-up training: supervised CE plus symmetric soft distillation.

Each step builds an augmented/mixed view of the source batch, forwards
the clean and mixed views through teacher and student as fused batches,
and takes one SGD step on

    lambda_seg * CE(student on the fused {mixed, clean} batch, labels)
  + lambda_distil * [ H(teacher on clean, student on mixed)
                      + alpha * H(teacher on mixed, student on clean) ]

where H(a, b) is soft cross-entropy -a*log(b) averaged over pixels and
the teacher terms are constants (no gradient).  The supervised loss
covers both student views (labels stay valid because augmentation never
moves pixels): the mixed-view half bakes appearance invariance directly
into the supervised path, while the clean-view half anchors the view the
mirrored distillation term smooths, which keeps the teacher-student
feedback from drifting.  The teacher follows the student by EMA.
Natural log throughout; losses are means over all (valid) pixels of the
batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import evaluation
from .augment import ChannelStats, build_class_mask, crdomix, photometric_augment, translate_to_stats
from .config import TrainConfig
from .data import Sample
from .model import ModelPair, backward, ema_update, forward, init_pair, sgd_step

_LOG_EPS = 1e-12


class LossResult(NamedTuple):
    value: float
    pixels: int  # number of contributing pixels; 0 flags an empty loss


@dataclass(frozen=True)
class DomainStats:
    """Channel statistics of the two training populations, for the translator."""

    source: ChannelStats
    target: ChannelStats


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def _batched(arr: np.ndarray) -> np.ndarray:
    return arr[None] if arr.ndim == 3 else arr


def ce_loss(probs: np.ndarray, labels: np.ndarray, ignore_id: int) -> LossResult:
    """Mean over non-ignore pixels of -log p[label]; empty case is (0, 0)."""
    p = _batched(probs)
    y = labels[None] if labels.ndim == 2 else labels
    if p.shape[0] != y.shape[0] or p.shape[-2:] != y.shape[-2:]:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    valid = y != ignore_id
    n = int(valid.sum())
    if n == 0:
        return LossResult(0.0, 0)
    yy = np.where(valid, y, 0).astype(np.int64)
    picked = np.take_along_axis(p, yy[:, None], axis=1)[:, 0]
    nll = -np.log(np.maximum(picked, _LOG_EPS))
    return LossResult(float(nll[valid].sum() / n), n)


def _ce_grad_logits(probs: np.ndarray, labels: np.ndarray, ignore_id: int) -> np.ndarray:
    """d/dlogits of ce_loss: (softmax - onehot) on valid pixels / n_valid."""
    p = _batched(probs)
    y = labels[None] if labels.ndim == 2 else labels
    valid = y != ignore_id
    n = int(valid.sum())
    if n == 0:
        return np.zeros_like(p)
    yy = np.where(valid, y, 0).astype(np.int64)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, yy[:, None], 1.0, axis=1)
    return (p - onehot) * valid[:, None] / n


def soft_ce(target_probs: np.ndarray, student_probs: np.ndarray) -> float:
    """Mean over pixels of sum_c -target * log(student); soft targets, no argmax."""
    t = _batched(target_probs)
    s = _batched(student_probs)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: {target_probs.shape} vs {student_probs.shape}")
    n_pix = t.shape[0] * t.shape[2] * t.shape[3]
    return float(-(t * np.log(np.maximum(s, _LOG_EPS))).sum() / n_pix)


def _soft_ce_grad_logits(target_probs: np.ndarray, student_probs: np.ndarray) -> np.ndarray:
    t = _batched(target_probs)
    s = _batched(student_probs)
    n_pix = t.shape[0] * t.shape[2] * t.shape[3]
    return (s - t) / n_pix


def distill_loss(
    teacher_clean: np.ndarray,
    student_aug: np.ndarray,
    teacher_aug: np.ndarray,
    student_clean: np.ndarray,
    alpha: float,
) -> float:
    """Symmetric distillation: H(teacher_clean, student_aug) + alpha * H(teacher_aug, student_clean)."""
    return soft_ce(teacher_clean, student_aug) + alpha * soft_ce(teacher_aug, student_clean)


def build_source_views(
    samples: list[Sample],
    cfg: TrainConfig,
    seed: int,
    stats: DomainStats | None,
):
    """Clean and mixed (B, 3, H, W) views of a labelled source batch.

    The mixed view is the photometric augmentation, with target-styled
    regions swapped in under a per-image class mask when the cross-domain
    mixture is enabled.  Labels remain valid for both views.
    """
    clean, mixed = [], []
    for i, sample in enumerate(samples):
        img = sample.image
        aug = photometric_augment(img, _derived_seed(seed, i, 1), cfg) if cfg.use_photometric else img
        if cfg.use_crdomix:
            if stats is None:
                raise ValueError("crdomix enabled but no domain stats provided")
            styled = translate_to_stats(img, stats.target, stats.source)
            cm = build_class_mask(sample.label, _derived_seed(seed, i, 2), cfg.ignore_id)
            view = crdomix(aug, styled, cm)
        else:
            view = aug
        clean.append(img.transpose(2, 0, 1))
        mixed.append(view.transpose(2, 0, 1))
    return np.stack(clean), np.stack(mixed)


class SourcePass(NamedTuple):
    grads: list[np.ndarray]
    loss_seg: float
    loss_distil: float
    view_features: np.ndarray  # student features of the mixed view (B, D, h, w)
    labels: np.ndarray  # (B, H, W)


def source_pass(
    pair: ModelPair,
    samples: list[Sample],
    cfg: TrainConfig,
    seed: int,
    stats: DomainStats | None,
    lambda_distil: float,
) -> SourcePass:
    """Losses and student gradients of the source branch, without stepping.

    With augmentation active the student forwards the fused {mixed,
    clean} batch and the supervised loss covers both halves; with
    everything disabled the two views coincide and a single clean
    forward carries plain supervised training.
    """
    x_clean, x_view = build_source_views(samples, cfg, seed, stats)
    labels = np.stack([s.label for s in samples])
    b = len(samples)
    need_b = cfg.distill_clean_to_aug and lambda_distil > 0
    need_c = cfg.distill_aug_to_clean and lambda_distil > 0
    fused = cfg.use_photometric or cfg.use_crdomix or need_b or need_c

    x_student = np.concatenate([x_view, x_clean]) if fused else x_view
    out, cache = forward(pair.layers, pair.student, x_student, want_cache=True)
    probs_view = out.probs[:b]
    probs_clean = out.probs[b:] if fused else None

    teacher_clean = teacher_view = None
    if need_b or need_c:
        t_in = []
        if need_b:
            t_in.append(x_clean)
        if need_c:
            t_in.append(x_view)
        t_out, _ = forward(pair.layers, pair.teacher, np.concatenate(t_in))
        if need_b:
            teacher_clean = t_out.probs[:b]
        if need_c:
            teacher_view = t_out.probs[-b:]

    fused_labels = np.concatenate([labels, labels]) if fused else labels
    loss_seg, _ = ce_loss(out.probs, fused_labels, cfg.ignore_id)
    dlogits = cfg.lambda_seg * _ce_grad_logits(out.probs, fused_labels, cfg.ignore_id)
    loss_distil = 0.0
    if need_b:
        loss_distil += soft_ce(teacher_clean, probs_view)
        dlogits[:b] += lambda_distil * _soft_ce_grad_logits(teacher_clean, probs_view)
    if need_c:
        loss_distil += cfg.alpha * soft_ce(teacher_view, probs_clean)
        dlogits[b:] += lambda_distil * cfg.alpha * _soft_ce_grad_logits(teacher_view, probs_clean)
    grads = backward(pair.layers, pair.student, cache, dlogits)
    return SourcePass(grads, loss_seg, loss_distil, out.features[:b], labels)


def warmup_step(
    pair: ModelPair,
    samples: list[Sample],
    cfg: TrainConfig,
    seed: int,
    stats: DomainStats | None = None,
    lambda_distil: float | None = None,
    velocity=None,
):
    """One warm-up iteration: SGD on the student, then EMA on the teacher."""
    lam = cfg.lambda_distil_warmup if lambda_distil is None else lambda_distil
    sp = source_pass(pair, samples, cfg, seed, stats, lam)
    student, velocity = sgd_step(pair.student, sp.grads, cfg.learning_rate, cfg.sgd_momentum, velocity,
                                 cfg.weight_decay)
    pair = ema_update(ModelPair(student, pair.teacher, pair.layers), cfg.ema_momentum)
    total = cfg.lambda_seg * sp.loss_seg + lam * sp.loss_distil
    losses = {"loss_seg": sp.loss_seg, "loss_distil": sp.loss_distil, "loss_total": total}
    return pair, losses, velocity


def train_warmup(
    source_samples: list[Sample],
    cfg: TrainConfig,
    stats: DomainStats | None = None,
    val_samples: list[Sample] | None = None,
):
    """Run the warm-up stage; returns (ModelPair, per-epoch metrics rows).

    The per-epoch target-val mIoU is an evaluation-only peek and feeds
    nothing back into training.
    """
    pair = init_pair(cfg, cfg.seed)
    metrics: list[dict] = []
    n_batches = len(source_samples) // cfg.batch_source
    velocity = None
    for epoch in range(cfg.warmup_epochs):
        rng = np.random.default_rng(_derived_seed(cfg.seed, 7001, epoch))
        perm = rng.permutation(len(source_samples))
        seg_sum = distil_sum = 0.0
        for step in range(n_batches):
            batch = [source_samples[i] for i in perm[step * cfg.batch_source : (step + 1) * cfg.batch_source]]
            pair, losses, velocity = warmup_step(
                pair, batch, cfg, _derived_seed(cfg.seed, 7002, epoch, step), stats, velocity=velocity
            )
            seg_sum += losses["loss_seg"]
            distil_sum += losses["loss_distil"]
        row = {
            "epoch": epoch,
            "loss_seg": seg_sum / max(n_batches, 1),
            "loss_distil": distil_sum / max(n_batches, 1),
        }
        if val_samples is not None:
            _, miou = evaluation.evaluate_split(pair.layers, pair.student, val_samples, cfg, mst=False)
            row["miou_target_val"] = miou
        metrics.append(row)
    return pair, metrics


def mean_max_prob(probs: np.ndarray, mask: np.ndarray) -> float:
    """Average per-pixel confidence (max class probability) under a mask."""
    conf = _batched(probs).max(axis=1)
    m = mask[None] if mask.ndim == 2 else mask
    if not m.any():
        return float("nan")
    return float(conf[m].mean())
