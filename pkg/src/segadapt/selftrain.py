"""Self-training stage with bilateral-consensus pseudo-labels.

Target pseudo-labels are selected without any confidence cutoff: a pixel
is trained on only where the nearest-centroid vote in feature space and
the stored warm-model prediction agree.  The stored predictions are
periodically regenerated from the current student, and the centroid bank
follows both domains by EMA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import evaluation
from .centroids import CentroidBank, batch_class_means, ema_update_centroids, init_centroids, vote_labels
from .config import TrainConfig
from .data import Sample
from .model import (
    ModelPair,
    backward,
    downsample_nearest,
    ema_update,
    forward,
    forward_features,
    sgd_step,
    upsample_nearest,
)
from .warmup import (
    DomainStats,
    _ce_grad_logits,
    _derived_seed,
    build_source_views,
    ce_loss,
    source_pass,
)


@dataclass
class PseudoLabelStore:
    """Per-target-image stored labels and confidences, plus their vintage."""

    labels: dict[str, np.ndarray]  # sample_id -> (H, W) uint8
    conf: dict[str, np.ndarray]  # sample_id -> (H, W) float64 max-prob
    generation_epoch: int = 0

    def copy(self) -> "PseudoLabelStore":
        return PseudoLabelStore(
            {k: v.copy() for k, v in self.labels.items()},
            {k: v.copy() for k, v in self.conf.items()},
            self.generation_epoch,
        )


def generate_warm_labels(
    layers,
    params,
    samples: list[Sample],
    cfg: TrainConfig,
    epoch: int = 0,
    predict_fn=None,
    batch: int = 16,
) -> PseudoLabelStore:
    """Per-pixel argmax of the model on every target image, no cutoff.

    Argmax ties resolve to the smallest class id.  `predict_fn` may
    substitute the forward pass (it maps a (B, 3, H, W) batch to
    (B, C, H, W) probabilities).
    """
    labels: dict[str, np.ndarray] = {}
    conf: dict[str, np.ndarray] = {}
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        x = np.stack([s.image.transpose(2, 0, 1) for s in chunk])
        if predict_fn is not None:
            probs = predict_fn(x)
        else:
            probs = forward(layers, params, x)[0].probs
        hard = probs.argmax(axis=1).astype(np.uint8)
        top = probs.max(axis=1)
        for sample, lab, cf in zip(chunk, hard, top):
            labels[sample.sample_id] = lab
            conf[sample.sample_id] = cf
    return PseudoLabelStore(labels, conf, epoch)


def consensus(yfeat: np.ndarray, ywarm: np.ndarray, ignore_id: int) -> np.ndarray:
    """Keep the common label where the two maps agree, ignore elsewhere."""
    if yfeat.shape != ywarm.shape:
        raise ValueError(f"shape mismatch: {yfeat.shape} vs {ywarm.shape}")
    return np.where(yfeat == ywarm, yfeat, ignore_id).astype(np.uint8)


class ConsensusRule:
    def __init__(self, ignore_id: int):
        self.ignore_id = ignore_id

    def __call__(self, yfeat, ywarm, conf):
        return consensus(yfeat, ywarm, self.ignore_id)


def build_centroid_bank(pair: ModelPair, source_samples, cfg: TrainConfig, stats) -> CentroidBank:
    """Offline centroid init from student features of the mixed source views."""

    def make_view(sample, i):
        clean, mixed = build_source_views([sample], cfg, _derived_seed(cfg.seed, 9001, i), stats)
        return mixed

    def encode(view):
        return forward_features(pair.layers, pair.student, view)[0]

    return init_centroids(
        source_samples, encode, make_view, cfg.num_classes, cfg.ignore_id, cfg.feature_stride
    )


def st_step(
    pair: ModelPair,
    bank: CentroidBank,
    store: PseudoLabelStore,
    batch_source: list[Sample],
    batch_target: list[Sample],
    cfg: TrainConfig,
    seed: int,
    stats: DomainStats | None,
    pseudo_rule=None,
    velocity=None,
):
    """One self-training iteration over paired source/target batches.

    Source losses mirror the warm-up step (with the self-training
    distillation weight); the target branch votes teacher features against
    the centroid bank, intersects with the stored labels, and adds a CE
    term on the student's target predictions.  Afterwards the teacher and
    the centroid bank follow by EMA.
    """
    rule = pseudo_rule if pseudo_rule is not None else ConsensusRule(cfg.ignore_id)
    sp = source_pass(pair, batch_source, cfg, seed, stats, cfg.lambda_distil_st)

    x_t = np.stack([s.image.transpose(2, 0, 1) for s in batch_target])
    feats_t = forward_features(pair.layers, pair.teacher, x_t)
    yfeat = upsample_nearest(vote_labels(feats_t, bank), cfg.feature_stride)
    ywarm = np.stack([store.labels[s.sample_id] for s in batch_target])
    conf = np.stack([store.conf[s.sample_id] for s in batch_target])
    y_t = rule(yfeat, ywarm, conf)

    out_t, cache_t = forward(pair.layers, pair.student, x_t, want_cache=True)
    loss_t, n_valid_t = ce_loss(out_t.probs, y_t, cfg.ignore_id)
    grads = sp.grads
    if n_valid_t > 0:
        d_t = cfg.lambda_seg * _ce_grad_logits(out_t.probs, y_t, cfg.ignore_id)
        target_grads = backward(pair.layers, pair.student, cache_t, d_t)
        grads = [a + b for a, b in zip(grads, target_grads)]

    student, velocity = sgd_step(pair.student, grads, cfg.learning_rate, cfg.sgd_momentum, velocity,
                                 cfg.weight_decay)
    pair = ema_update(ModelPair(student, pair.teacher, pair.layers), cfg.ema_momentum)

    labels_s = downsample_nearest(sp.labels, cfg.feature_stride)
    means_s, counts_s = batch_class_means(sp.view_features, labels_s, cfg.num_classes, cfg.ignore_id)
    labels_t = downsample_nearest(y_t, cfg.feature_stride)
    means_t, counts_t = batch_class_means(feats_t, labels_t, cfg.num_classes, cfg.ignore_id)
    bank = ema_update_centroids(bank, means_s, counts_s, means_t, counts_t, cfg.centroid_momentum)

    info = {
        "loss_seg": sp.loss_seg,
        "loss_distil": sp.loss_distil,
        "loss_target": loss_t,
        "n_valid_target": n_valid_t,
        "yfeat": yfeat,
        "ywarm": ywarm,
        "y_t": y_t,
        "probs_t": out_t.probs,
    }
    return pair, bank, info, velocity


def refresh_labels(
    pair: ModelPair,
    target_samples: list[Sample],
    store: PseudoLabelStore,
    epoch: int,
    cfg: TrainConfig,
) -> PseudoLabelStore:
    """Regenerate the store from the current model every R epochs.

    Off-cycle epochs return the store unchanged.  The student is used
    unless `refresh_with_teacher` is set.
    """
    if epoch == 0 or epoch % cfg.label_refresh_epochs != 0:
        return store
    params = pair.teacher if cfg.refresh_with_teacher else pair.student
    return generate_warm_labels(pair.layers, params, target_samples, cfg, epoch=epoch)


def train_st(
    source_samples: list[Sample],
    target_samples: list[Sample],
    pair: ModelPair,
    bank: CentroidBank,
    store: PseudoLabelStore,
    cfg: TrainConfig,
    stats: DomainStats | None,
    val_samples: list[Sample] | None = None,
    target_gt: dict[str, np.ndarray] | None = None,
    pseudo_rule=None,
):
    """Run the self-training stage; returns (pair, bank, store, metrics).

    `target_gt` (sample_id -> label map) is an evaluation-only channel for
    pseudo-label quality logging; it never influences training.
    """
    metrics: list[dict] = []
    n_steps_src = len(source_samples) // cfg.batch_source
    n_steps_tgt = len(target_samples) // cfg.batch_target
    n_steps = min(n_steps_src, n_steps_tgt)
    velocity = None
    for epoch in range(cfg.st_epochs):
        new_store = refresh_labels(pair, target_samples, store, epoch, cfg)
        if new_store is not store:
            store = new_store
            if pseudo_rule is not None and hasattr(pseudo_rule, "refresh"):
                pseudo_rule.refresh(store)
        rng = np.random.default_rng(_derived_seed(cfg.seed, 8001, epoch))
        perm_s = rng.permutation(len(source_samples))
        perm_t = rng.permutation(len(target_samples))
        sums = {"loss_seg": 0.0, "loss_distil": 0.0, "loss_target": 0.0}
        q = {name: np.zeros(3, dtype=np.int64) for name in ("y_t", "yfeat", "ywarm")}
        unc_sums = np.zeros(2)  # accepted, rejected
        unc_counts = np.zeros(2, dtype=np.int64)
        for step in range(n_steps):
            bs = [source_samples[i] for i in perm_s[step * cfg.batch_source : (step + 1) * cfg.batch_source]]
            bt = [target_samples[i] for i in perm_t[step * cfg.batch_target : (step + 1) * cfg.batch_target]]
            pair, bank, info, velocity = st_step(
                pair, bank, store, bs, bt, cfg,
                _derived_seed(cfg.seed, 8002, epoch, step), stats, pseudo_rule, velocity,
            )
            for key in sums:
                sums[key] += info[key]
            unc = 1.0 - info["probs_t"].max(axis=1)
            accept = info["y_t"] != cfg.ignore_id
            unc_sums += (float(unc[accept].sum()), float(unc[~accept].sum()))
            unc_counts += (int(accept.sum()), int((~accept).sum()))
            if target_gt is not None:
                gt = np.stack([target_gt[s.sample_id] for s in bt])
                valid = gt != cfg.ignore_id
                for name in q:
                    pl = info[name]
                    covered = valid & (pl != cfg.ignore_id)
                    q[name] += (
                        int((covered & (pl == gt)).sum()),
                        int(covered.sum()),
                        int(valid.sum()),
                    )
        row: dict = {"epoch": epoch}
        for key in sums:
            row[key] = sums[key] / max(n_steps, 1)
        if target_gt is not None:
            correct, covered, valid = q["y_t"]
            row["pl_precision"] = correct / covered if covered else float("nan")
            row["pl_recall"] = correct / valid if valid else float("nan")
            row["pl_coverage"] = covered / valid if valid else float("nan")
            for name, col in (("yfeat", "pl_precision_feat"), ("ywarm", "pl_precision_warm")):
                correct, covered, _ = q[name]
                row[col] = correct / covered if covered else float("nan")
        row["unc_accept"] = unc_sums[0] / unc_counts[0] if unc_counts[0] else float("nan")
        row["unc_reject"] = unc_sums[1] / unc_counts[1] if unc_counts[1] else float("nan")
        if val_samples is not None:
            _, val_miou = evaluation.evaluate_split(pair.layers, pair.student, val_samples, cfg, mst=False)
            row["miou_target_val"] = val_miou
        metrics.append(row)
    return pair, bank, store, metrics
