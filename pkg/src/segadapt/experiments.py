"""End-to-end pipelines and the experiment recipes behind the CLI.

A `Benchmark` bundles the in-memory splits with the honest-protocol rule
baked in: target-train labels are stripped from the training samples and
only exposed through the evaluation-only `target_gt` channel.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import evaluation, selftrain, warmup
from .augment import estimate_channel_stats
from .config import TrainConfig, save_config
from .data import DatasetIndex, Sample, generate_benchmark, load_dataset, load_split
from .model import ModelPair, save_checkpoint
from .warmup import DomainStats


@dataclass
class Benchmark:
    source: list[Sample]
    target_train: list[Sample]  # labels withheld
    target_val: list[Sample]
    target2_val: list[Sample]
    target_gt: dict[str, np.ndarray]  # evaluation-only ground truth for target_train


def benchmark_from_splits(splits: dict[str, list[Sample]]) -> Benchmark:
    """Wrap generated splits, withholding target-train labels from training."""
    gt = {s.sample_id: s.label for s in splits["target_train"] if s.label is not None}
    stripped = [replace_label_none(s) for s in splits["target_train"]]
    return Benchmark(splits["source"], stripped, splits["target_val"], splits["target2_val"], gt)


def replace_label_none(sample: Sample) -> Sample:
    return Sample(sample.image, None, sample.domain, sample.sample_id, sample.injected_mask)


def benchmark_from_disk(root, cfg: TrainConfig) -> Benchmark:
    """Load a written dataset; target-train labels go only to the gt channel."""
    index: DatasetIndex = load_dataset(root)
    source = load_split(index, "source", cfg, with_labels=True)
    target_train = load_split(index, "target_train", cfg, with_labels=False)
    target_val = load_split(index, "target_val", cfg, with_labels=True)
    target2_val = load_split(index, "target2_val", cfg, with_labels=True)
    gt: dict[str, np.ndarray] = {}
    try:
        for s in load_split(index, "target_train", cfg, with_labels=True):
            gt[s.sample_id] = s.label
    except Exception:
        gt = {}  # quality logging is optional; training never needs these
    return Benchmark(source, target_train, target_val, target2_val, gt)


def compute_domain_stats(bench: Benchmark) -> DomainStats:
    return DomainStats(
        source=estimate_channel_stats(bench.source),
        target=estimate_channel_stats(bench.target_train),
    )


# ---------------------------------------------------------------------------
# run directories


def prepare_run_dir(run_dir, cfg: TrainConfig) -> Path:
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.resolved")
    return run_dir


def write_metrics(path, rows) -> None:
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    Path(path).write_text(text, encoding="utf-8")


def write_report(path, report) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# stage pipelines


def run_warmup_stage(bench: Benchmark, cfg: TrainConfig, run_dir=None, log_val: bool = True):
    """Warm-up stage over a benchmark; optionally persists run artifacts."""
    stats = compute_domain_stats(bench)
    pair, metrics = warmup.train_warmup(
        bench.source, cfg, stats=stats, val_samples=bench.target_val if log_val else None
    )
    if run_dir is not None:
        run_dir = prepare_run_dir(run_dir, cfg)
        save_checkpoint(run_dir / "checkpoints" / "warmup.ckpt", pair)
        write_metrics(run_dir / "metrics.jsonl", metrics)
    return pair, metrics, stats


def run_st_stage(
    bench: Benchmark,
    pair: ModelPair,
    cfg: TrainConfig,
    stats: DomainStats | None = None,
    bank=None,
    run_dir=None,
    pseudo_rule=None,
    log_val: bool = True,
):
    """Self-training stage from a warm-up model; returns all artifacts."""
    if stats is None:
        stats = compute_domain_stats(bench)
    if bank is None:
        bank = selftrain.build_centroid_bank(pair, bench.source, cfg, stats)
    store = selftrain.generate_warm_labels(pair.layers, pair.student, bench.target_train, cfg)
    pair, bank, store, metrics = selftrain.train_st(
        bench.source,
        bench.target_train,
        pair,
        bank,
        store,
        cfg,
        stats,
        val_samples=bench.target_val if log_val else None,
        target_gt=bench.target_gt or None,
        pseudo_rule=pseudo_rule,
    )
    if run_dir is not None:
        run_dir = prepare_run_dir(run_dir, cfg)
        save_checkpoint(run_dir / "checkpoints" / "final.ckpt", pair, bank=bank)
        write_metrics(run_dir / "metrics.jsonl", metrics)
    return pair, bank, store, metrics


# ---------------------------------------------------------------------------
# experiment recipes

# Ablation ladder rows, cumulative: plain supervised training; the
# clean-to-augmented distillation term; the symmetric augmented-to-clean
# term; the cross-domain mixture; the self-training stage.  The first row
# is evaluated single-scale, later rows with multi-scale testing.
LADDER_ROWS = (
    ("source_only", dict(use_photometric=False, use_crdomix=False,
                         distill_clean_to_aug=False, distill_aug_to_clean=False)),
    ("distill_b", dict(use_photometric=True, use_crdomix=False,
                       distill_clean_to_aug=True, distill_aug_to_clean=False)),
    ("distill_bc", dict(use_photometric=True, use_crdomix=False,
                        distill_clean_to_aug=True, distill_aug_to_clean=True)),
    ("crdomix", dict(use_photometric=True, use_crdomix=True,
                     distill_clean_to_aug=True, distill_aug_to_clean=True)),
    ("selftrain", dict(use_photometric=True, use_crdomix=True,
                       distill_clean_to_aug=True, distill_aug_to_clean=True)),
)

# Desk-scale training budget used by the ladder / generalization /
# strategy-comparison recipes.  The library defaults keep the momenta and
# loss weights; the learning rate and epoch counts are raised to values
# at which the small from-scratch network actually converges on CPU.
RECIPE_OVERRIDES = dict(
    learning_rate=0.04,
    sgd_momentum=0.9,
    weight_decay=5e-4,
    ema_momentum=0.95,
    centroid_momentum=0.95,
    warmup_epochs=20,
    st_epochs=12,
    label_refresh_epochs=6,
)


def recipe_config(cfg: TrainConfig) -> TrainConfig:
    return dataclasses.replace(cfg, **RECIPE_OVERRIDES).validate()


def ablation_ladder(bench: Benchmark, base_cfg: TrainConfig, seeds=(1, 2, 3), progress=None,
                    keep_models: bool = False):
    """Train every ladder row for every seed; returns the report dict.

    Rows reuse artifacts where the ladder structure allows it: the
    self-training row continues from the mixture row's warm-up model of
    the same seed.  Source-only and symmetric-distillation rows are also
    evaluated on the second held-out domain, which doubles as the
    domain-generalization comparison (the symmetric row trains without
    any target-derived input).  With keep_models the trained warm-up
    pairs are returned alongside the report, keyed by (row, seed).
    """
    stats = compute_domain_stats(bench)
    rows = []
    per_seed_pairs: dict[tuple[str, int], ModelPair] = {}
    for name, flags in LADDER_ROWS:
        row = {"name": name, "miou_by_seed": [], "miou_mst_by_seed": [],
               "miou_target2_by_seed": []}
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **flags)
            if name == "selftrain":
                warm_pair = per_seed_pairs[("crdomix", seed)]
                pair_copy = ModelPair(
                    [p.copy() for p in warm_pair.student],
                    [p.copy() for p in warm_pair.teacher],
                    warm_pair.layers,
                )
                pair, _, _, _ = run_st_stage(bench, pair_copy, cfg, stats=stats, log_val=False)
            else:
                pair, _ = warmup.train_warmup(bench.source, cfg, stats=stats, val_samples=None)
                per_seed_pairs[(name, seed)] = pair
            _, m_single = evaluation.evaluate_split(pair.layers, pair.student, bench.target_val, cfg, mst=False)
            _, m_mst = evaluation.evaluate_split(pair.layers, pair.student, bench.target_val, cfg, mst=True)
            row["miou_by_seed"].append(m_single)
            row["miou_mst_by_seed"].append(m_mst)
            if name in ("source_only", "distill_bc"):
                _, m2 = evaluation.evaluate_split(pair.layers, pair.student, bench.target2_val, cfg, mst=True)
                row["miou_target2_by_seed"].append(m2)
            if progress is not None:
                progress(name, seed, m_single, m_mst)
        # ladder score: paper-style, single-scale for the plain baseline,
        # multi-scale for every row that includes the MST component
        scored = row["miou_by_seed"] if name == "source_only" else row["miou_mst_by_seed"]
        row["miou"] = float(np.mean(scored))
        if row["miou_target2_by_seed"]:
            row["miou_target2"] = float(np.mean(row["miou_target2_by_seed"]))
        rows.append(row)
    report = {"seeds": list(seeds), "rows": rows}
    if keep_models:
        return report, per_seed_pairs
    return report


def generalization_study(bench: Benchmark, base_cfg: TrainConfig, seeds=(1, 2, 3), progress=None):
    """Plain supervised training vs distillation warm-up with the
    translator disabled, evaluated on both held-out domains."""
    variants = (
        ("supervised_only", LADDER_ROWS[0][1]),
        ("distillation", LADDER_ROWS[2][1]),
    )
    stats = compute_domain_stats(bench)
    report_rows = []
    for name, flags in variants:
        row = {"name": name, "miou_target_by_seed": [], "miou_target2_by_seed": []}
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **flags)
            pair, _ = warmup.train_warmup(bench.source, cfg, stats=stats, val_samples=None)
            _, m1 = evaluation.evaluate_split(pair.layers, pair.student, bench.target_val, cfg, mst=True)
            _, m2 = evaluation.evaluate_split(pair.layers, pair.student, bench.target2_val, cfg, mst=True)
            row["miou_target_by_seed"].append(m1)
            row["miou_target2_by_seed"].append(m2)
            if progress is not None:
                progress(name, seed, m1, m2)
        row["miou_target"] = float(np.mean(row["miou_target_by_seed"]))
        row["miou_target2"] = float(np.mean(row["miou_target2_by_seed"]))
        report_rows.append(row)
    return {"seeds": list(seeds), "rows": report_rows}


def strategy_comparison(bench: Benchmark, base_cfg: TrainConfig, warm_pair=None, stats=None):
    """Self-training with each pseudo-labelling strategy from one shared
    warm-up model; returns the per-strategy report."""
    cfg = replace(base_cfg, **{k: True for k in (
        "use_photometric", "use_crdomix", "distill_clean_to_aug", "distill_aug_to_clean")})
    if stats is None:
        stats = compute_domain_stats(bench)
    if warm_pair is None:
        warm_pair, _ = warmup.train_warmup(bench.source, cfg, stats=stats, val_samples=None)
    bank = selftrain.build_centroid_bank(warm_pair, bench.source, cfg, stats)
    store = selftrain.generate_warm_labels(warm_pair.layers, warm_pair.student, bench.target_train, cfg)
    return evaluation.compare_strategies(
        warm_pair,
        bank,
        store,
        bench.source,
        bench.target_train,
        cfg,
        stats,
        bench.target_val,
        target_gt=bench.target_gt or None,
    )


def make_benchmark(cfg: TrainConfig) -> Benchmark:
    return benchmark_from_splits(generate_benchmark(cfg))
