"""Warm-up stage in miniature: plain supervised training vs symmetric
distillation, compared on the unseen target domain.

Uses a reduced corpus so the whole script runs in about a minute; the
qualitative gap (distillation generalizes, plain supervision does not)
already shows at this scale.
"""

import dataclasses
import time

from segadapt import experiments, warmup
from segadapt.config import load_config
from segadapt.evaluation import evaluate_split

cfg = experiments.recipe_config(load_config(None, {
    "n_source": "96", "n_target_train": "96", "n_target_val": "32", "n_target2_val": "16",
    "warmup_epochs": "10",
}))
bench = experiments.make_benchmark(cfg)
stats = experiments.compute_domain_stats(bench)

source_only = dataclasses.replace(
    cfg, use_photometric=False, use_crdomix=False,
    distill_clean_to_aug=False, distill_aug_to_clean=False,
)

for name, variant in (("plain supervised", source_only), ("symmetric distillation", cfg)):
    t0 = time.time()
    pair, metrics = warmup.train_warmup(bench.source, variant, stats=stats,
                                        val_samples=bench.target_val)
    _, src_miou = evaluate_split(pair.layers, pair.student, bench.source, variant)
    _, tgt_miou = evaluate_split(pair.layers, pair.student, bench.target_val, variant)
    print(f"{name} ({time.time() - t0:.0f}s)")
    print(f"  source mIoU {src_miou:.3f}   target mIoU {tgt_miou:.3f}")
    print("  target trajectory:", [round(r["miou_target_val"], 3) for r in metrics])
