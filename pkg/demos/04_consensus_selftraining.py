"""Threshold-free self-training walkthrough.

Starting from a quick warm-up model, shows the two label sources
(nearest-centroid feature votes and stored model predictions), their
consensus, and how pseudo-label precision relates to prediction
uncertainty during the self-training epochs.
"""

from segadapt import experiments, selftrain, warmup
from segadapt.centroids import vote_labels
from segadapt.config import load_config
from segadapt.evaluation import evaluate_split, pseudo_quality
from segadapt.model import forward_features, upsample_nearest

cfg = experiments.recipe_config(load_config(None, {
    "n_source": "96", "n_target_train": "96", "n_target_val": "32", "n_target2_val": "16",
    "warmup_epochs": "10", "st_epochs": "6", "label_refresh_epochs": "3",
}))
bench = experiments.make_benchmark(cfg)
stats = experiments.compute_domain_stats(bench)

print("warm-up...")
pair, _ = warmup.train_warmup(bench.source, cfg, stats=stats)
bank = selftrain.build_centroid_bank(pair, bench.source, cfg, stats)
store = selftrain.generate_warm_labels(pair.layers, pair.student, bench.target_train, cfg)
print("centroid bank covers", int(bank.present.sum()), "of", cfg.num_classes, "classes")

sample = bench.target_train[0]
gt = bench.target_gt[sample.sample_id]
feats = forward_features(pair.layers, pair.teacher, sample.image.transpose(2, 0, 1)[None])
y_feat = upsample_nearest(vote_labels(feats, bank), cfg.feature_stride)[0]
y_warm = store.labels[sample.sample_id]
y_consensus = selftrain.consensus(y_feat, y_warm, cfg.ignore_id)
for name, labels in (("feature votes", y_feat), ("stored warm labels", y_warm),
                     ("consensus", y_consensus)):
    q = pseudo_quality(labels, gt, cfg.ignore_id)
    print(f"  {name:<20} precision {q.precision:.3f}  coverage {q.coverage:.3f}")

print("\nself-training...")
pair, bank, store, metrics = selftrain.train_st(
    bench.source, bench.target_train, pair, bank, store, cfg, stats,
    val_samples=bench.target_val, target_gt=bench.target_gt,
)
for row in metrics:
    print(f"  epoch {row['epoch']}: precision {row['pl_precision']:.3f}"
          f"  coverage {row['pl_coverage']:.3f}"
          f"  uncertainty accepted/rejected {row['unc_accept']:.3f}/{row['unc_reject']:.3f}"
          f"  target mIoU {row['miou_target_val']:.3f}")

_, final = evaluate_split(pair.layers, pair.student, bench.target_val, cfg, mst=True)
print(f"\nfinal target mIoU with multi-scale testing: {final:.3f}")
