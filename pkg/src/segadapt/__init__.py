"""Stage-wise domain-adaptive semantic segmentation, desk scale.

Warm-up by symmetric EMA knowledge distillation with cross-domain mixture
augmentation, then threshold-free self-training supervised by the
consensus of nearest-centroid feature votes and stored model predictions,
all exercised on a procedurally generated two-domain benchmark.
"""

from .augment import (
    ChannelStats,
    ClassMask,
    build_class_mask,
    crdomix,
    estimate_channel_stats,
    photometric_augment,
    translate_to_stats,
)
from .centroids import CentroidBank, batch_class_means, ema_update_centroids, vote_labels
from .config import ConfigError, TrainConfig, ValidationError, load_config, save_config
from .data import (
    DatasetIndex,
    Sample,
    Scene,
    generate_benchmark,
    generate_scene,
    inject_longtail_labels,
    load_dataset,
    load_split,
    render_domain,
    write_dataset,
)
from .evaluation import (
    ConfusionMatrix,
    accumulate,
    miou,
    mst_predict,
    pseudo_quality,
    threshold_labels,
    uncertainty_map,
)
from .experiments import (
    Benchmark,
    ablation_ladder,
    benchmark_from_disk,
    benchmark_from_splits,
    compute_domain_stats,
    generalization_study,
    make_benchmark,
    strategy_comparison,
)
from .model import (
    ModelPair,
    ema_update,
    forward,
    forward_features,
    init_pair,
    load_checkpoint,
    save_checkpoint,
)
from .selftrain import PseudoLabelStore, consensus, generate_warm_labels, refresh_labels, st_step, train_st
from .warmup import DomainStats, ce_loss, distill_loss, train_warmup, warmup_step

__version__ = "0.1.0"
