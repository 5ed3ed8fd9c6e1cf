"""Command-line orchestration of the pipeline and experiment recipes.

Every TrainConfig field is settable as ``--<field> <value>`` on every
subcommand, applied on top of an optional ``--config`` file.  Exit codes:
0 success, 2 usage, 3 validation, 4 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluation, experiments, selftrain
from .augment import AugmentError
from .centroids import CentroidError
from .config import ConfigError, TrainConfig, ValidationError, load_config
from .data import DataError, generate_benchmark, write_dataset
from .model import ModelError, load_checkpoint, save_checkpoint
from .warmup import build_source_views

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="config file (key = value lines)")
    group = parser.add_argument_group("config overrides (applied after --config)")
    defaults = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        group.add_argument(
            f"--{f.name}",
            metavar="V",
            dest=f"cfg_{f.name}",
            help=f"set {f.name} (default {getattr(defaults, f.name)})",
        )


def _resolve_config(args) -> TrainConfig:
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = raw
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segadapt",
        description="Domain-adaptive segmentation on a synthetic two-domain benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and write the synthetic benchmark")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--preview-crdomix", type=int, default=0, metavar="N",
                   help="also dump N cross-domain mixture previews as PNG")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-warmup", help="run the warm-up stage")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--run", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_warmup)

    p = sub.add_parser("init-centroids", help="initialize the centroid bank offline")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--out", required=True, metavar="CKPT", help="checkpoint written with the bank")
    _add_config_flags(p)
    p.set_defaults(func=cmd_init_centroids)

    p = sub.add_parser("train-st", help="run the self-training stage")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--checkpoint", required=True, metavar="CKPT", help="warm-up checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_st)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on any split")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--split", default="target_val",
                   choices=("source", "target_train", "target_val", "target2_val"))
    p.add_argument("--mst", action="store_true", help="multi-scale testing")
    p.add_argument("--use-teacher", action="store_true", help="evaluate the teacher weights")
    p.add_argument("--dump", metavar="DIR", help="write colorized predictions and uncertainty maps")
    p.add_argument("--json", metavar="FILE", help="also write the report as JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-pseudo", help="pseudo-labelling strategy comparison")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--checkpoint", metavar="CKPT", help="optional shared warm-up checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare_pseudo)

    p = sub.add_parser("ablate", help="component ladder over multiple seeds")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--seeds", default="1,2,3", metavar="S1,S2,...")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("generalize", help="distillation warm-up vs plain supervised on both held-out domains")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--seeds", default="1,2,3", metavar="S1,S2,...")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generalize)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    splits = generate_benchmark(cfg)
    out = Path(args.out)
    write_dataset(splits, out)
    print(f"wrote {sum(len(v) for v in splits.values())} samples to {out}")
    if args.preview_crdomix > 0:
        bench = experiments.benchmark_from_splits(splits)
        stats = experiments.compute_domain_stats(bench)
        preview_dir = out / "previews"
        preview_dir.mkdir(parents=True, exist_ok=True)
        n = min(args.preview_crdomix, len(bench.source))
        _, mixed = build_source_views(bench.source[:n], cfg, cfg.seed, stats)
        for i in range(n):
            img8 = np.clip(np.round(mixed[i].transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img8, mode="RGB").save(preview_dir / f"crdomix_{i:03d}.png")
        print(f"wrote {n} mixture previews to {preview_dir}")
    return EXIT_OK


def cmd_train_warmup(args) -> int:
    cfg = _resolve_config(args)
    bench = experiments.benchmark_from_disk(args.data, cfg)
    run_dir = experiments.prepare_run_dir(args.run, cfg)
    pair, metrics, _ = experiments.run_warmup_stage(bench, cfg, run_dir=run_dir)
    final = metrics[-1]["miou_target_val"] if metrics else float("nan")
    experiments.write_report(run_dir / "report.json",
                             {"stage": "warmup", "epochs": cfg.warmup_epochs, "miou_target_val": final})
    print(f"warm-up done: {cfg.warmup_epochs} epochs, target-val mIoU {final:.4f}")
    print(f"checkpoint: {run_dir / 'checkpoints' / 'warmup.ckpt'}")
    return EXIT_OK


def cmd_init_centroids(args) -> int:
    cfg = _resolve_config(args)
    bench = experiments.benchmark_from_disk(args.data, cfg)
    pair, _ = load_checkpoint(args.checkpoint)
    stats = experiments.compute_domain_stats(bench)
    bank = selftrain.build_centroid_bank(pair, bench.source, cfg, stats)
    save_checkpoint(args.out, pair, bank=bank)
    print(f"centroid bank over {int(bank.present.sum())}/{cfg.num_classes} classes -> {args.out}")
    return EXIT_OK


def cmd_train_st(args) -> int:
    cfg = _resolve_config(args)
    bench = experiments.benchmark_from_disk(args.data, cfg)
    pair, bank = load_checkpoint(args.checkpoint)
    run_dir = experiments.prepare_run_dir(args.run, cfg)
    pair, bank, _, metrics = experiments.run_st_stage(bench, pair, cfg, bank=bank, run_dir=run_dir)
    final = metrics[-1]["miou_target_val"] if metrics else float("nan")
    experiments.write_report(run_dir / "report.json",
                             {"stage": "selftrain", "epochs": cfg.st_epochs, "miou_target_val": final})
    print(f"self-training done: {cfg.st_epochs} epochs, target-val mIoU {final:.4f}")
    print(f"checkpoint: {run_dir / 'checkpoints' / 'final.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    bench_index = experiments.benchmark_from_disk(args.data, cfg)
    samples = {
        "source": bench_index.source,
        "target_train": None,
        "target_val": bench_index.target_val,
        "target2_val": bench_index.target2_val,
    }[args.split]
    if samples is None:
        from .data import load_dataset, load_split

        samples = load_split(load_dataset(args.data), "target_train", cfg, with_labels=True)
    pair, _ = load_checkpoint(args.checkpoint)
    params = pair.teacher if args.use_teacher else pair.student
    ious, mean = evaluation.evaluate_split(pair.layers, params, samples, cfg, mst=args.mst)
    names = ["background", "box", "disc", "wedge", "bar", "pole"]
    print(f"split: {args.split}   mst: {args.mst}   weights: {'teacher' if args.use_teacher else 'student'}")
    for k, iou in enumerate(ious):
        label = names[k] if k < len(names) else f"class{k}"
        print(f"  {label:<12} IoU {iou:.4f}" if not np.isnan(iou) else f"  {label:<12} IoU   n/a")
    print(f"  {'mIoU':<12}     {mean:.4f}")
    if args.json:
        experiments.write_report(args.json, {
            "split": args.split, "mst": args.mst,
            "iou": [None if np.isnan(v) else float(v) for v in ious], "miou": mean,
        })
    if args.dump:
        dump_dir = Path(args.dump)
        dump_dir.mkdir(parents=True, exist_ok=True)
        preds = evaluation.predict_labels(pair.layers, params, samples, cfg, mst=args.mst)
        for sample, pred in zip(samples, preds):
            Image.fromarray(evaluation.colorize_labels(pred, cfg.ignore_id), "RGB").save(
                dump_dir / f"{sample.sample_id}_pred.png"
            )
            from .model import forward

            probs = forward(pair.layers, params, sample.image.transpose(2, 0, 1)[None])[0].probs[0]
            unc = evaluation.uncertainty_map(probs)
            Image.fromarray(evaluation.colorize_uncertainty(unc), "L").save(
                dump_dir / f"{sample.sample_id}_uncertainty.png"
            )
        print(f"wrote {len(samples)} prediction/uncertainty dumps to {dump_dir}")
    return EXIT_OK


def cmd_compare_pseudo(args) -> int:
    cfg = experiments.recipe_config(_resolve_config(args))
    bench = experiments.benchmark_from_disk(args.data, cfg)
    warm_pair = None
    if args.checkpoint:
        warm_pair, _ = load_checkpoint(args.checkpoint)
    run_dir = experiments.prepare_run_dir(args.run, cfg)
    report = experiments.strategy_comparison(bench, cfg, warm_pair=warm_pair)
    experiments.write_report(run_dir / "report.json", {
        name: {"miou": r["miou"]} for name, r in report.items()
    })
    for name, r in report.items():
        experiments.write_metrics(run_dir / f"metrics_{name}.jsonl", r["metrics"])
    print(f"{'strategy':<12} {'final mIoU':>10}")
    for name, r in report.items():
        print(f"{name:<12} {r['miou']:>10.4f}")
    return EXIT_OK


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated ints, got {text!r}") from exc


def cmd_ablate(args) -> int:
    cfg = experiments.recipe_config(_resolve_config(args))
    bench = experiments.benchmark_from_disk(args.data, cfg)
    run_dir = experiments.prepare_run_dir(args.run, cfg)

    def progress(name, seed, m_single, m_mst):
        print(f"  [{name} seed={seed}] mIoU {m_single:.4f} (mst {m_mst:.4f})", flush=True)

    report = experiments.ablation_ladder(bench, cfg, seeds=_parse_seeds(args.seeds), progress=progress)
    experiments.write_report(run_dir / "report.json", report)
    print(f"{'row':<14} {'mIoU':>8}")
    for row in report["rows"]:
        print(f"{row['name']:<14} {row['miou']:>8.4f}")
    return EXIT_OK


def cmd_generalize(args) -> int:
    cfg = experiments.recipe_config(_resolve_config(args))
    bench = experiments.benchmark_from_disk(args.data, cfg)
    run_dir = experiments.prepare_run_dir(args.run, cfg)

    def progress(name, seed, m1, m2):
        print(f"  [{name} seed={seed}] target {m1:.4f}  target2 {m2:.4f}", flush=True)

    report = experiments.generalization_study(bench, cfg, seeds=_parse_seeds(args.seeds), progress=progress)
    experiments.write_report(run_dir / "report.json", report)
    print(f"{'variant':<18} {'target':>8} {'target2':>8}")
    for row in report["rows"]:
        print(f"{row['name']:<18} {row['miou_target']:>8.4f} {row['miou_target2']:>8.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, ModelError, AugmentError, CentroidError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
