"""Training configuration: every tunable in one validated, immutable record.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments.
Tuples are comma-separated (``image_size = 64,64``), booleans are
``true``/``false``.  CLI overrides are applied after file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(Exception):
    """Unknown key or unparseable config input."""


class ValidationError(Exception):
    """A field value violates its documented bound."""


@dataclass(frozen=True)
class TrainConfig:
    # problem geometry
    num_classes: int = 6
    ignore_id: int = 255
    image_size: tuple[int, int] = (64, 64)
    feature_dim: int = 16
    feature_stride: int = 4

    # loss weights and momenta
    alpha: float = 0.5
    lambda_seg: float = 1.0
    lambda_distil_warmup: float = 0.5
    lambda_distil_st: float = 0.25
    ema_momentum: float = 0.999
    centroid_momentum: float = 0.999

    # optimization
    learning_rate: float = 2.5e-4
    sgd_momentum: float = 0.0
    weight_decay: float = 0.0
    batch_source: int = 8
    batch_target: int = 8
    warmup_epochs: int = 20
    st_epochs: int = 30
    label_refresh_epochs: int = 10

    # evaluation
    mst_scales: tuple[float, ...] = (0.75, 1.0, 1.25)

    # stage structure (ablation switches; all on = full warm-up)
    use_photometric: bool = True
    use_crdomix: bool = True
    distill_clean_to_aug: bool = True
    distill_aug_to_clean: bool = True
    refresh_with_teacher: bool = False

    # synthetic benchmark generation
    n_source: int = 400
    n_target_train: int = 400
    n_target_val: int = 100
    n_target2_val: int = 100
    source_noise: float = 0.02
    target_noise: float = 0.04
    longtail_segments: int = 4
    longtail_contrast: float = 0.03

    # photometric augmentation amplitudes
    aug_brightness: float = 0.15
    aug_gain: float = 0.25
    aug_grayscale_prob: float = 0.35
    aug_blur_prob: float = 0.2

    seed: int = 0

    def validate(self) -> "TrainConfig":
        """Check every documented invariant; raise ValidationError naming field and bound."""
        c = self
        checks = [
            (c.num_classes >= 2, "num_classes", ">= 2"),
            (not (0 <= c.ignore_id < c.num_classes), "ignore_id", "outside [0, num_classes)"),
            (c.feature_dim >= 4 and c.feature_dim % 2 == 0, "feature_dim", "even and >= 4"),
            (c.feature_stride in (2, 4, 8), "feature_stride", "one of 2, 4, 8"),
            (len(c.image_size) == 2 and all(v >= c.feature_stride for v in c.image_size),
             "image_size", ">= feature_stride in both dims"),
            (all(v % c.feature_stride == 0 for v in c.image_size),
             "image_size", "multiple of feature_stride"),
            (0.0 < c.alpha < 1.0, "alpha", "in open interval (0, 1)"),
            (c.lambda_seg >= 0.0, "lambda_seg", ">= 0"),
            (c.lambda_distil_warmup >= 0.0, "lambda_distil_warmup", ">= 0"),
            (c.lambda_distil_st >= 0.0, "lambda_distil_st", ">= 0"),
            (0.0 <= c.ema_momentum <= 1.0, "ema_momentum", "in [0, 1]"),
            (0.0 <= c.centroid_momentum <= 1.0, "centroid_momentum", "in [0, 1]"),
            (c.learning_rate >= 0.0, "learning_rate", ">= 0"),
            (0.0 <= c.sgd_momentum < 1.0, "sgd_momentum", "in [0, 1)"),
            (c.weight_decay >= 0.0, "weight_decay", ">= 0"),
            (c.batch_source >= 1, "batch_source", ">= 1"),
            (c.batch_target >= 1, "batch_target", ">= 1"),
            (c.warmup_epochs >= 0, "warmup_epochs", ">= 0"),
            (c.st_epochs >= 0, "st_epochs", ">= 0"),
            (c.label_refresh_epochs >= 1, "label_refresh_epochs", ">= 1"),
            (len(c.mst_scales) > 0 and all(s > 0 for s in c.mst_scales),
             "mst_scales", "non-empty, all > 0"),
            (c.n_source >= 1, "n_source", ">= 1"),
            (c.n_target_train >= 1, "n_target_train", ">= 1"),
            (c.n_target_val >= 1, "n_target_val", ">= 1"),
            (c.n_target2_val >= 1, "n_target2_val", ">= 1"),
            (c.source_noise >= 0.0, "source_noise", ">= 0"),
            (c.target_noise >= 0.0, "target_noise", ">= 0"),
            (c.longtail_segments >= 0, "longtail_segments", ">= 0"),
            (0.0 <= c.longtail_contrast < 0.05, "longtail_contrast", "in [0, 0.05)"),
            (c.aug_brightness >= 0.0, "aug_brightness", ">= 0"),
            (0.0 <= c.aug_gain < 1.0, "aug_gain", "in [0, 1)"),
            (0.0 <= c.aug_grayscale_prob <= 1.0, "aug_grayscale_prob", "in [0, 1]"),
            (0.0 <= c.aug_blur_prob <= 1.0, "aug_blur_prob", "in [0, 1]"),
            (c.seed >= 0, "seed", ">= 0"),
        ]
        for ok, field, bound in checks:
            if not ok:
                raise ValidationError(f"{field}: must be {bound}, got {getattr(c, field)!r}")
        return c


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, raw, field) -> object:
    """Coerce a raw string (or already-typed value) to the field's type."""
    ftype = field.type
    if not isinstance(raw, str):
        value = raw
        if ftype in ("int", int) and isinstance(value, bool):
            raise ConfigError(f"{name}: expected int, got bool")
        return value
    text = raw.strip()
    try:
        if ftype in ("int", int):
            return int(text)
        if ftype in ("float", float):
            return float(text)
        if ftype in ("bool", bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if "tuple[int, int]" in str(ftype):
            parts = [int(p) for p in text.split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError(text)
            return tuple(parts)
        if "tuple[float, ...]" in str(ftype):
            return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {ftype}") from exc
    raise ConfigError(f"{name}: unsupported field type {ftype}")


def _apply(values: dict, name: str, raw) -> None:
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key: {name!r}")
    values[name] = _parse_value(name, raw, _FIELDS[name])


def parse_overrides(pairs) -> dict:
    """Turn ``["alpha=0.5", ...]`` or ``[("alpha", "0.5"), ...]`` into a typed dict."""
    out: dict = {}
    for item in pairs or []:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, _, val = item.partition("=")
        else:
            key, val = item
        _apply(out, key.strip(), val)
    return out


def load_config(path=None, overrides=None) -> TrainConfig:
    """Load a config file (optional) and apply overrides, then validate.

    Raises ConfigError for unknown keys or bad syntax, ValidationError for
    out-of-bound values.  Deterministic: same inputs give an equal TrainConfig.
    """
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {line!r}")
            key, _, val = stripped.partition("=")
            _apply(values, key.strip(), val)
    if isinstance(overrides, dict):
        for key, val in overrides.items():
            _apply(values, key, val)
    else:
        values.update(parse_overrides(overrides))
    return TrainConfig(**values).validate()


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: TrainConfig) -> str:
    """Render cfg in the config-file format; load_config inverts this exactly."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
