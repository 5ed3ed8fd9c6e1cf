"""Synthetic two-domain segmentation benchmark.

A labelled "source" domain and an unlabelled "target" domain share scene
geometry statistics but differ in appearance: the source uses a fixed
per-class palette with mild i.i.d. noise, the target re-colors the same
palette through a global channel-mixing gain/bias shift and adds textured
noise.  A second held-out shift ("target2") supports generalization
studies.  Source labels additionally receive hardly-visible thin
structures ("long-tail" labels) that are harmful to learn literally.

Classes: 0 background, 1 box, 2 disc, 3 wedge, 4 bar, 5 pole.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .config import TrainConfig

DOMAINS = ("source", "target", "target2")
SPLITS = ("source", "target_train", "target_val", "target2_val")
SPLIT_FOLDER = {
    "source": "source",
    "target_train": "target",
    "target_val": "target",
    "target2_val": "target2",
}
SPLIT_PREFIX = {"source": "s", "target_train": "t", "target_val": "v", "target2_val": "w"}
SPLIT_DOMAIN = {
    "source": "source",
    "target_train": "target",
    "target_val": "target",
    "target2_val": "target2",
}

# Color geometry.  Class colors sit on a luminance ladder with distinct
# hues: color = Y * (1,1,1) + r * (cos(phi) u2 + sin(phi) u3), where u1
# is the unit luminance axis and (u2, u3) span the chroma plane.  The
# domain shifts rotate and shrink the chroma plane (far outside the span
# of per-channel photometric jitter) while mapping luminance affinely,
# so luminance ordering survives the shift but absolute RGB does not.
_LUMA = np.array([0.299, 0.587, 0.114])
_U1 = _LUMA / np.linalg.norm(_LUMA)
_U2 = np.array([1.0, 0.0, 0.0]) - np.dot([1.0, 0.0, 0.0], _U1) * _U1
_U2 = _U2 / np.linalg.norm(_U2)
_U3 = np.cross(_U1, _U2)

_CLASS_LUMA = np.array([0.16, 0.32, 0.46, 0.60, 0.74, 0.82])
_CLASS_HUE_DEG = np.array([0.0, 60.0, 120.0, 180.0, 240.0, 300.0])
_CLASS_CHROMA = np.array([0.16, 0.16, 0.16, 0.16, 0.16, 0.10])


def _build_palette() -> np.ndarray:
    phi = np.deg2rad(_CLASS_HUE_DEG)
    chroma = np.cos(phi)[:, None] * _U2 + np.sin(phi)[:, None] * _U3
    return _CLASS_LUMA[:, None] + _CLASS_CHROMA[:, None] * chroma


def _build_shift(luma_gain: float, luma_bias: float, hue_deg: float, chroma_gain: float):
    """(MIX, BIAS) with color' = MIX @ color + BIAS.

    Decomposes color = Y * (1,1,1) + chroma (chroma orthogonal to the
    luminance axis), maps Y affinely and rotates/scales the chroma, so
    Y' = luma_gain * Y + luma_bias exactly.
    """
    th = np.deg2rad(hue_deg)
    gray_of_luma = np.outer(np.ones(3), _LUMA)  # c -> (w . c) * (1,1,1)
    p_chroma = np.outer(_U2, _U2) + np.outer(_U3, _U3)
    rot = np.cos(th) * p_chroma + np.sin(th) * (np.outer(_U3, _U2) - np.outer(_U2, _U3))
    mix = luma_gain * gray_of_luma + chroma_gain * rot @ (np.eye(3) - gray_of_luma)
    bias = luma_bias * np.ones(3)
    return mix, bias


PALETTE = _build_palette()
TARGET_MIX, TARGET_BIAS = _build_shift(0.88, 0.06, 50.0, 0.85)
TARGET2_MIX, TARGET2_BIAS = _build_shift(1.08, -0.02, -45.0, 0.75)

LONGTAIL_CLASS = 5

# Skewed class frequencies for placed primitives (classes 1..5): common
# shapes dominate, poles are scarce, mimicking long-tail class statistics.
CLASS_WEIGHTS = np.array([0.30, 0.27, 0.20, 0.13, 0.10])

_DOMAIN_CODE = {"source": 1, "target": 2, "target2": 3}
_SPLIT_CODE = {name: i + 1 for i, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class Primitive:
    class_id: int
    cx: float
    cy: float
    pa: float  # half-width / radius / half-base, by shape kind
    pb: float  # half-height / unused / height, by shape kind


@dataclass(frozen=True)
class Scene:
    geometry: tuple[Primitive, ...]
    seed: int


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    label: np.ndarray | None  # (H, W) uint8, ignore_id allowed
    domain: str
    sample_id: str = ""
    injected_mask: np.ndarray | None = None  # (H, W) bool, long-tail pixels


@dataclass
class DatasetIndex:
    root: Path
    splits: dict[str, list[str]] = field(default_factory=dict)


class DataError(Exception):
    """Malformed dataset layout or unreadable file."""


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def generate_scene(seed: int, cfg: TrainConfig) -> Scene:
    """Deterministic random scene with at least three distinct classes."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    h, w = cfg.image_size
    rng = np.random.default_rng(seed)
    n_prim = int(rng.integers(4, 9))
    # first three primitives get distinct classes so every scene is non-degenerate
    first = rng.choice(5, size=3, replace=False, p=CLASS_WEIGHTS) + 1
    rest = rng.choice(5, size=n_prim - 3, replace=True, p=CLASS_WEIGHTS) + 1
    classes = np.concatenate([first, rest])
    scale = min(h, w) / 64.0
    prims = []
    for cid in classes:
        cid = int(cid)
        cx = float(rng.uniform(0.12, 0.88) * w)
        cy = float(rng.uniform(0.12, 0.88) * h)
        if cid == 1:  # box
            pa = float(rng.uniform(5, 11) * scale)
            pb = float(rng.uniform(5, 11) * scale)
        elif cid == 2:  # disc
            pa = float(rng.uniform(5, 10) * scale)
            pb = 0.0
        elif cid == 3:  # wedge
            pa = float(rng.uniform(6, 12) * scale)
            pb = float(rng.uniform(10, 20) * scale)
        elif cid == 4:  # bar
            pa = float(rng.uniform(10, 20) * scale)
            pb = float(rng.uniform(2.5, 3.5) * scale)
        else:  # pole
            pa = float(rng.uniform(1.0, 1.6) * scale)
            pb = float(rng.uniform(8, 18) * scale)
        prims.append(Primitive(cid, cx, cy, pa, pb))
    return Scene(tuple(prims), seed)


def rasterize(scene: Scene, cfg: TrainConfig) -> np.ndarray:
    """Paint primitives in placement order onto a background-0 label map."""
    h, w = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w]
    label = np.zeros((h, w), dtype=np.uint8)
    for p in scene.geometry:
        dx = xx - p.cx
        dy = yy - p.cy
        if p.class_id == 2:
            mask = dx * dx + dy * dy <= p.pa * p.pa
        elif p.class_id == 3:
            # upward wedge: apex at cy - pb/2, base at cy + pb/2
            rel = (dy + p.pb / 2.0) / p.pb
            mask = (rel >= 0) & (rel <= 1) & (np.abs(dx) <= rel * p.pa)
        else:
            mask = (np.abs(dx) <= p.pa) & (np.abs(dy) <= p.pb)
        label[mask] = p.class_id
    return label


def _smooth_noise(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Spatially correlated unit-variance noise field."""
    noise = rng.standard_normal((h, w))
    kernel = np.array([0.25, 0.5, 0.25])
    for _ in range(3):
        noise = (
            np.pad(noise, ((1, 1), (0, 0)), mode="edge")[:-2] * kernel[0]
            + noise * kernel[1]
            + np.pad(noise, ((1, 1), (0, 0)), mode="edge")[2:] * kernel[2]
        )
        noise = (
            np.pad(noise, ((0, 0), (1, 1)), mode="edge")[:, :-2] * kernel[0]
            + noise * kernel[1]
            + np.pad(noise, ((0, 0), (1, 1)), mode="edge")[:, 2:] * kernel[2]
        )
    sd = noise.std()
    return noise / sd if sd > 0 else noise


def domain_palette(domain: str) -> np.ndarray:
    """Noise-free per-class colors as rendered in the given domain."""
    if domain == "source":
        return PALETTE.copy()
    if domain == "target":
        return PALETTE @ TARGET_MIX.T + TARGET_BIAS
    if domain == "target2":
        return PALETTE @ TARGET2_MIX.T + TARGET2_BIAS
    raise ValueError(f"unknown domain {domain!r}")


def render_domain(scene: Scene, domain: str, cfg: TrainConfig) -> Sample:
    """Render a scene in one domain; label maps are domain-independent."""
    label = rasterize(scene, cfg)
    base = domain_palette(domain)[label]
    rng = np.random.default_rng(_derived_seed(scene.seed, _DOMAIN_CODE[domain]))
    if domain == "source":
        img = base + rng.standard_normal(base.shape) * cfg.source_noise
    else:
        h, w = label.shape
        texture = _smooth_noise(rng, h, w)[..., None] * cfg.target_noise
        img = base + texture + rng.standard_normal(base.shape) * (cfg.target_noise * 0.5)
    return Sample(np.clip(img, 0.0, 1.0), label, domain)


def inject_longtail_labels(sample: Sample, seed: int, cfg: TrainConfig) -> Sample:
    """Add thin, hardly-visible structures to the label map.

    The injected pixels get class LONGTAIL_CLASS in the label while the
    image is nudged toward that class color by only `longtail_contrast`,
    so they are nearly indistinguishable from their surroundings.  Total
    injected area is capped at 1% of the image.  The injected pixels are
    recorded in `injected_mask` for analysis.
    """
    if sample.label is None:
        raise ValueError("inject_longtail_labels requires a labelled sample")
    if cfg.longtail_segments == 0:
        return sample
    h, w = sample.label.shape
    rng = np.random.default_rng(seed)
    cap = int(0.01 * h * w)
    mask = np.zeros((h, w), dtype=bool)
    injected = 0
    for _ in range(cfg.longtail_segments):
        if injected >= cap:
            break
        length = int(rng.integers(8, 21))
        length = min(length, cap - injected)
        vertical = bool(rng.integers(0, 2))
        if vertical:
            y0 = int(rng.integers(0, max(1, h - length)))
            x0 = int(rng.integers(0, w))
            mask[y0 : y0 + length, x0] = True
        else:
            y0 = int(rng.integers(0, h))
            x0 = int(rng.integers(0, max(1, w - length)))
            mask[y0, x0 : x0 + length] = True
        injected = int(mask.sum())
    label = sample.label.copy()
    label[mask] = LONGTAIL_CLASS
    color = domain_palette(sample.domain)[LONGTAIL_CLASS]
    image = sample.image.copy()
    beta = cfg.longtail_contrast
    image[mask] = image[mask] * (1.0 - beta) + color * beta
    return replace(sample, image=image, label=label, injected_mask=mask)


def generate_benchmark(cfg: TrainConfig) -> dict[str, list[Sample]]:
    """Generate all four splits deterministically from cfg.seed."""
    counts = {
        "source": cfg.n_source,
        "target_train": cfg.n_target_train,
        "target_val": cfg.n_target_val,
        "target2_val": cfg.n_target2_val,
    }
    splits: dict[str, list[Sample]] = {}
    for split, n in counts.items():
        code = _SPLIT_CODE[split]
        domain = SPLIT_DOMAIN[split]
        samples = []
        for i in range(n):
            scene = generate_scene(_derived_seed(cfg.seed, code, i), cfg)
            sample = render_domain(scene, domain, cfg)
            if split == "source":
                sample = inject_longtail_labels(sample, _derived_seed(cfg.seed, code, i, 99), cfg)
            sample.sample_id = f"{SPLIT_PREFIX[split]}{i:05d}"
            samples.append(sample)
        splits[split] = samples
    return splits


def _atomic_save(img: Image.Image, path: Path) -> None:
    tmp = path.with_suffix(".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def write_dataset(splits: dict[str, list[Sample]], root) -> DatasetIndex:
    """Write splits to `root` in the on-disk layout; returns the index.

    Layout: root/{source,target,target2}/{images,labels}/<id>.png with
    8-bit RGB images and 8-bit single-channel labels (255 = ignore), plus
    root/index.txt with one "split id" pair per line.
    """
    root = Path(root)
    index = DatasetIndex(root, {})
    lines = []
    for split in SPLITS:
        if split not in splits:
            continue
        folder = root / SPLIT_FOLDER[split]
        (folder / "images").mkdir(parents=True, exist_ok=True)
        (folder / "labels").mkdir(parents=True, exist_ok=True)
        ids = []
        for sample in splits[split]:
            sid = sample.sample_id
            img8 = np.clip(np.round(sample.image * 255.0), 0, 255).astype(np.uint8)
            _atomic_save(Image.fromarray(img8, mode="RGB"), folder / "images" / f"{sid}.png")
            if sample.label is not None:
                _atomic_save(Image.fromarray(sample.label, mode="L"), folder / "labels" / f"{sid}.png")
            ids.append(sid)
            lines.append(f"{split} {sid}")
        index.splits[split] = ids
    tmp = root / "index.tmp"
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, root / "index.txt")
    return index


def load_dataset(root) -> DatasetIndex:
    """Read index.txt and verify every listed file exists."""
    root = Path(root)
    index_path = root / "index.txt"
    if not index_path.is_file():
        raise DataError(f"missing index file: {index_path}")
    index = DatasetIndex(root, {})
    for lineno, line in enumerate(index_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in SPLITS:
            raise DataError(f"{index_path}:{lineno}: malformed entry {line!r}")
        split, sid = parts
        folder = root / SPLIT_FOLDER[split]
        img_path = folder / "images" / f"{sid}.png"
        if not img_path.is_file():
            raise DataError(f"missing image file: {img_path}")
        label_path = folder / "labels" / f"{sid}.png"
        if split != "target_train" and not label_path.is_file():
            # target_train labels exist on disk in generated datasets but a
            # dataset without them is still valid for training.
            raise DataError(f"missing label file: {label_path}")
        index.splits.setdefault(split, []).append(sid)
    return index


def load_split(
    index: DatasetIndex,
    split: str,
    cfg: TrainConfig,
    with_labels: bool = True,
) -> list[Sample]:
    """Load one split into memory; `with_labels=False` withholds labels.

    Training code paths must load target_train with `with_labels=False`;
    only evaluation and pseudo-label-quality reporting may read them.
    """
    if split not in index.splits:
        raise DataError(f"split {split!r} not present in {index.root}")
    folder = index.root / SPLIT_FOLDER[split]
    samples = []
    for sid in index.splits[split]:
        img_path = folder / "images" / f"{sid}.png"
        try:
            img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            raise DataError(f"unreadable image file: {img_path}") from exc
        label = None
        if with_labels:
            label_path = folder / "labels" / f"{sid}.png"
            if not label_path.is_file():
                raise DataError(f"missing label file: {label_path}")
            try:
                label = np.asarray(Image.open(label_path), dtype=np.uint8)
            except OSError as exc:
                raise DataError(f"unreadable label file: {label_path}") from exc
            bad = (label >= cfg.num_classes) & (label != cfg.ignore_id)
            if bad.any():
                raise DataError(f"label id out of range in {label_path}")
        samples.append(Sample(img, label, SPLIT_DOMAIN[split], sample_id=sid))
    return samples
