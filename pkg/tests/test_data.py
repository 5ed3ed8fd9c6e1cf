import numpy as np
import pytest

from segadapt.config import TrainConfig, load_config
from segadapt.data import (
    DataError,
    PALETTE,
    domain_palette,
    generate_benchmark,
    generate_scene,
    inject_longtail_labels,
    load_dataset,
    load_split,
    rasterize,
    render_domain,
    write_dataset,
    LONGTAIL_CLASS,
    _LUMA,
)

CFG = TrainConfig()


def small_cfg(**over):
    base = {"n_source": "12", "n_target_train": "12", "n_target_val": "6", "n_target2_val": "4"}
    base.update({k: str(v) for k, v in over.items()})
    return load_config(None, base)


def test_scene_determinism():
    a = generate_scene(7, CFG)
    b = generate_scene(7, CFG)
    assert a == b


def test_scene_seed_sensitivity():
    assert generate_scene(7, CFG) != generate_scene(8, CFG)


def test_scene_has_three_distinct_classes():
    for seed in range(25):
        scene = generate_scene(seed, CFG)
        assert len({p.class_id for p in scene.geometry}) >= 3
        assert all(0 <= p.class_id < CFG.num_classes for p in scene.geometry)


def test_every_class_in_at_least_5pct_of_scenes():
    # oracle: direct count over a generated corpus
    present = np.zeros(CFG.num_classes)
    n = 1000
    for seed in range(n):
        label = rasterize(generate_scene(seed, CFG), CFG)
        present += np.isin(np.arange(CFG.num_classes), label)
    assert (present / n >= 0.05).all(), present / n


def test_render_shares_geometry_across_domains():
    scene = generate_scene(3, CFG)
    src = render_domain(scene, "source", CFG)
    tgt = render_domain(scene, "target", CFG)
    assert np.array_equal(src.label, tgt.label)
    assert not np.allclose(src.image, tgt.image)


def test_label_matches_rerasterization():
    for seed in (0, 5, 11):
        scene = generate_scene(seed, CFG)
        sample = render_domain(scene, "target2", CFG)
        assert np.array_equal(sample.label, rasterize(scene, CFG))


def test_noise_free_source_render_is_exact_palette():
    cfg = load_config(None, {"source_noise": "0"})
    scene = generate_scene(9, cfg)
    sample = render_domain(scene, "source", cfg)
    assert np.allclose(sample.image, PALETTE[sample.label])


def test_target_mean_shift_matches_configured_shift():
    # oracle: analytic shift of the class-mix mean, vs measured means over
    # 100 paired noise-free renders
    cfg = load_config(None, {"source_noise": "0", "target_noise": "0"})
    diffs, expected = [], []
    for seed in range(100):
        scene = generate_scene(seed, cfg)
        src = render_domain(scene, "source", cfg)
        tgt = render_domain(scene, "target", cfg)
        diffs.append(tgt.image.mean(axis=(0, 1)) - src.image.mean(axis=(0, 1)))
        base = PALETTE[src.label]
        shifted = domain_palette("target")[src.label]
        expected.append((shifted - base).mean(axis=(0, 1)))
    assert np.allclose(np.mean(diffs, axis=0), np.mean(expected, axis=0), atol=1e-9)


def test_noisy_target_mean_shift_within_tolerance():
    cfg = TrainConfig()
    diffs, expected = [], []
    for seed in range(100):
        scene = generate_scene(seed, cfg)
        src = render_domain(scene, "source", cfg)
        tgt = render_domain(scene, "target", cfg)
        diffs.append(tgt.image.mean(axis=(0, 1)) - src.image.mean(axis=(0, 1)))
        expected.append((domain_palette("target")[src.label] - PALETTE[src.label]).mean(axis=(0, 1)))
    assert np.abs(np.mean(diffs, axis=0) - np.mean(expected, axis=0)).max() < 0.01


def test_domain_palettes_stay_in_unit_range():
    for d in ("source", "target", "target2"):
        pal = domain_palette(d)
        assert pal.min() >= 0.02 and pal.max() <= 0.98, (d, pal)


def test_target_shifts_preserve_luminance_order():
    for d in ("target", "target2"):
        luma = domain_palette(d) @ _LUMA
        assert (np.diff(luma) > 0).all()


def test_inject_rate_zero_is_identity():
    cfg = load_config(None, {"longtail_segments": "0"})
    sample = render_domain(generate_scene(1, cfg), "source", cfg)
    assert inject_longtail_labels(sample, 5, cfg) is sample


def test_injected_pixels_capped_at_1pct():
    cfg = load_config(None, {"longtail_segments": "8"})
    h, w = cfg.image_size
    for seed in range(20):
        sample = render_domain(generate_scene(seed, cfg), "source", cfg)
        out = inject_longtail_labels(sample, seed, cfg)
        assert out.injected_mask.sum() <= 0.01 * h * w
        assert (out.label[out.injected_mask] == LONGTAIL_CLASS).all()


def test_injected_contrast_below_0p05():
    # oracle: contrast measured against the identical pre-injection render
    cfg = TrainConfig()
    contrasts = []
    for seed in range(100):
        sample = render_domain(generate_scene(seed, cfg), "source", cfg)
        out = inject_longtail_labels(sample, seed + 1, cfg)
        m = out.injected_mask
        if m.any():
            contrasts.append(np.abs(out.image[m] - sample.image[m]).mean())
    assert contrasts and max(contrasts) < 0.05


def test_write_load_roundtrip(tmp_path):
    cfg = small_cfg()
    splits = generate_benchmark(cfg)
    index = write_dataset(splits, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    assert loaded.splits == index.splits
    for split in ("source", "target_val"):
        back = load_split(loaded, split, cfg)
        for orig, re in zip(splits[split], back):
            assert np.array_equal(orig.label, re.label)
            assert np.abs(orig.image - re.image).max() <= 1.0 / 255.0


def test_load_missing_label_is_error(tmp_path):
    cfg = small_cfg()
    splits = generate_benchmark(cfg)
    write_dataset(splits, tmp_path / "d")
    victim = tmp_path / "d" / "source" / "labels" / f"{splits['source'][0].sample_id}.png"
    victim.unlink()
    with pytest.raises(DataError, match=str(victim.name)):
        load_dataset(tmp_path / "d")


def test_load_out_of_range_label_is_error(tmp_path):
    from PIL import Image

    cfg = small_cfg()
    splits = generate_benchmark(cfg)
    write_dataset(splits, tmp_path / "d")
    sid = splits["source"][0].sample_id
    victim = tmp_path / "d" / "source" / "labels" / f"{sid}.png"
    bad = np.full(cfg.image_size, 200, dtype=np.uint8)
    Image.fromarray(bad, "L").save(victim)
    index = load_dataset(tmp_path / "d")
    with pytest.raises(DataError, match="out of range"):
        load_split(index, "source", cfg)


def test_missing_index_is_error(tmp_path):
    with pytest.raises(DataError, match="index"):
        load_dataset(tmp_path)


def test_generation_is_byte_identical(tmp_path):
    cfg = small_cfg()
    for sub in ("a", "b"):
        write_dataset(generate_benchmark(cfg), tmp_path / sub)
    files_a = sorted((tmp_path / "a").rglob("*.*"))
    files_b = sorted((tmp_path / "b").rglob("*.*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_target_train_labels_exist_on_disk_but_loader_can_withhold(tmp_path):
    cfg = small_cfg()
    splits = generate_benchmark(cfg)
    write_dataset(splits, tmp_path / "d")
    index = load_dataset(tmp_path / "d")
    unlabelled = load_split(index, "target_train", cfg, with_labels=False)
    assert all(s.label is None for s in unlabelled)
    labelled = load_split(index, "target_train", cfg, with_labels=True)
    assert all(s.label is not None for s in labelled)


def test_mean_color_1nn_separates_domains():
    # domain gap guard: 1-nearest-neighbor on mean color, 200 held-out renders
    cfg = TrainConfig()
    def mean_colors(domain, seeds):
        return np.stack([
            render_domain(generate_scene(s, cfg), domain, cfg).image.mean(axis=(0, 1))
            for s in seeds
        ])

    train_src = mean_colors("source", range(100))
    train_tgt = mean_colors("target", range(100, 200))
    test_src = mean_colors("source", range(200, 300))
    test_tgt = mean_colors("target", range(300, 400))
    train = np.concatenate([train_src, train_tgt])
    labels = np.array([0] * 100 + [1] * 100)
    correct = 0
    for feats, want in ((test_src, 0), (test_tgt, 1)):
        for f in feats:
            pred = labels[np.argmin(np.linalg.norm(train - f, axis=1))]
            correct += int(pred == want)
    assert correct / 200 > 0.9
