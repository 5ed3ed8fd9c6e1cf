import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segadapt.augment import (
    AugmentError,
    ChannelStats,
    build_class_mask,
    crdomix,
    estimate_channel_stats,
    photometric_augment,
    translate_to_stats,
)
from segadapt.config import TrainConfig, load_config
from segadapt.data import Sample, generate_benchmark


def rand_image(rng, h=8, w=8):
    return rng.uniform(0.05, 0.95, size=(h, w, 3))


def test_identity_settings_are_exact_identity():
    cfg = load_config(None, {
        "aug_brightness": "0", "aug_gain": "0", "aug_grayscale_prob": "0", "aug_blur_prob": "0",
    })
    img = rand_image(np.random.default_rng(0))
    out = photometric_augment(img, 123, cfg)
    assert np.array_equal(out, img)


def test_grayscale_branch_equalizes_channels():
    cfg = load_config(None, {
        "aug_brightness": "0", "aug_gain": "0", "aug_grayscale_prob": "1", "aug_blur_prob": "0",
    })
    img = rand_image(np.random.default_rng(1))
    out = photometric_augment(img, 7, cfg)
    assert np.allclose(out[..., 0], out[..., 1])
    assert np.allclose(out[..., 1], out[..., 2])


def test_photometric_deterministic_given_seed():
    cfg = TrainConfig()
    img = rand_image(np.random.default_rng(2))
    assert np.array_equal(photometric_augment(img, 9, cfg), photometric_augment(img, 9, cfg))
    assert not np.array_equal(photometric_augment(img, 9, cfg), photometric_augment(img, 10, cfg))


def test_photometric_stays_in_unit_interval():
    cfg = load_config(None, {"aug_brightness": "0.5", "aug_gain": "0.6"})
    img = rand_image(np.random.default_rng(3))
    for seed in range(20):
        out = photometric_augment(img, seed, cfg)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_stats_hand_computed():
    a = Sample(np.full((2, 2, 3), 0.25), None, "target")
    b = Sample(np.full((2, 2, 3), 0.75), None, "target")
    stats = estimate_channel_stats([a, b])
    assert np.allclose(stats.mean, 0.5)
    assert np.allclose(stats.std, 0.25)


def test_stats_reject_zero_std():
    flat = Sample(np.full((4, 4, 3), 0.5), None, "target")
    with pytest.raises(AugmentError):
        estimate_channel_stats([flat])


def test_stats_reject_empty_split():
    with pytest.raises(AugmentError):
        estimate_channel_stats([])


def test_generated_source_and_target_stats_differ():
    cfg = load_config(None, {"n_source": "24", "n_target_train": "24",
                             "n_target_val": "4", "n_target2_val": "4"})
    splits = generate_benchmark(cfg)
    src = estimate_channel_stats(splits["source"])
    tgt = estimate_channel_stats(splits["target_train"])
    assert np.abs(src.mean - tgt.mean).max() > 0.02


def test_translate_identity_when_stats_equal():
    rng = np.random.default_rng(4)
    img = rand_image(rng)
    stats = ChannelStats(np.array([0.4, 0.5, 0.6]), np.array([0.1, 0.2, 0.3]))
    out = translate_to_stats(img, stats, source=stats)
    assert np.allclose(out, img, atol=1e-12)


def test_translate_constant_image_maps_to_target_mean():
    target = ChannelStats(np.array([0.3, 0.4, 0.5]), np.array([0.2, 0.2, 0.2]))
    img = np.full((6, 6, 3), 0.8)
    out = translate_to_stats(img, target)
    assert np.allclose(out, target.mean)


def test_translate_population_mean_tracks_target():
    # over 100 generated source images, the translated per-channel mean
    # stays within 0.02 of the target mean
    cfg = load_config(None, {"n_source": "100", "n_target_train": "40",
                             "n_target_val": "4", "n_target2_val": "4"})
    splits = generate_benchmark(cfg)
    src = estimate_channel_stats(splits["source"])
    tgt = estimate_channel_stats(splits["target_train"])
    means = [
        translate_to_stats(s.image, tgt, source=src).mean(axis=(0, 1))
        for s in splits["source"]
    ]
    assert np.abs(np.mean(means, axis=0) - tgt.mean).max() < 0.02


def test_translate_is_deterministic_and_geometry_free():
    rng = np.random.default_rng(5)
    img = rand_image(rng)
    src = ChannelStats(np.array([0.4, 0.4, 0.4]), np.array([0.2, 0.2, 0.2]))
    tgt = ChannelStats(np.array([0.6, 0.5, 0.4]), np.array([0.1, 0.3, 0.2]))
    a = translate_to_stats(img, tgt, source=src)
    b = translate_to_stats(img, tgt, source=src)
    assert np.array_equal(a, b)
    assert a.shape == img.shape


def test_class_mask_halves_available_classes():
    label = np.zeros((8, 8), dtype=np.uint8)
    label[0] = 1
    label[1] = 2
    label[2] = 3
    cm = build_class_mask(label, 0, 255)
    assert len(cm.chosen_classes) == 2  # 4 available classes -> pick 2


def test_class_mask_single_class_forced():
    label = np.full((4, 4), 3, dtype=np.uint8)
    cm = build_class_mask(label, 1, 255)
    assert cm.chosen_classes == frozenset({3})
    assert cm.mask.all()


def test_class_mask_matches_bruteforce_support():
    rng = np.random.default_rng(6)
    for seed in range(20):
        label = rng.integers(0, 6, size=(10, 10)).astype(np.uint8)
        label[0, 0] = 255
        cm = build_class_mask(label, seed, 255)
        for j in range(10):
            for k in range(10):
                expected = int(label[j, k]) in cm.chosen_classes and label[j, k] != 255
                assert bool(cm.mask[j, k]) == expected


def test_class_mask_ignores_ignore_pixels():
    label = np.full((4, 4), 255, dtype=np.uint8)
    label[0, 0] = 2
    cm = build_class_mask(label, 0, 255)
    assert cm.chosen_classes == frozenset({2})
    assert cm.mask.sum() == 1


def test_class_mask_all_ignore_is_error():
    with pytest.raises(AugmentError):
        build_class_mask(np.full((4, 4), 255, dtype=np.uint8), 0, 255)


def test_crdomix_all_ones_mask():
    rng = np.random.default_rng(7)
    a, b = rand_image(rng), rand_image(rng)
    from segadapt.augment import ClassMask

    cm = ClassMask(np.ones((8, 8), dtype=bool), frozenset({0}))
    assert np.array_equal(crdomix(a, b, cm), a)


def test_crdomix_all_zeros_mask():
    rng = np.random.default_rng(8)
    a, b = rand_image(rng), rand_image(rng)
    from segadapt.augment import ClassMask

    cm = ClassMask(np.zeros((8, 8), dtype=bool), frozenset())
    assert np.array_equal(crdomix(a, b, cm), b)


def test_crdomix_2x2_hand_case():
    from segadapt.augment import ClassMask

    ones = np.ones((2, 2, 3))
    zeros = np.zeros((2, 2, 3))
    cm = ClassMask(np.array([[True, False], [False, True]]), frozenset({1}))
    out = crdomix(ones, zeros, cm)
    expected = np.array([[1.0, 0.0], [0.0, 1.0]])
    for c in range(3):
        assert np.array_equal(out[..., c], expected)


def test_crdomix_shape_mismatch_is_error():
    from segadapt.augment import ClassMask

    cm = ClassMask(np.ones((4, 4), dtype=bool), frozenset({0}))
    with pytest.raises(AugmentError):
        crdomix(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), cm)
    with pytest.raises(AugmentError):
        crdomix(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), cm)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_crdomix_idempotent_on_equal_inputs(seed):
    rng = np.random.default_rng(seed)
    img = rand_image(rng, 6, 6)
    mask = rng.integers(0, 2, size=(6, 6)).astype(bool)
    from segadapt.augment import ClassMask

    out = crdomix(img, img, ClassMask(mask, frozenset({0})))
    assert np.array_equal(out, img)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_crdomix_output_pixels_come_from_exactly_one_input(seed):
    rng = np.random.default_rng(seed)
    a = rand_image(rng, 6, 6)
    b = 1.0 - a  # differs from a everywhere
    mask = rng.integers(0, 2, size=(6, 6)).astype(bool)
    from segadapt.augment import ClassMask

    out = crdomix(a, b, ClassMask(mask, frozenset({0})))
    from_a = (out == a).all(axis=-1)
    from_b = (out == b).all(axis=-1)
    assert (from_a ^ from_b).all()
    assert np.array_equal(from_a, mask)
