import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segadapt.centroids import (
    CentroidBank,
    CentroidError,
    batch_class_means,
    ema_update_centroids,
    init_centroids,
    vote_labels,
)


def test_means_constant_features():
    feats = np.full((2, 3, 3), 0.7)
    labels = np.full((3, 3), 2, dtype=np.uint8)
    means, counts = batch_class_means(feats, labels, 4, 255)
    assert counts[2] == 9
    assert np.allclose(means[2], 0.7)


def test_means_hand_case_two_pixels():
    feats = np.zeros((2, 1, 2))
    feats[:, 0, 0] = (1.0, 0.0)
    feats[:, 0, 1] = (0.0, 1.0)
    labels = np.array([[1, 1]], dtype=np.uint8)
    means, counts = batch_class_means(feats, labels, 3, 255)
    assert counts[1] == 2
    assert np.allclose(means[1], (0.5, 0.5))


def test_means_absent_class_flags_zero_count():
    feats = np.random.default_rng(0).normal(size=(2, 4, 4))
    labels = np.zeros((4, 4), dtype=np.uint8)
    means, counts = batch_class_means(feats, labels, 3, 255)
    assert counts[1] == 0 and counts[2] == 0
    assert np.allclose(means[1], 0.0)


def test_means_skip_ignore_pixels():
    feats = np.ones((1, 2, 2))
    labels = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    means, counts = batch_class_means(feats, labels, 2, 255)
    assert counts[0] == 2


class FakeSample:
    def __init__(self, label):
        self.label = label


def test_init_single_image_constant_features():
    label = np.zeros((8, 8), dtype=np.uint8)
    v = np.array([0.3, -0.2])

    def encode(_):
        return np.broadcast_to(v[:, None, None], (2, 2, 2)).copy()

    bank = init_centroids([FakeSample(label)], encode, lambda s, i: None, 3, 255, 4)
    assert bank.present[0] and not bank.present[1]
    assert np.allclose(bank.rho[0], v)


def test_init_average_of_per_image_means():
    label = np.zeros((8, 8), dtype=np.uint8)
    outputs = [np.full((2, 2, 2), 1.0), np.full((2, 2, 2), 3.0)]

    def encode(i):
        return outputs[i]

    bank = init_centroids([FakeSample(label), FakeSample(label)], lambda v: encode(v), lambda s, i: i, 2, 255, 4)
    assert np.allclose(bank.rho[0], 2.0)  # (1 + 3) / 2


def test_init_class_depends_only_on_images_containing_it():
    lab_a = np.zeros((8, 8), dtype=np.uint8)
    lab_b = np.ones((8, 8), dtype=np.uint8)

    def make_encode(val_for_b):
        def encode(view):
            sample, i = view
            if i == 0:
                return np.full((2, 2, 2), 5.0)
            return np.full((2, 2, 2), val_for_b)
        return encode

    samples = [FakeSample(lab_a), FakeSample(lab_b)]
    view = lambda s, i: (s, i)
    bank1 = init_centroids(samples, make_encode(1.0), view, 2, 255, 4)
    bank2 = init_centroids(samples, make_encode(9.0), view, 2, 255, 4)
    assert np.allclose(bank1.rho[0], bank2.rho[0])  # class 0 untouched by image b
    assert not np.allclose(bank1.rho[1], bank2.rho[1])


def test_vote_hand_distances():
    bank = CentroidBank(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([True, True]))
    feats = np.array([0.9, 0.1]).reshape(2, 1, 1)
    votes = vote_labels(feats, bank)
    assert votes[0, 0] == 0  # L2 distances 0.141 vs 1.273


def test_vote_exact_centroid_hit():
    rho = np.random.default_rng(0).normal(size=(4, 3))
    bank = CentroidBank(rho, np.ones(4, dtype=bool))
    feats = rho[2].reshape(3, 1, 1)
    assert vote_labels(feats, bank)[0, 0] == 2


def test_vote_tie_breaks_to_smallest_id():
    bank = CentroidBank(np.array([[1.0], [0.0]]), np.array([True, True]))
    feats = np.array([0.5]).reshape(1, 1, 1)
    assert vote_labels(feats, bank)[0, 0] == 0


def test_vote_skips_absent_classes():
    bank = CentroidBank(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
                        np.array([False, True, True]))
    feats = np.zeros((2, 1, 1))
    assert vote_labels(feats, bank)[0, 0] == 1


def test_vote_empty_bank_is_error():
    bank = CentroidBank(np.zeros((3, 2)), np.zeros(3, dtype=bool))
    with pytest.raises(CentroidError):
        vote_labels(np.zeros((2, 2, 2)), bank)


def brute_force_votes(features, bank):
    present = [k for k in range(bank.rho.shape[0]) if bank.present[k]]
    d, h, w = features.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for j in range(h):
        for k in range(w):
            f = features[:, j, k]
            best, best_d = None, None
            for c in present:
                dist = np.sum((f - bank.rho[c]) ** 2)
                if best_d is None or dist < best_d:
                    best, best_d = c, dist
            out[j, k] = best
    return out


def test_vote_matches_bruteforce_oracle_100_instances():
    rng = np.random.default_rng(42)
    for trial in range(100):
        c = int(rng.integers(2, 7))
        d = int(rng.integers(2, 6))
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        present = rng.integers(0, 2, size=c).astype(bool)
        if not present.any():
            present[int(rng.integers(0, c))] = True
        # quantized features force occasional exact ties
        rho = np.round(rng.normal(size=(c, d)) * 2) / 2
        feats = np.round(rng.normal(size=(d, h, w)) * 2) / 2
        bank = CentroidBank(rho, present)
        assert np.array_equal(vote_labels(feats, bank), brute_force_votes(feats, bank)), trial


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_vote_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    rho = rng.normal(size=(4, 3))
    present = np.array([True, True, False, True])
    feats = rng.normal(size=(3, 5, 5))
    t = rng.normal(size=3)
    a = vote_labels(feats, CentroidBank(rho, present))
    b = vote_labels(feats + t[:, None, None], CentroidBank(rho + t, present))
    assert np.array_equal(a, b)


def make_bank(rho_vals, present=None):
    rho = np.asarray(rho_vals, dtype=np.float64)
    if present is None:
        present = np.ones(rho.shape[0], dtype=bool)
    return CentroidBank(rho, np.asarray(present))


def counts(*vals):
    return np.asarray(vals, dtype=np.int64)


def test_centroid_ema_momentum_1_keeps_bank():
    bank = make_bank([[1.0], [2.0]])
    out = ema_update_centroids(bank, np.array([[5.0], [5.0]]), counts(3, 3),
                               np.array([[7.0], [7.0]]), counts(3, 3), 1.0)
    assert np.allclose(out.rho, bank.rho)


def test_centroid_ema_momentum_0_takes_target():
    bank = make_bank([[1.0], [2.0]])
    out = ema_update_centroids(bank, np.array([[5.0], [5.0]]), counts(3, 3),
                               np.array([[7.0], [7.0]]), counts(3, 3), 0.0)
    assert np.allclose(out.rho, 7.0)


def test_centroid_ema_scalar_hand_value():
    # nested form: 0.5*(0.5*1 + 0.5*0) + 0.5*2 = 1.25
    bank = make_bank([[1.0]])
    out = ema_update_centroids(bank, np.array([[0.0]]), counts(1),
                               np.array([[2.0]]), counts(1), 0.5)
    assert abs(out.rho[0, 0] - 1.25) < 1e-4


def test_centroid_ema_missing_target_degrades_to_single_source():
    bank = make_bank([[1.0]])
    out = ema_update_centroids(bank, np.array([[0.0]]), counts(1),
                               np.array([[9.0]]), counts(0), 0.5)
    assert abs(out.rho[0, 0] - 0.5) < 1e-12  # 0.5*1 + 0.5*0


def test_centroid_ema_missing_source_uses_target_only():
    bank = make_bank([[1.0]])
    out = ema_update_centroids(bank, np.array([[9.0]]), counts(0),
                               np.array([[3.0]]), counts(1), 0.5)
    assert abs(out.rho[0, 0] - 2.0) < 1e-12


def test_centroid_ema_both_missing_is_identity():
    bank = make_bank([[1.0]])
    out = ema_update_centroids(bank, np.array([[9.0]]), counts(0),
                               np.array([[9.0]]), counts(0), 0.5)
    assert out.rho[0, 0] == 1.0


def test_centroid_ema_new_class_adopted():
    bank = CentroidBank(np.zeros((2, 1)), np.array([True, False]))
    out = ema_update_centroids(bank, np.array([[0.0], [4.0]]), counts(0, 1),
                               np.array([[0.0], [0.0]]), counts(0, 0), 0.5)
    assert out.present[1]
    assert out.rho[1, 0] == 4.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_centroid_ema_stays_in_input_range(seed, delta):
    rng = np.random.default_rng(seed)
    lo, hi = -1.0, 2.0
    bank = make_bank(rng.uniform(lo, hi, size=(3, 2)))
    ms = rng.uniform(lo, hi, size=(3, 2))
    mt = rng.uniform(lo, hi, size=(3, 2))
    cs = rng.integers(0, 3, size=3)
    ct = rng.integers(0, 3, size=3)
    out = ema_update_centroids(bank, ms, cs, mt, ct, delta)
    assert np.isfinite(out.rho).all()
    assert (out.rho >= lo - 1e-12).all() and (out.rho <= hi + 1e-12).all()


def test_centroid_ema_rejects_bad_momentum():
    with pytest.raises(CentroidError):
        ema_update_centroids(make_bank([[0.0]]), np.zeros((1, 1)), counts(1),
                             np.zeros((1, 1)), counts(1), -0.5)
