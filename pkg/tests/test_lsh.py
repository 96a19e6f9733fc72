import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avgnns.harness import gen_planted
from avgnns.index import calibrated_distortion, default_c
from avgnns.lsh import (
    MAX_ATTEMPTS,
    CalibrationError,
    DispersionError,
    HashSampler,
    atomic_collision_prob,
    choose_tensor_k,
    cut_keys,
    evaluate_hash,
    hash_keys,
    key_words,
    sample_empirical_hash,
)
from avgnns.metrics import MetricDescriptor, pairwise_distances
from avgnns.weak import build_weak_embedding, evaluate_weak


class TestAtomic:
    def test_same_point(self):
        assert atomic_collision_prob([0.3, -0.2], [0.3, -0.2], 1.0) == 1.0

    def test_opposite_corners(self):
        assert atomic_collision_prob([1, 1], [-1, -1], 1.0) == 0.0

    def test_unit_step(self):
        assert atomic_collision_prob([0, 0], [1, 0], 1.0) == 0.75

    def test_outside_box(self):
        with pytest.raises(ValueError):
            atomic_collision_prob([2, 0], [0, 0], 1.0)

    def test_monte_carlo(self):
        rng = np.random.default_rng(0)
        x, y = np.array([0.9, -0.8, 0.1]), np.array([-0.7, 0.6, 0.0])
        trials = 100_000
        coords = rng.integers(0, 3, size=trials)
        thr = rng.uniform(-1, 1, size=trials)
        same = (x[coords] <= thr) == (y[coords] <= thr)
        p = atomic_collision_prob(x, y, 1.0)
        assert abs(same.mean() - p) <= 3 * math.sqrt(p * (1 - p) / trials)


class TestTensorK:
    @pytest.mark.parametrize("p2,k", [(0.25, 1), (0.5, 2), (0.9, 14), (0.1, 1)])
    def test_examples(self, p2, k):
        assert choose_tensor_k(p2) == k

    @pytest.mark.parametrize("p2", [0.0, 1.0, -0.5, 1.5])
    def test_invalid(self, p2):
        with pytest.raises(ValueError):
            choose_tensor_k(p2)

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_smallest(self, p2):
        k = choose_tensor_k(p2)
        assert p2 ** k <= 0.25
        assert k == 1 or p2 ** (k - 1) > 0.25


class TestKeys:
    def test_bits(self):
        boxed = np.array([[0.0, 1.0], [1.0, -1.0]])
        keys = cut_keys(np.array([0, 1]), np.array([0.5, 0.0]), boxed)
        assert keys.tolist() == [1, 2]

    def test_max_corner_is_zero(self):
        rng = np.random.default_rng(1)
        boxed = np.ones((1, 4))
        assert cut_keys(rng.integers(0, 4, 40), rng.uniform(-1, 1, 40), boxed)[0] == 0

    def test_wide_keys(self):
        rng = np.random.default_rng(2)
        boxed = rng.uniform(-1, 1, size=(30, 5))
        coords, thr = rng.integers(0, 5, 150), rng.uniform(-1, 1, 150)
        keys = cut_keys(coords, thr, boxed)
        assert keys.dtype == object and key_words(150) == 3
        for row, key in zip(boxed, keys):
            bits = row[coords] <= thr
            assert key == sum(1 << int(j) for j in np.flatnonzero(bits))

    def test_word_count(self):
        assert [key_words(k) for k in (1, 64, 65, 128, 129)] == [1, 1, 2, 2, 3]


def _planted_images(n=500, d=10, seed=13):
    m = MetricDescriptor.lp(4.0)
    P = gen_planted(n, d, m, seed=seed, n_queries=1).dataset
    spec = build_weak_embedding(P)
    return P, spec, evaluate_weak(spec, P.coords)


class TestSampler:
    def test_two_far_images(self):
        imgs = np.array([[0.0], [1000.0]])
        h = sample_empirical_hash(imgs, 1.0, 1.0, 8.0, np.random.default_rng(0))
        keys = cut_keys(h.coords, h.thresholds, np.clip(imgs - h.box_center, -h.delta, h.delta))
        assert sorted(np.unique(keys, return_counts=True)[1].tolist()) == [1, 1]

    def test_identical_images(self):
        with pytest.raises(DispersionError):
            HashSampler(np.zeros((10, 3)), 1.0, 8.0, 64.0)

    def test_weakly_spread_images(self):
        with pytest.raises(DispersionError):
            HashSampler(np.random.default_rng(0).uniform(size=(50, 2)), 1.0, 8.0, 64.0)

    def test_calibration_guard(self):
        imgs = np.repeat([0.0, 20.0], 20)[:, None]
        with pytest.raises(CalibrationError):
            HashSampler(imgs, 1.0, 1.0, 8.0)

    def test_parameters(self):
        _, spec, imgs = _planted_images()
        c = default_c(MetricDescriptor.lp(4.0))
        s = HashSampler(imgs, 1.0, calibrated_distortion(MetricDescriptor.lp(4.0)), c, spec)
        hp = s.params
        assert hp.k == choose_tensor_k(hp.p2)
        assert 16 * hp.r / hp.t_scale <= 0.5
        assert hp.p2_prime == pytest.approx(math.sqrt(1 - hp.beta * (1 - 2 * hp.p2 ** hp.k)))
        assert hp.rho <= 64 * hp.big_D / c
        assert np.all(np.abs(s.boxed) <= hp.delta)

    def test_planted_acceptance(self):
        P, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        s = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec)
        quick = 0
        for seed in range(100):
            h = s.sample(np.random.default_rng(seed))
            quick += h.attempts <= 10
            keys = hash_keys(h, P.coords)
            assert np.unique(keys, return_counts=True)[1].max() <= h.load_bound
        assert quick >= 99

    def test_acceptance_rate(self):
        _, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        s = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec)
        rng = np.random.default_rng(4)
        rate = np.mean([s.accepts(*s.draw(rng)) for _ in range(400)])
        assert rate >= 0.4

    def test_rejection_cap(self, monkeypatch):
        _, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        s = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec)
        monkeypatch.setattr(HashSampler, "accepts", lambda self, c, t: False)
        with pytest.raises(CalibrationError, match=str(MAX_ATTEMPTS)):
            s.sample(np.random.default_rng(0))

    def test_close_pairs_collide(self):
        P, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        s = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec)
        rng = np.random.default_rng(7)
        x = P.coords[0]
        y = x + 0.5 * rng.choice([-1, 1], size=P.d) / P.d ** 0.25
        hits = []
        for _ in range(300):
            h = s.sample(rng)
            hits.append(evaluate_hash(h, x) == evaluate_hash(h, y))
        bound = s.params.p1
        assert np.mean(hits) >= 1 - 2 * (1 - bound) - 0.1


class TestEvaluate:
    def test_identical_images_same_key(self):
        _, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        h = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec).sample(np.random.default_rng(0))
        x = np.full(10, 3.0)
        assert evaluate_hash(h, x) == evaluate_hash(h, x.copy())

    def test_dimension_mismatch(self):
        _, spec, imgs = _planted_images()
        m = MetricDescriptor.lp(4.0)
        h = HashSampler(imgs, 1.0, calibrated_distortion(m), default_c(m), spec).sample(np.random.default_rng(0))
        with pytest.raises(ValueError):
            evaluate_hash(h, np.zeros(3))

    def test_pairwise_images_are_contracting(self):
        P, spec, imgs = _planted_images(n=200)
        D = pairwise_distances(P)
        out = np.abs(imgs[:, None, :] - imgs[None, :, :]).sum(axis=2)
        mask = D > 0
        assert np.max(out[mask] / D[mask]) <= 1 + 1e-12
