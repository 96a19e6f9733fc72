import numpy as np
import pytest

from avgnns.mazur import ShiftedMazurSpec, evaluate_embedding
from avgnns.metrics import MetricDescriptor, PointSet, distances_to, pairwise_distances, psi, weak_l1_norm
from avgnns.weak import (
    ALPHA,
    L2ToL1Map,
    Variant,
    WeakEmbeddingSpec,
    build_weak_embedding,
    easy_case_score,
    evaluate_weak,
    measure_weak_distortion,
)

from conftest import line, sym_cloud


def lp(X, p):
    return PointSet(np.asarray(X, dtype=float), MetricDescriptor.lp(p))


def sphere(rng, n, d, p):
    """Cone-measure sample of the unit l_p sphere."""
    X = rng.gamma(1.0 / p, size=(n, d)) ** (1.0 / p) * rng.choice([-1.0, 1.0], size=(n, d))
    return X / np.linalg.norm(X, ord=p, axis=1, keepdims=True)


class TestEasyCaseScore:
    def test_three_points(self):
        assert easy_case_score(line([0, 1, 2]), 0, 1.0) == pytest.approx(1 / 3)

    def test_nothing_beyond(self):
        assert easy_case_score(line([0, 1, 1]), 0, 1.0) == 0.0

    def test_far_point(self):
        assert easy_case_score(line([0, 0, 10]), 0, 0.0) == pytest.approx(10 / 3)

    def test_matches_enumeration(self, rng):
        P = line(rng.integers(0, 9, size=15).astype(float))
        dists = distances_to(P, P.coords[4])
        s = float(np.sort(dists)[7])
        brute = max([0.0] + [(t - s) * np.mean(dists >= t) for t in set(dists.tolist()) if t > s])
        assert easy_case_score(P, 4, s) == pytest.approx(brute)


def test_alpha_satisfies_proof_constraints():
    assert 2 * ALPHA / (1 - 4 * ALPHA) <= 1 / 8
    assert (1 - 4 * ALPHA) / 16 >= 1 / 32


class TestBranches:
    def test_outlier_takes_easy_branch(self):
        spec = build_weak_embedding(line([0.0] * 9 + [100.0]))
        assert spec.variant == Variant.RADIAL and spec.lip_bound == 1.0

    def test_two_points_are_radial(self):
        assert build_weak_embedding(line([1.0, 4.0])).variant == Variant.RADIAL

    def test_sphere_cloud_is_shifted(self):
        P = lp(sphere(np.random.default_rng(3), 100, 20, 4.0), 4.0)
        spec = build_weak_embedding(P)
        assert spec.variant == Variant.SHIFTED
        assert isinstance(spec.sub, ShiftedMazurSpec)

    def test_identical_points_rejected(self):
        with pytest.raises(ValueError):
            build_weak_embedding(line([2.0, 2.0, 2.0]))

    def test_snowflaked_lp_rejected(self):
        with pytest.raises(ValueError):
            build_weak_embedding(PointSet(np.eye(3), MetricDescriptor.lp(2.0, 0.5)))

    def test_schatten_needs_matching_snowflake(self, rng):
        X = sym_cloud(rng, 10, 2)
        with pytest.raises(ValueError):
            build_weak_embedding(PointSet(X, MetricDescriptor.schatten(1.0)))
        with pytest.raises(ValueError):
            build_weak_embedding(PointSet(X, MetricDescriptor.schatten(3.0, 1.5)))


def _hard_instances():
    out = []
    for seed in range(12):
        rng = np.random.default_rng(seed)
        for p in (1.0, 2.0, 4.0):
            X = sphere(rng, 120, 20, p) if seed % 2 else rng.uniform(-1, 1, size=(120, 20))
            P = lp(X, p)
            D = pairwise_distances(P)
            spec = build_weak_embedding(P, D)
            if spec.variant == Variant.SHIFTED:
                out.append((P, D, spec))
    return out


HARD = _hard_instances()


def test_hard_branch_occurs():
    assert len(HARD) >= 5


@pytest.mark.parametrize("case", range(len(HARD)))
def test_hard_branch_chain(case):
    P, D, spec = HARD[case]
    s = spec.s_star
    t_star, _ = weak_l1_norm(P, D)
    assert psi(P, s / 2, D) >= 0.5
    assert (P.n - spec.q_subset_indices.size) / P.n <= 1 / 8
    assert t_star <= 2 * s / (1 - 4 * ALPHA)
    Q = P.coords[spec.q_subset_indices]
    DQ = pairwise_distances(P.subset(spec.q_subset_indices))
    assert DQ.max() <= 4 * s * (1 + 1e-12)
    raw = evaluate_embedding(spec.sub, Q)
    img_diam = pairwise_distances(lp(raw, 1.0)).max()
    far = np.max(np.linalg.norm(Q - Q.mean(axis=0), ord=P.metric.p, axis=1))
    assert img_diam <= 2 * (1 + 2 ** (1 / P.metric.p)) * far * (1 + 1e-12)


@pytest.mark.parametrize("case", range(len(HARD)))
def test_delivered_map_is_contraction(case):
    P, D, spec = HARD[case]
    out = pairwise_distances(lp(evaluate_weak(spec, P.coords), 1.0))
    mask = D > 0
    assert np.max(out[mask] / D[mask]) <= 1 + 1e-12


class TestEvaluate:
    def test_radial_center_maps_to_zero(self):
        spec = build_weak_embedding(line([0.0] * 9 + [100.0]))
        assert evaluate_weak(spec, spec.center)[0] == 0.0

    def test_radial_is_lipschitz(self, rng):
        spec = build_weak_embedding(line([0.0] * 9 + [100.0]))
        for x, y in rng.normal(size=(100, 2)) * 50:
            assert abs(evaluate_weak(spec, [x])[0] - evaluate_weak(spec, [y])[0]) <= abs(x - y) + 1e-12

    def test_shifted_matches_mazur_scaled(self):
        P = lp(sphere(np.random.default_rng(3), 100, 20, 4.0), 4.0)
        spec = build_weak_embedding(P)
        x = np.linspace(-1, 1, 20)
        assert np.allclose(evaluate_weak(spec, x), evaluate_embedding(spec.sub, x) / spec.lip_bound)

    def test_dimension_mismatch(self):
        spec = build_weak_embedding(line([0.0, 5.0]))
        with pytest.raises(ValueError):
            evaluate_weak(spec, [1.0, 2.0])


class TestMeasure:
    def test_identity_on_l1(self, rng):
        P = lp(rng.normal(size=(30, 3)), 1.0)
        ident = WeakEmbeddingSpec(Variant.SHIFTED, P.metric, 1.0, sub=ShiftedMazurSpec(1.0, 1.0, np.zeros(3), 1.0))
        assert measure_weak_distortion(P, ident) == pytest.approx(1.0)

    def test_translation_is_isometry(self, rng):
        P = lp(rng.normal(size=(30, 3)), 1.0)
        iso = WeakEmbeddingSpec(Variant.SHIFTED, P.metric, 1.0, sub=ShiftedMazurSpec(1.0, 1.0, [1, -2, 5], 1.0))
        assert measure_weak_distortion(P, iso) == pytest.approx(1.0)

    def test_l4_cloud(self):
        P = lp(np.random.default_rng(11).normal(size=(200, 10)), 4.0)
        assert measure_weak_distortion(P, build_weak_embedding(P)) <= 32 * 4

    def test_degenerate_image(self):
        P = line([0.0, 1.0, 2.0])
        flat = WeakEmbeddingSpec(Variant.RADIAL, P.metric, 1.0, center=np.array([0.0]))
        flat_pts = line([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            measure_weak_distortion(flat_pts, flat)


class TestSchattenWeak:
    def test_snowflake_cloud(self, rng):
        for p in (1.0, 1.5, 2.0):
            m = MetricDescriptor.schatten(p, p / 2)
            P = PointSet(sym_cloud(rng, 60, 3), m)
            D = pairwise_distances(P)
            spec = build_weak_embedding(P, D, seed=4)
            img = evaluate_weak(spec, P.coords)
            out = pairwise_distances(lp(img, 1.0))
            mask = D > 0
            assert np.max(out[mask] / D[mask]) <= 1 + 1e-12
            assert measure_weak_distortion(P, spec, D) <= 32 * 8

    def test_l2_to_l1_map(self):
        A = L2ToL1Map(9, seed=5)
        assert A.out_dim == 36
        v = np.random.default_rng(0).normal(size=9)
        assert np.abs(A(v)).sum() <= A.lip * np.linalg.norm(v) + 1e-12
        assert np.array_equal(L2ToL1Map(9, seed=5).matrix, A.matrix)
