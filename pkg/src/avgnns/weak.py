"""Embeddings into l_1 with bounded weak average distortion.

Two branches. If the distance to the most central point already spreads the
set out (the *easy* case), that one-dimensional map is returned. Otherwise the
set is concentrated around the central point; the average-distortion embedding
is built on the points within twice the majority radius and applied to all of
the space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .mazur import ShiftedMazurSpec, build_lp_embedding, evaluate_embedding
from .metrics import (
    MetricDescriptor,
    MetricKind,
    PointSet,
    central_point,
    distances_to,
    pairwise_distances,
    weak_l1_norm_from_matrix,
)
from .schatten import SchattenMazurSpec, build_schatten_embedding, evaluate_schatten

__all__ = [
    "ALPHA",
    "RICARD_CONST",
    "Variant",
    "L2ToL1Map",
    "WeakEmbeddingSpec",
    "easy_case_score",
    "build_weak_embedding",
    "evaluate_weak",
    "measure_weak_distortion",
]

ALPHA = 1.0 / 20.0
# calibrated Holder constant of the non-commutative Mazur map (not from theory)
RICARD_CONST = 8.0


class Variant(enum.IntEnum):
    RADIAL = 0
    SHIFTED = 1


class L2ToL1Map:
    """Seeded random-sign linear map from l_2^k into l_1^{4k}.

    Scaled by ``sqrt(pi/2) / (4k)`` so that the expected l_1 norm of an image
    matches the l_2 norm of its source. The certified Lipschitz constant is
    ``sqrt(4k) * sigma_max``, since ``||v||_1 <= sqrt(dim) ||v||_2``.
    """

    def __init__(self, in_dim: int, seed: int):
        self.in_dim = int(in_dim)
        self.seed = int(seed)
        self.out_dim = 4 * self.in_dim
        rng = np.random.default_rng(self.seed)
        signs = rng.integers(0, 2, size=(self.out_dim, self.in_dim)) * 2.0 - 1.0
        self.matrix = signs * (math.sqrt(math.pi / 2.0) / self.out_dim)
        self.lip = math.sqrt(self.out_dim) * float(np.linalg.norm(self.matrix, ord=2))

    def __call__(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.matrix.T


@dataclass(frozen=True)
class WeakEmbeddingSpec:
    variant: Variant
    metric: MetricDescriptor
    lip_bound: float
    center: np.ndarray | None = None
    sub: ShiftedMazurSpec | SchattenMazurSpec | None = None
    l2l1_seed: int | None = None
    q_subset_indices: np.ndarray | None = None
    center_index: int = -1
    s_star: float = 0.0
    alpha_const: float = ALPHA

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.q_subset_indices is not None:
            object.__setattr__(self, "q_subset_indices", np.asarray(self.q_subset_indices, dtype=np.int64))
        if self.l2l1_seed is not None:
            object.__setattr__(self, "_l2l1", L2ToL1Map(self.sub.out_dim, self.l2l1_seed))

    @property
    def in_dim(self) -> int:
        if self.variant == Variant.RADIAL:
            return self.center.shape[0]
        return self.sub.in_dim if isinstance(self.sub, SchattenMazurSpec) else self.sub.d

    @property
    def out_dim(self) -> int:
        if self.variant == Variant.RADIAL:
            return 1
        if self.l2l1_seed is not None:
            return self._l2l1.out_dim
        return self.sub.out_dim

    @property
    def l2l1(self) -> L2ToL1Map | None:
        return getattr(self, "_l2l1", None)

    def raw(self, x) -> np.ndarray:
        """Images before the 1/lip_bound rescaling."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.in_dim:
            raise ValueError(f"dimension mismatch: expected {self.in_dim}, got {X.shape[1]}")
        if self.variant == Variant.RADIAL:
            out = distances_to(PointSet(X, self.metric), self.center)[:, None]
        elif isinstance(self.sub, SchattenMazurSpec):
            out = self._l2l1(evaluate_schatten(self.sub, X))
        else:
            out = evaluate_embedding(self.sub, X)
        return out[0] if single else out

    def __call__(self, x) -> np.ndarray:
        return evaluate_weak(self, x)


def evaluate_weak(spec: WeakEmbeddingSpec, x) -> np.ndarray:
    """The delivered map: raw image divided by the certified Lipschitz bound."""
    return spec.raw(x) / spec.lip_bound


def easy_case_score(P: PointSet, center_idx: int, s: float, dists: np.ndarray | None = None) -> float:
    """``sup_{t >= s} (t - s) |P outside B(center, t)| / n``, evaluated exactly."""
    if dists is None:
        dists = distances_to(P, P.coords[center_idx])
    srt = np.sort(dists)
    n = srt.shape[0]
    values, first = np.unique(srt, return_index=True)
    beyond = values > s
    if not beyond.any():
        return 0.0
    scores = (values[beyond] - s) * (n - first[beyond]) / n
    return float(scores.max())


def _check_metric(m: MetricDescriptor):
    if m.kind == MetricKind.LP:
        if m.snowflake_alpha != 1.0:
            raise ValueError("l_p weak embedding needs an un-snowflaked metric")
    else:
        if not (1.0 <= m.p <= 2.0):
            raise ValueError("Schatten weak embedding needs 1 <= p <= 2")
        if abs(m.snowflake_alpha - m.p / 2.0) > 1e-12:
            raise ValueError("Schatten weak embedding works on the (p/2)-snowflake metric")


def schatten_lip_bound(p: float, l2l1: L2ToL1Map) -> float:
    return (1.0 + 2.0 ** (p / 2.0) * RICARD_CONST) * l2l1.lip


def build_weak_embedding(P: PointSet, D: np.ndarray | None = None, seed: int = 0) -> WeakEmbeddingSpec:
    """Weak-average-distortion embedding of ``P`` into l_1.

    ``D`` may carry the precomputed distance matrix of ``P``; ``seed`` fixes the
    l_2 -> l_1 stage used on Schatten inputs.
    """
    _check_metric(P.metric)
    if P.n < 2:
        raise ValueError("need at least two points")
    if D is None:
        D = pairwise_distances(P)
    _, weak = weak_l1_norm_from_matrix(D)
    if weak == 0.0:
        raise ValueError("all points coincide; weak l_1 norm is zero")
    ci, s_star = central_point(P, D)
    score = easy_case_score(P, ci, s_star, D[ci])
    # on two points the radial map is an isometry, whichever branch the scores pick
    if score >= ALPHA * weak or P.n == 2:
        return WeakEmbeddingSpec(
            Variant.RADIAL, P.metric, 1.0, center=P.coords[ci].copy(), center_index=ci, s_star=s_star
        )
    q_idx = np.flatnonzero(D[ci] <= 2.0 * s_star)
    Q = P.subset(q_idx)
    if P.metric.kind == MetricKind.LP:
        sub = build_lp_embedding(Q, 1.0)
        return WeakEmbeddingSpec(
            Variant.SHIFTED, P.metric, sub.lip_bound, sub=sub,
            q_subset_indices=q_idx, center_index=ci, s_star=s_star,
        )
    sub = build_schatten_embedding(Q, P.metric.p)
    l2l1 = L2ToL1Map(sub.out_dim, seed)
    return WeakEmbeddingSpec(
        Variant.SHIFTED, P.metric, schatten_lip_bound(P.metric.p, l2l1), sub=sub, l2l1_seed=seed,
        q_subset_indices=q_idx, center_index=ci, s_star=s_star,
    )


def measure_weak_distortion(P: PointSet, spec: WeakEmbeddingSpec, D: np.ndarray | None = None) -> float:
    """Empirical weak average distortion: max expansion times the weak-norm ratio."""
    if D is None:
        D = pairwise_distances(P)
    images = evaluate_weak(spec, P.coords)
    out = pairwise_distances(PointSet(images, MetricDescriptor.lp(1.0)))
    _, weak_src = weak_l1_norm_from_matrix(D)
    _, weak_img = weak_l1_norm_from_matrix(out)
    if weak_src == 0.0:
        raise ValueError("all points coincide")
    if weak_img == 0.0:
        raise ValueError("degenerate image: all points map to one point")
    mask = D > 0
    expansion = float(np.max(out[mask] / D[mask]))
    return expansion * weak_src / weak_img
