"""Distances, pair statistics and brute-force oracles.

Every statistic here is exact: pairwise quantities are computed over the full
``n x n`` distance matrix. Pairs are *ordered* and self-pairs are counted, so
pair fractions always use the denominator ``n**2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

SYMMETRY_TOL = 1e-9

__all__ = [
    "MetricKind",
    "MetricDescriptor",
    "PointSet",
    "PairStats",
    "distance",
    "distances_to",
    "cross_distances",
    "check_point",
    "pairwise_distances",
    "pair_stats",
    "psi",
    "weak_l1_norm",
    "weak_l1_norm_from_matrix",
    "majority_radius",
    "central_point",
    "is_dispersed",
    "brute_force_nn",
    "schatten_norm",
]


class MetricKind(enum.IntEnum):
    LP = 0
    SCHATTEN = 1


@dataclass(frozen=True)
class MetricDescriptor:
    kind: MetricKind = MetricKind.LP
    p: float = 2.0
    snowflake_alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if not (self.p >= 1.0 and math.isfinite(self.p)):
            raise ValueError(f"p must be a finite real >= 1, got {self.p}")
        if not (0.0 < self.snowflake_alpha <= 1.0):
            raise ValueError(f"snowflake_alpha must lie in (0, 1], got {self.snowflake_alpha}")

    @classmethod
    def lp(cls, p: float, snowflake_alpha: float = 1.0) -> "MetricDescriptor":
        return cls(MetricKind.LP, float(p), float(snowflake_alpha))

    @classmethod
    def schatten(cls, p: float, snowflake_alpha: float = 1.0) -> "MetricDescriptor":
        return cls(MetricKind.SCHATTEN, float(p), float(snowflake_alpha))

    def with_alpha(self, alpha: float) -> "MetricDescriptor":
        return MetricDescriptor(self.kind, self.p, float(alpha))


def _side(d: int) -> int:
    side = math.isqrt(d)
    if side * side != d:
        raise ValueError(f"Schatten points need d = side**2 coordinates, got d={d}")
    return side


def _symmetrize(mats: np.ndarray) -> np.ndarray:
    """Validate (..., s, s) matrices as symmetric and return (A + A^T)/2."""
    asym = np.abs(mats - np.swapaxes(mats, -1, -2))
    if asym.size and float(asym.max()) > SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max asymmetry {float(asym.max()):.3g})")
    return 0.5 * (mats + np.swapaxes(mats, -1, -2))


def schatten_norm(mats: np.ndarray, p: float) -> np.ndarray:
    """Schatten-p norm of symmetric matrices of shape (..., s, s)."""
    eig = np.linalg.eigvalsh(mats)
    return np.linalg.norm(eig, ord=p, axis=-1)


@dataclass(frozen=True)
class PointSet:
    """``n`` points with ``d`` coordinates each, plus their metric.

    Schatten points are symmetric ``s x s`` matrices flattened row-major, so
    ``d = s**2``.
    """

    coords: np.ndarray
    metric: MetricDescriptor = field(default_factory=MetricDescriptor)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2:
            raise ValueError("coords must be an n x d array")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if self.metric.kind == MetricKind.SCHATTEN:
            s = _side(coords.shape[1])
            coords = _symmetrize(coords.reshape(-1, s, s)).reshape(coords.shape)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @property
    def side(self) -> int:
        return _side(self.d)

    def subset(self, indices) -> "PointSet":
        return PointSet(self.coords[np.asarray(indices, dtype=np.int64)], self.metric)

    def with_metric(self, metric: MetricDescriptor) -> "PointSet":
        return PointSet(self.coords, metric)

    def matrices(self) -> np.ndarray:
        s = self.side
        return self.coords.reshape(-1, s, s)


@dataclass(frozen=True)
class PairStats:
    sorted_distinct_distances: np.ndarray
    tail_fractions: np.ndarray


def check_point(x, d: int, metric: MetricDescriptor) -> np.ndarray:
    """Validate one point of ``d`` coordinates; Schatten points are symmetrized."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != d:
        raise ValueError(f"dimension mismatch: expected {d} coordinates, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("coordinates must be finite")
    if metric.kind == MetricKind.SCHATTEN:
        s = _side(d)
        x = _symmetrize(x.reshape(s, s)).reshape(-1)
    return x


def distance(x, y, m: MetricDescriptor) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x = check_point(x, x.shape[0], m)
    y = check_point(y, x.shape[0], m)
    diff = x - y
    if m.kind == MetricKind.LP:
        base = float(np.linalg.norm(diff, ord=m.p))
    else:
        s = _side(diff.shape[0])
        base = float(schatten_norm(diff.reshape(s, s), m.p))
    return base ** m.snowflake_alpha


def cross_distances(a: np.ndarray, b: np.ndarray, m: MetricDescriptor, chunk: int = 256) -> np.ndarray:
    """Distance matrix between the rows of ``a`` and ``b``."""
    if m.kind == MetricKind.LP:
        if m.p == 1.0:
            out = cdist(a, b, "cityblock")
        elif m.p == 2.0:
            out = cdist(a, b, "euclidean")
        else:
            out = cdist(a, b, "minkowski", p=m.p)
    else:
        s = _side(a.shape[1])
        ma, mb = a.reshape(-1, s, s), b.reshape(-1, s, s)
        out = np.empty((a.shape[0], b.shape[0]))
        for lo in range(0, a.shape[0], chunk):
            diff = ma[lo:lo + chunk, None] - mb[None, :]
            out[lo:lo + chunk] = schatten_norm(diff, m.p)
    if m.snowflake_alpha != 1.0:
        out = out ** m.snowflake_alpha
    return out


def pairwise_distances(P: PointSet) -> np.ndarray:
    """Full symmetric ``n x n`` distance matrix with an exact zero diagonal."""
    D = cross_distances(P.coords, P.coords, P.metric)
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    return D


def distances_to(P: PointSet, x) -> np.ndarray:
    x = check_point(x, P.d, P.metric)
    return cross_distances(P.coords, x[None, :], P.metric)[:, 0]


def _ordered_pair_distances(D: np.ndarray) -> tuple[np.ndarray, int]:
    """Sorted strictly-upper-triangle distances and n (each stands for 2 ordered pairs)."""
    n = D.shape[0]
    iu = np.triu_indices(n, k=1)
    return np.sort(D[iu]), n


def pair_stats(P: PointSet, D: np.ndarray | None = None) -> PairStats:
    if D is None:
        D = pairwise_distances(P)
    upper, n = _ordered_pair_distances(D)
    total = float(n * n)
    values, first = np.unique(upper, return_index=True)
    # pairs with distance >= values[j]: everything from its first occurrence on
    ge = 2.0 * (upper.shape[0] - first)
    if values.size == 0 or values[0] > 0.0:
        values = np.concatenate([[0.0], values])
        ge = np.concatenate([[total], ge])
    else:
        ge[0] = total
    return PairStats(values, ge / total)


def psi(P: PointSet, t: float, D: np.ndarray | None = None) -> float:
    """Fraction of ordered pairs of ``P`` at distance strictly greater than ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if D is None:
        D = pairwise_distances(P)
    return float(np.count_nonzero(D > t)) / float(D.shape[0] ** 2)


def weak_l1_norm_from_matrix(D: np.ndarray) -> tuple[float, float]:
    """``sup_t t * psi(t)`` from a distance matrix, as ``(t_star, value)``."""
    upper, n = _ordered_pair_distances(D)
    if upper.size == 0 or upper[-1] <= 0.0:
        return 0.0, 0.0
    values, first = np.unique(upper, return_index=True)
    # compare distance * pair count before dividing, so ties on exact data stay exact
    scores = values * (2.0 * (upper.shape[0] - first))
    j = int(np.argmax(scores))  # first maximum = smallest distance among ties
    return float(values[j]), float(scores[j]) / float(n * n)


def weak_l1_norm(P: PointSet, D: np.ndarray | None = None) -> tuple[float, float]:
    """Weak-L1 norm of the pair-distance distribution.

    The supremum of ``t * psi(P, t)`` is approached as ``t`` rises to a
    distinct pair distance ``delta``, where it equals ``delta`` times the
    fraction of pairs at distance ``>= delta``. Returns ``(t_star, value)``
    with ties broken toward the smallest ``delta``; ``(0, 0)`` when every point
    coincides.
    """
    if P.n < 1:
        raise ValueError("empty point set")
    if D is None:
        D = pairwise_distances(P)
    return weak_l1_norm_from_matrix(D)


def _majority_rank(n: int) -> int:
    return n // 2  # 0-based position of the (floor(n/2)+1)-th smallest


def majority_radius(P: PointSet, x, dists: np.ndarray | None = None) -> float:
    """Smallest ``s`` whose closed ball around ``x`` holds more than ``n/2`` points."""
    if dists is None:
        dists = distances_to(P, x)
    k = _majority_rank(dists.shape[0])
    return float(np.partition(dists, k)[k])


def central_point(P: PointSet, D: np.ndarray | None = None) -> tuple[int, float]:
    """Index of the point with the smallest majority radius (lowest index on ties)."""
    if P.n < 1:
        raise ValueError("empty point set")
    if D is None:
        D = pairwise_distances(P)
    k = _majority_rank(D.shape[0])
    radii = np.partition(D, k, axis=1)[:, k]
    idx = int(np.argmin(radii))
    return idx, float(radii[idx])


def is_dispersed(P: PointSet, t: float, beta: float, D: np.ndarray | None = None) -> bool:
    """Certify ``(t, beta)``-dispersion through balls of radius ``2t`` around data points."""
    if t < 0 or not (0.0 < beta < 1.0):
        raise ValueError("need t >= 0 and beta in (0, 1)")
    if D is None:
        D = pairwise_distances(P)
    counts = np.count_nonzero(D <= 2.0 * t, axis=1)
    return bool(np.all(counts <= (1.0 - beta) * P.n))


def brute_force_nn(P: PointSet, q) -> tuple[int, float]:
    dists = distances_to(P, q)
    idx = int(np.argmin(dists))
    return idx, float(dists[idx])
