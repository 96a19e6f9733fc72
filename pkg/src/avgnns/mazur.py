"""Rescaled Mazur maps from l_p into l_q, shifted by a coordinate-wise median."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricDescriptor, MetricKind, PointSet, pairwise_distances

__all__ = [
    "ShiftedMazurSpec",
    "DistortionReport",
    "mazur_map",
    "lp_norm",
    "rescaled_mazur",
    "mazur_lip_bound",
    "coordinate_median_shift",
    "build_lp_embedding",
    "evaluate_embedding",
    "measure_q_avg_distortion",
]

_TINY = 1e-300


def mazur_map(x, p: float, q: float) -> np.ndarray:
    """Coordinate-wise ``sign(x_i) |x_i|**(p/q)``."""
    if p < 1 or q < 1:
        raise ValueError("p and q must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    out = np.zeros_like(a)
    nz = a >= _TINY
    out[nz] = np.exp((p / q) * np.log(a[nz]))
    return np.sign(x) * out


def lp_norm(X, p: float) -> np.ndarray:
    """Row-wise l_p norm, scaled by the row maximum so tiny or huge entries neither underflow nor overflow."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    top = np.max(np.abs(X), axis=1)
    safe = np.where(top > 0, top, 1.0)
    return top * np.linalg.norm(X / safe[:, None], ord=p, axis=1)


def rescaled_mazur(x, p: float, q: float) -> np.ndarray:
    """Degree-one radial extension of the Mazur map; ``||out||_q == ||x||_p``.

    Works on a single vector or on the rows of a 2-d array. Evaluated as
    ``||x||_p * M(x / ||x||_p)`` so the powered ratios stay in [0, 1].
    """
    if not (p >= q >= 1):
        raise ValueError(f"need p >= q >= 1, got p={p}, q={q}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(1, -1) if x.ndim == 1 else x
    norms = lp_norm(flat, p)
    out = np.zeros_like(flat)
    nz = norms > 0
    unit = flat[nz] / norms[nz, None]
    out[nz] = norms[nz, None] * mazur_map(unit, p, q)
    return out.reshape(x.shape)


def mazur_lip_bound(p: float, q: float) -> float:
    # 1 + 2 * K with K = 2^(1/q - 1/p) * p/q, the sphere Lipschitz constant
    return 1.0 + 2.0 ** (1.0 + 1.0 / q - 1.0 / p) * (p / q)


@dataclass(frozen=True)
class ShiftedMazurSpec:
    p: float
    q: float
    shift: np.ndarray
    lip_bound: float

    def __post_init__(self):
        if not (self.p >= self.q >= 1):
            raise ValueError("need p >= q >= 1")
        shift = np.array(self.shift, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(shift)):
            raise ValueError("shift must be finite")
        shift.setflags(write=False)
        object.__setattr__(self, "shift", shift)

    @property
    def d(self) -> int:
        return self.shift.shape[0]

    @property
    def out_dim(self) -> int:
        return self.d

    def __call__(self, x) -> np.ndarray:
        return evaluate_embedding(self, x)


@dataclass(frozen=True)
class DistortionReport:
    max_pair_expansion: float
    sum_ratio_q: float
    d_empirical: float


def coordinate_median_shift(P: PointSet) -> np.ndarray:
    """Per-coordinate median with equal strict counts below and above.

    Odd ``n`` takes the middle order statistic; even ``n`` the midpoint of the
    two middle ones.
    """
    if P.metric.kind != MetricKind.LP:
        raise ValueError("coordinate median shift needs an l_p point set")
    s = np.sort(P.coords, axis=0)
    n = P.n
    if n % 2:
        return s[n // 2].copy()
    return 0.5 * (s[n // 2 - 1] + s[n // 2])


def build_lp_embedding(P: PointSet, q_target: float = 1.0) -> ShiftedMazurSpec:
    if P.metric.kind != MetricKind.LP:
        raise ValueError("build_lp_embedding needs an l_p point set")
    p = P.metric.p
    if p < q_target or q_target < 1:
        raise ValueError(f"need p >= q_target >= 1, got p={p}, q_target={q_target}")
    return ShiftedMazurSpec(p, float(q_target), coordinate_median_shift(P), mazur_lip_bound(p, q_target))


def evaluate_embedding(spec: ShiftedMazurSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.d:
        raise ValueError(f"dimension mismatch: expected {spec.d}, got {x.shape[-1]}")
    return rescaled_mazur(x - spec.shift, spec.p, spec.q)


def measure_q_avg_distortion(P: PointSet, images, q: float, output_norm: float) -> DistortionReport:
    """Empirical q-average distortion of ``x -> images[i]``.

    The Lipschitz constant is replaced by the largest expansion seen over the
    pairs of ``P``, which makes the result a data-dependent lower bound.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 1:
        images = images[:, None]
    if P.n < 2 or images.shape[0] != P.n:
        raise ValueError("need n >= 2 points with one image each")
    src = pairwise_distances(P)
    out = pairwise_distances(PointSet(images, MetricDescriptor.lp(output_norm)))
    mask = src > 0
    if not mask.any():
        raise ValueError("all points coincide; distortion is undefined")
    out_q = float(np.sum(out ** q))
    if out_q == 0.0:
        raise ValueError("all images coincide; distortion is undefined")
    expansion = float(np.max(out[mask] / src[mask]))
    ratio = float(np.sum(src ** q)) / out_q
    return DistortionReport(expansion, ratio, expansion * ratio ** (1.0 / q))
