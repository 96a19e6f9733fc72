"""Non-commutative Mazur maps on symmetric matrices and the convex shift solver.

For ``1 <= p <= 2`` the map ``X -> X |X|**(p/2 - 1)`` sends the (p/2)-snowflake
of Schatten-p into Schatten-2 (= Euclidean space of dimension ``d**2``). The
shift ``T`` making the images of ``P - T`` average to zero is the minimizer of
``f(T) = mean ||X - T||_{C_q}**q`` with ``q = p/2 + 1``, whose gradient is
``-q * mean M(X - T)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .metrics import MetricKind, PointSet, pairwise_distances, schatten_norm

log = logging.getLogger(__name__)

__all__ = [
    "SchattenMazurSpec",
    "ShiftSolverError",
    "nc_mazur_map",
    "shift_objective",
    "shift_gradient",
    "schatten_shift_solve",
    "build_schatten_embedding",
    "evaluate_schatten",
    "ricard_ratio",
]

EIG_REL_TOL = 1e-12
ARMIJO = 1e-4


class ShiftSolverError(RuntimeError):
    def __init__(self, message: str, T: np.ndarray, residual: float):
        super().__init__(message)
        self.T = T
        self.residual = residual


def _as_symmetric(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != X.shape[-2]:
        raise ValueError("expected square matrices")
    asym = np.abs(X - np.swapaxes(X, -1, -2))
    if asym.size and float(asym.max()) > 1e-9:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _spectral_power(X: np.ndarray, power: float) -> np.ndarray:
    """``U diag(sign(l) |l|**power) U^T`` for a stack of symmetric matrices."""
    lam, U = np.linalg.eigh(X)
    scale = np.sqrt(np.sum(lam * lam, axis=-1, keepdims=True))
    a = np.abs(lam)
    a = np.where(a < EIG_REL_TOL * scale, 0.0, a)
    mapped = np.sign(lam) * a ** power
    return (U * mapped[..., None, :]) @ np.swapaxes(U, -1, -2)


def nc_mazur_map(X, p: float) -> np.ndarray:
    """Non-commutative Mazur map into Schatten-2; works on one matrix or a stack."""
    return _spectral_power(_as_symmetric(X), p / 2.0)


def shift_objective(P: np.ndarray, T: np.ndarray, p: float) -> float:
    q = p / 2.0 + 1.0
    lam = np.linalg.eigvalsh(P - T)
    return float(np.mean(np.sum(np.abs(lam) ** q, axis=-1)))


def _mean_image(P: np.ndarray, T: np.ndarray, p: float) -> np.ndarray:
    return _spectral_power(P - T, p / 2.0).mean(axis=0)


def shift_gradient(P: np.ndarray, T: np.ndarray, p: float) -> np.ndarray:
    q = p / 2.0 + 1.0
    return -q * _mean_image(P, T, p)


def schatten_shift_solve(P, p: float, eps: float, max_iters: int = 20000) -> tuple[np.ndarray, float]:
    """Minimize the convex shift objective by gradient descent with backtracking.

    Starts at the entrywise mean. Each step tries a Barzilai-Borwein length and
    halves it until the Armijo condition holds. Stops once the Frobenius norm of
    the mean image ``mean M(X - T)`` is at most ``eps``.

    Raises ShiftSolverError (carrying the best ``T``) when ``max_iters`` runs out.
    """
    if not (1.0 <= p <= 2.0):
        raise ValueError("shift solver needs 1 <= p <= 2")
    if eps <= 0:
        raise ValueError("eps must be positive")
    P = _as_symmetric(P)
    q = p / 2.0 + 1.0
    T = P.mean(axis=0)
    G = _mean_image(P, T, p)
    res = float(np.linalg.norm(G))
    f = shift_objective(P, T, p)
    step = 1.0
    prev = None
    for it in range(max_iters):
        if res <= eps:
            log.debug("shift solver converged after %d iterations, residual %.3g", it, res)
            return T, res
        direction = q * G  # negative gradient
        g2 = float(np.sum(direction * direction))
        if prev is not None:
            dT, dg = T - prev[0], direction - prev[1]
            denom = -float(np.sum(dT * dg))
            if denom > 0:
                step = float(np.sum(dT * dT)) / denom
        slack = 8.0 * np.finfo(float).eps * max(abs(f), 1.0)
        while True:
            T_new = T + step * direction
            f_new = shift_objective(P, T_new, p)
            if f_new <= f - ARMIJO * step * g2 + slack:
                break
            step *= 0.5
            if step < 1e-30:
                raise ShiftSolverError("line search stalled", T, res)
        prev = (T, direction)
        T, f = T_new, f_new
        G = _mean_image(P, T, p)
        res = float(np.linalg.norm(G))
    if res <= eps:
        return T, res
    raise ShiftSolverError(f"no convergence in {max_iters} iterations (residual {res:.3g})", T, res)


@dataclass(frozen=True)
class SchattenMazurSpec:
    p: float
    d: int
    shift_T: np.ndarray
    residual: float
    target_eps: float

    def __post_init__(self):
        T = _as_symmetric(np.asarray(self.shift_T, dtype=np.float64).reshape(self.d, self.d))
        T.setflags(write=False)
        object.__setattr__(self, "shift_T", T)

    @property
    def in_dim(self) -> int:
        return self.d * self.d

    @property
    def out_dim(self) -> int:
        return self.d * self.d

    def __call__(self, x) -> np.ndarray:
        return evaluate_schatten(self, x)


def evaluate_schatten(spec: SchattenMazurSpec, x) -> np.ndarray:
    """Flattened ``M(X - T)``; accepts one flattened matrix or rows of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"dimension mismatch: expected {spec.in_dim}, got {x.shape[-1]}")
    mats = x.reshape(x.shape[:-1] + (spec.d, spec.d))
    return nc_mazur_map(mats - spec.shift_T, spec.p).reshape(x.shape)


def build_schatten_embedding(P: PointSet, p: float | None = None, max_iters: int = 20000) -> SchattenMazurSpec:
    if P.metric.kind != MetricKind.SCHATTEN:
        raise ValueError("build_schatten_embedding needs a Schatten point set")
    p = P.metric.p if p is None else float(p)
    if not (1.0 <= p <= 2.0):
        raise ValueError("Schatten embedding is only built for 1 <= p <= 2")
    if P.n < 2:
        raise ValueError("need at least two matrices")
    base = pairwise_distances(P.with_metric(P.metric.with_alpha(1.0)))
    mean_snow = float(np.sum(base ** (p / 2.0))) / (2.0 * P.n * P.n)
    if mean_snow == 0.0:
        raise ValueError("all matrices coincide")
    eps = min(1e-6, 0.5 * mean_snow)
    T, res = schatten_shift_solve(P.matrices(), p, eps, max_iters)
    return SchattenMazurSpec(p, P.side, T, res, eps)


def ricard_ratio(X, Y, p: float) -> float:
    """``||M(X) - M(Y)||_{C2}`` divided by the constant-free Ricard right-hand side."""
    X, Y = _as_symmetric(X), _as_symmetric(Y)
    lhs = float(np.linalg.norm(nc_mazur_map(X, p) - nc_mazur_map(Y, p)))
    if p <= 2.0:
        rhs = float(schatten_norm(X - Y, p)) ** (p / 2.0)
    else:
        nx, ny = float(np.linalg.norm(X)), float(np.linalg.norm(Y))
        rhs = p * float(schatten_norm(X - Y, p)) * (nx ** (p / 2 - 1) + ny ** (p / 2 - 1))
    return lhs / rhs if rhs > 0 else 0.0
