"""Grid-style LSH over l_1 and its data-dependent (rejection-conditioned) variant.

An atomic cut picks a coordinate uniformly and a threshold uniformly in
``[-delta, delta]``; two points in the box are separated with probability
``||x - y||_1 / (2 d' delta)``. ``k`` cuts are tensored into one k-bit key, and
a sampled key function is kept only if no bucket of the build set exceeds the
load bound ``p2' * m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricDescriptor, PointSet, pairwise_distances, weak_l1_norm_from_matrix
from .weak import WeakEmbeddingSpec, evaluate_weak

__all__ = [
    "LSHError",
    "DispersionError",
    "CalibrationError",
    "MAX_CUTS",
    "key_words",
    "MAX_ATTEMPTS",
    "RHO_CONST",
    "HashParams",
    "EmpiricalHashFn",
    "HashSampler",
    "atomic_collision_prob",
    "choose_tensor_k",
    "sample_empirical_hash",
    "cut_keys",
    "evaluate_hash",
    "hash_keys",
]

MAX_CUTS = 1024
KEY_WORD_BITS = 64
MAX_ATTEMPTS = 64
RHO_CONST = 64.0


class LSHError(RuntimeError):
    pass


class DispersionError(LSHError):
    """The node set is not spread out enough for the hash family's guarantees."""


class CalibrationError(LSHError):
    """Derived parameters fall outside what the constants were calibrated for."""


def atomic_collision_prob(x, y, delta: float) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("dimension mismatch")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if np.any(np.abs(x) > delta) or np.any(np.abs(y) > delta):
        raise ValueError("points must lie in [-delta, delta]^d")
    return 1.0 - float(np.sum(np.abs(x - y))) / (2.0 * x.shape[0] * delta)


def choose_tensor_k(p2: float) -> int:
    """Smallest ``k >= 1`` with ``p2**k <= 1/4``."""
    if not (0.0 < p2 < 1.0):
        raise ValueError(f"p2 must lie in (0, 1), got {p2}")
    k = max(1, math.ceil(math.log(0.25) / math.log(p2)))
    while p2 ** k > 0.25:
        k += 1
    while k > 1 and p2 ** (k - 1) <= 0.25:
        k -= 1
    return k


@dataclass(frozen=True)
class HashParams:
    r: float
    c: float
    big_D: float
    t_scale: float
    c_lsh: float
    beta: float
    delta: float
    k: int
    p1: float
    p2: float
    p2_prime: float
    m: int

    @property
    def rho(self) -> float:
        return math.log(1.0 / self.p1) / math.log(1.0 / self.p2_prime)

    @property
    def load_bound(self) -> float:
        return self.p2_prime * self.m


@dataclass(frozen=True)
class EmpiricalHashFn:
    coords: np.ndarray
    thresholds: np.ndarray
    embedding: WeakEmbeddingSpec
    box_center: np.ndarray
    params: HashParams
    load_bound: float
    rng_seed: int = 0
    attempts: int = 1

    @property
    def k(self) -> int:
        return int(self.coords.shape[0])

    @property
    def delta(self) -> float:
        return self.params.delta

    def __call__(self, x) -> int:
        return evaluate_hash(self, x)


def key_words(k: int) -> int:
    return max(1, -(-k // KEY_WORD_BITS))


def cut_keys(coords: np.ndarray, thresholds: np.ndarray, boxed: np.ndarray) -> np.ndarray:
    """Pack ``1{v[coord_j] <= threshold_j}`` into bit ``j`` of one key per row.

    Keys are uint64 for ``k <= 64``; wider keys are Python ints in an object array.
    """
    bits = boxed[:, coords] <= thresholds[None, :]
    words = []
    for lo in range(0, coords.shape[0], KEY_WORD_BITS):
        chunk = bits[:, lo:lo + KEY_WORD_BITS].astype(np.uint64)
        weights = np.left_shift(np.uint64(1), np.arange(chunk.shape[1], dtype=np.uint64))
        words.append((chunk * weights[None, :]).sum(axis=1, dtype=np.uint64))
    if len(words) == 1:
        return words[0]
    out = np.empty(bits.shape[0], dtype=object)
    for i in range(bits.shape[0]):
        out[i] = sum(int(w[i]) << (KEY_WORD_BITS * j) for j, w in enumerate(words))
    return out


def _boxed(images: np.ndarray, center: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(images - center, -delta, delta)


def hash_keys(h: EmpiricalHashFn, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    images = evaluate_weak(h.embedding, X)
    return cut_keys(h.coords, h.thresholds, _boxed(images, h.box_center, h.delta))


def evaluate_hash(h: EmpiricalHashFn, x) -> int:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return int(hash_keys(h, x)[0])


@dataclass
class HashSampler:
    """Parameters and box for one node; draws candidate hashes until one fits.

    ``images`` are the Lipschitz-1 images of the node set. Raises
    DispersionError when their weak l_1 norm is below ``c r / (2 big_D)`` and
    CalibrationError when the derived parameters break the calibrated bounds.
    """

    images: np.ndarray
    r: float
    big_D: float
    c: float
    embedding: WeakEmbeddingSpec | None = None
    params: HashParams = field(init=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim == 1:
            images = images[:, None]
        m, dim = images.shape
        lo, hi = images.min(axis=0), images.max(axis=0)
        self.box_center = 0.5 * (lo + hi)
        delta = float(np.max(0.5 * (hi - lo))) if m else 0.0
        out = pairwise_distances(PointSet(images, MetricDescriptor.lp(1.0)))
        t, value = weak_l1_norm_from_matrix(out)
        need = self.c * self.r / (2.0 * self.big_D)
        if value < need or t <= 0.0:
            raise DispersionError(
                f"weak l_1 norm of images {value:.6g} below required {need:.6g}; node set is not dispersed"
            )
        if 16.0 * self.r / t > 0.5:
            raise CalibrationError(f"16 r / t_scale = {16.0 * self.r / t:.4g} exceeds 1/2")
        c_lsh = t / (2.0 * self.r)
        beta = self.c * self.r / (4.0 * self.big_D * t)
        p2 = 1.0 - c_lsh * self.r / (2.0 * dim * delta)
        k = choose_tensor_k(p2)
        if k > MAX_CUTS:
            raise CalibrationError(f"tensor power k={k} exceeds {MAX_CUTS} (p2={p2:.6g}, dim={dim})")
        p2_prime = math.sqrt(1.0 - beta * (1.0 - 2.0 * p2 ** k))
        p1 = (1.0 - self.r / (2.0 * dim * delta)) ** k
        self.params = HashParams(
            r=self.r, c=self.c, big_D=self.big_D, t_scale=t, c_lsh=c_lsh, beta=beta,
            delta=delta, k=k, p1=p1, p2=p2, p2_prime=p2_prime, m=m,
        )
        if self.params.rho > RHO_CONST * self.big_D / self.c:
            raise CalibrationError(
                f"rho={self.params.rho:.4g} exceeds {RHO_CONST} * D / c = {RHO_CONST * self.big_D / self.c:.4g}"
            )
        self.boxed = _boxed(images, self.box_center, delta)

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        k, delta = self.params.k, self.params.delta
        coords = rng.integers(0, self.boxed.shape[1], size=k).astype(np.int64)
        thresholds = rng.uniform(-delta, delta, size=k)
        return coords, thresholds

    def max_load(self, coords: np.ndarray, thresholds: np.ndarray) -> int:
        _, counts = np.unique(cut_keys(coords, thresholds, self.boxed), return_counts=True)
        return int(counts.max())

    def accepts(self, coords: np.ndarray, thresholds: np.ndarray) -> bool:
        return self.max_load(coords, thresholds) <= self.params.load_bound

    def sample(self, rng: np.random.Generator, rng_seed: int = 0) -> EmpiricalHashFn:
        for attempt in range(1, MAX_ATTEMPTS + 1):
            coords, thresholds = self.draw(rng)
            if self.accepts(coords, thresholds):
                return EmpiricalHashFn(
                    coords, thresholds, self.embedding, self.box_center, self.params,
                    self.params.load_bound, rng_seed, attempt,
                )
        raise CalibrationError(
            f"{MAX_ATTEMPTS} consecutive rejections (m={self.params.m}, k={self.params.k}, "
            f"p2'={self.params.p2_prime:.6g}); acceptance should be at least 1/2"
        )


def sample_empirical_hash(images, r: float, big_D: float, c: float, rng: np.random.Generator,
                          embedding: WeakEmbeddingSpec | None = None) -> EmpiricalHashFn:
    return HashSampler(images, r, big_D, c, embedding).sample(rng)
