"""Randomized decision-tree forest for (c, r) near-neighbor search.

Each tree splits its point set ``Q`` by one of three rules:

* Leaf when the level cap is reached or ``|Q| <= leaf_cap``;
* Ball when some data point's ``2cr``-ball holds a strict majority of ``Q``
  (the first such point by index); the child keeps ``Q`` minus that ball;
* Hash otherwise: a weak l_1 embedding of ``Q`` followed by a sampled
  data-dependent cut hash, with one child per nonempty bucket.

A query walks the trees in order and returns the first point found within
``(2c + 1) r``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .formats import FormatError, Reader, Writer
from .lsh import MAX_CUTS, RHO_CONST, EmpiricalHashFn, HashParams, HashSampler, LSHError, cut_keys, hash_keys, key_words
from .metrics import (
    MetricDescriptor,
    MetricKind,
    PointSet,
    check_point,
    cross_distances,
    distance,
    pairwise_distances,
)
from .weak import build_weak_embedding, evaluate_weak

log = logging.getLogger(__name__)

__all__ = [
    "LEAF_CAP",
    "TREE_MULTIPLE",
    "BuildParams",
    "WorkingScale",
    "Leaf",
    "Ball",
    "HashNode",
    "IndexStats",
    "Index",
    "QueryOutcome",
    "AuditReport",
    "calibrated_distortion",
    "default_c",
    "resolve_params",
    "build_index",
    "query",
    "save_index",
    "load_index",
    "encode_index",
    "decode_index",
    "audit_index",
]

LEAF_CAP = 100
TREE_MULTIPLE = 3.0
DEFAULT_ASPECT_CAP = 1e6

INDEX_MAGIC = b"ADNI"
INDEX_VERSION = 1

_LEAF, _BALL, _HASH = 0, 1, 2


def calibrated_distortion(metric: MetricDescriptor) -> float:
    return 8.0 * metric.p if metric.kind == MetricKind.LP else 8.0


@dataclass(frozen=True)
class BuildParams:
    """User-facing build parameters; ``None`` fields are filled by ``resolve_params``.

    ``r`` and ``c`` are in the units of the dataset's own metric.
    """

    r: float
    eps_exponent: float = 0.5
    c: float | None = None
    k_trees: int | None = None
    level_cap: int | None = None
    leaf_cap: int = LEAF_CAP
    master_seed: int = 0
    aspect_cap: float = DEFAULT_ASPECT_CAP

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError("r must be positive")
        if not (0.0 < self.eps_exponent <= 1.0):
            raise ValueError("eps_exponent must lie in (0, 1]")
        if self.c is not None and not self.c > 1.0:
            raise ValueError("c must exceed 1")
        if self.k_trees is not None and self.k_trees < 1:
            raise ValueError("k_trees must be >= 1")
        if self.level_cap is not None and self.level_cap < 1:
            raise ValueError("level_cap must be >= 1")
        if self.leaf_cap < 1:
            raise ValueError("leaf_cap must be >= 1")
        if not (0 <= self.master_seed < 2 ** 64):
            raise ValueError("master_seed must fit in 64 bits")


@dataclass(frozen=True)
class WorkingScale:
    """Scale on the metric the trees are built over.

    Schatten data is indexed on its (p/2)-snowflake, so there ``r`` and ``c``
    are raised to ``p/2``; on l_p data they pass through unchanged.
    """

    metric: MetricDescriptor
    r: float
    c: float
    big_D: float
    delta: float
    b: float

    @property
    def return_radius(self) -> float:
        return (2.0 * self.c + 1.0) * self.r


def _working_metric(m: MetricDescriptor) -> MetricDescriptor:
    if m.kind == MetricKind.SCHATTEN and m.snowflake_alpha == 1.0:
        return m.with_alpha(m.p / 2.0)
    return m


def default_c(metric: MetricDescriptor, eps_exponent: float = 0.5) -> float:
    """Default approximation factor, in units of ``metric`` itself."""
    power = _working_metric(metric).snowflake_alpha / metric.snowflake_alpha
    return (64.0 * calibrated_distortion(metric) / eps_exponent) ** (1.0 / power)


def resolve_params(P: PointSet, params: BuildParams, D: np.ndarray | None = None) -> tuple[BuildParams, WorkingScale]:
    if P.n < 1:
        raise ValueError("empty dataset")
    m = P.metric
    if m.kind == MetricKind.LP and m.snowflake_alpha != 1.0:
        raise ValueError("l_p datasets must be indexed on the plain metric (snowflake_alpha = 1)")
    if m.kind == MetricKind.SCHATTEN:
        if not 1.0 <= m.p <= 2.0:
            raise ValueError("Schatten indexing is supported for 1 <= p <= 2 only")
        if m.snowflake_alpha not in (1.0, m.p / 2.0):
            raise ValueError("Schatten datasets need snowflake_alpha 1 or p/2")
    wm = _working_metric(P.metric)
    power = wm.snowflake_alpha / P.metric.snowflake_alpha
    big_D = calibrated_distortion(P.metric)
    r_w = params.r ** power
    if params.c is None:
        c_w = 64.0 * big_D / params.eps_exponent
        c = c_w ** (1.0 / power)
    else:
        c = params.c
        c_w = c ** power
    if c_w <= 6.0:
        raise ValueError(f"approximation c must exceed 6 on the indexed metric (got {c_w:.4g})")
    if D is None:
        D = pairwise_distances(P.with_metric(wm))
    delta = float(D.max()) if D.size else 0.0
    if delta / r_w > params.aspect_cap:
        raise ValueError(f"aspect ratio diameter/r = {delta / r_w:.4g} exceeds cap {params.aspect_cap:.4g}")
    b = 0.5 if delta == 0.0 else max(0.5, 1.0 - c_w * r_w / (16.0 * big_D * delta))
    k_trees = params.k_trees or math.ceil(TREE_MULTIPLE * P.n ** params.eps_exponent)
    level_cap = params.level_cap
    if level_cap is None:
        level_cap = max(1, math.ceil(math.log(max(P.n, 2)) / math.log(1.0 / b)))
    resolved = replace(params, c=float(c), k_trees=int(k_trees), level_cap=int(level_cap))
    return resolved, WorkingScale(wm, float(r_w), float(c_w), big_D, delta, float(b))


# tree nodes

@dataclass
class Leaf:
    indices: np.ndarray


@dataclass
class Ball:
    center: int
    child: "Node"


@dataclass
class HashNode:
    h: EmpiricalHashFn
    keys: np.ndarray
    children: list

    def __post_init__(self):
        self.table = {int(k): ch for k, ch in zip(self.keys, self.children)}


Node = Leaf | Ball | HashNode


@dataclass
class IndexStats:
    leaves: int = 0
    balls: int = 0
    hashes: int = 0
    max_depth: int = 0
    attempts: int = 0
    build_seconds: float = 0.0

    @property
    def nodes(self) -> int:
        return self.leaves + self.balls + self.hashes


@dataclass
class Index:
    params: BuildParams
    scale: WorkingScale
    dataset: PointSet
    roots: list
    stats: IndexStats = field(default_factory=IndexStats)
    dataset_path: str = ""

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def return_radius(self) -> float:
        """Acceptance radius in units of the dataset's own metric."""
        power = self.scale.metric.snowflake_alpha / self.dataset.metric.snowflake_alpha
        return self.scale.return_radius ** (1.0 / power)


def _node_seed(master_seed: int, tree: int, path: tuple) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(tree,) + path)
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


class _Builder:
    def __init__(self, P: PointSet, params: BuildParams, scale: WorkingScale, D: np.ndarray):
        self.P = P.with_metric(scale.metric)
        self.params = params
        self.scale = scale
        self.D = D
        self.stats = IndexStats()
        self.l2l1_seed = _node_seed(params.master_seed, 0, (0xFFFF,))
        # deterministic node work along the ball-only spine, shared by all trees
        self.spine: dict[int, tuple] = {}

    def dense_center(self, Q: np.ndarray, DQ: np.ndarray) -> tuple[int, np.ndarray] | None:
        inside = DQ <= 2.0 * self.scale.c * self.scale.r
        counts = inside.sum(axis=1)
        hits = np.flatnonzero(2 * counts > Q.shape[0])
        if hits.size == 0:
            return None
        j = int(hits[0])
        return j, inside[j]

    def prepare(self, Q: np.ndarray):
        """Ball decision or hash sampler for node set ``Q`` (no randomness)."""
        DQ = self.D[np.ix_(Q, Q)]
        dense = self.dense_center(Q, DQ)
        if dense is not None:
            j, inside = dense
            return ("ball", int(Q[j]), Q[~inside])
        spec = build_weak_embedding(self.P.subset(Q), DQ, seed=self.l2l1_seed)
        images = evaluate_weak(spec, self.P.coords[Q])
        sampler = HashSampler(images, self.scale.r, self.scale.big_D, self.scale.c, spec)
        return ("hash", sampler)

    def node(self, Q: np.ndarray, level: int, tree: int, path: tuple, on_spine: bool) -> Node:
        self.stats.max_depth = max(self.stats.max_depth, level)
        if level >= self.params.level_cap or Q.shape[0] <= self.params.leaf_cap:
            self.stats.leaves += 1
            return Leaf(Q.copy())
        try:
            if on_spine:
                if level not in self.spine:
                    self.spine[level] = self.prepare(Q)
                prep = self.spine[level]
            else:
                prep = self.prepare(Q)
            if prep[0] == "hash":
                sampler = prep[1]
                seed = _node_seed(self.params.master_seed, tree + 1, path)
                h = sampler.sample(np.random.default_rng(seed), seed)
        except LSHError as e:
            raise type(e)(f"{e} [tree {tree}, node path {list(path)}]") from e
        if prep[0] == "ball":
            _, center, rest = prep
            self.stats.balls += 1
            return Ball(center, self.node(rest, level + 1, tree, path + (0,), on_spine))
        self.stats.hashes += 1
        self.stats.attempts += h.attempts
        keys = cut_keys(h.coords, h.thresholds, sampler.boxed)
        uniq, inv = np.unique(keys, return_inverse=True)
        children = [
            self.node(Q[inv == i], level + 1, tree, path + (i,), False) for i in range(uniq.shape[0])
        ]
        return HashNode(h, uniq, children)


def build_index(P: PointSet, params: BuildParams, dataset_path: str = "") -> Index:
    t0 = time.monotonic()
    wm = _working_metric(P.metric)
    D = pairwise_distances(P.with_metric(wm))
    resolved, scale = resolve_params(P, params, D)
    builder = _Builder(P, resolved, scale, D)
    root_set = np.arange(P.n, dtype=np.int64)
    roots = [builder.node(root_set, 0, t, (), True) for t in range(resolved.k_trees)]
    builder.stats.build_seconds = time.monotonic() - t0
    log.info(
        "built %d trees: %d leaves, %d balls, %d hashes, depth %d in %.2fs",
        len(roots), builder.stats.leaves, builder.stats.balls, builder.stats.hashes,
        builder.stats.max_depth, builder.stats.build_seconds,
    )
    return Index(resolved, scale, P, roots, builder.stats, str(dataset_path))


# queries

@dataclass(frozen=True)
class QueryOutcome:
    index: int | None
    distance: float | None
    tree: int | None
    visits: int

    @property
    def found(self) -> bool:
        return self.index is not None


def _descend(idx: Index, node: Node, q: np.ndarray, radius: float) -> tuple[int | None, int]:
    visits = 0
    coords = idx.dataset.coords
    metric = idx.scale.metric
    while True:
        visits += 1
        if isinstance(node, Leaf):
            if node.indices.size == 0:
                return None, visits
            d = cross_distances(coords[node.indices], q[None, :], metric)[:, 0]
            hit = np.flatnonzero(d <= radius)
            return (int(node.indices[hit[0]]) if hit.size else None), visits
        if isinstance(node, Ball):
            if cross_distances(coords[node.center][None, :], q[None, :], metric)[0, 0] <= radius:
                return node.center, visits
            node = node.child
            continue
        key = int(hash_keys(node.h, q)[0])
        node = node.table.get(key)
        if node is None:
            return None, visits


def query(idx: Index, q) -> QueryOutcome:
    q = check_point(q, idx.dataset.d, idx.dataset.metric)
    radius = idx.scale.return_radius
    visits = 0
    for t, root in enumerate(idx.roots):
        found, v = _descend(idx, root, q, radius)
        visits += v
        if found is not None:
            dist = distance(idx.dataset.coords[found], q, idx.dataset.metric)
            return QueryOutcome(found, dist, t, visits)
    return QueryOutcome(None, None, None, visits)


# serialization

def _write_params(w: Writer, p: BuildParams, s: WorkingScale):
    w.f64(p.r)
    w.f64(p.eps_exponent)
    w.f64(p.c)
    w.u32(p.k_trees)
    w.u32(p.level_cap)
    w.u32(p.leaf_cap)
    w.u64(p.master_seed)
    w.f64(p.aspect_cap)
    formats.write_metric(w, s.metric)
    for v in (s.r, s.c, s.big_D, s.delta, s.b):
        w.f64(v)


def _read_params(r: Reader) -> tuple[BuildParams, WorkingScale]:
    radius, eps, c = r.f64(), r.f64(), r.f64()
    k_trees, level_cap, leaf_cap = r.u32(), r.u32(), r.u32()
    seed, aspect = r.u64(), r.f64()
    params = BuildParams(radius, eps, c, k_trees, level_cap, leaf_cap, seed, aspect)
    metric = formats.read_metric(r)
    return params, WorkingScale(metric, r.f64(), r.f64(), r.f64(), r.f64(), r.f64())


_HP_FLOATS = ("r", "c", "big_D", "t_scale", "c_lsh", "beta", "delta", "p1", "p2", "p2_prime")


def _write_hash(w: Writer, h: EmpiricalHashFn):
    w.u32(h.k)
    for name in _HP_FLOATS:
        w.f64(getattr(h.params, name))
    w.u32(h.params.m)
    w.f64(h.load_bound)
    w.u64(h.rng_seed)
    w.u32(h.attempts)
    w.u32(h.box_center.shape[0])
    w.f64s(h.box_center)
    for coord, thr in zip(h.coords, h.thresholds):
        w.u32(int(coord))
        w.f64(float(thr))
    # node-local spec table with a single entry, then the reference into it
    w.u32(1)
    formats.write_spec(w, h.embedding)
    w.u32(0)


def _read_hash(r: Reader) -> EmpiricalHashFn:
    k = r.u32()
    vals = {name: r.f64() for name in _HP_FLOATS}
    m = r.u32()
    params = HashParams(k=k, m=m, **vals)
    load_bound, seed, attempts = r.f64(), r.u64(), r.u32()
    box = r.f64s(r.u32())
    coords = np.empty(k, dtype=np.int64)
    thresholds = np.empty(k)
    for j in range(k):
        coords[j] = r.u32()
        thresholds[j] = r.f64()
    table = [formats.read_spec(r) for _ in range(r.u32())]
    ref = r.u32()
    if ref >= len(table):
        raise FormatError("hash refers to a missing embedding spec")
    return EmpiricalHashFn(coords, thresholds, table[ref], box, params, load_bound, seed, attempts)


def _write_node(w: Writer, node: Node):
    if isinstance(node, Leaf):
        w.u8(_LEAF)
        w.u32(node.indices.shape[0])
        w.u32s(node.indices)
    elif isinstance(node, Ball):
        w.u8(_BALL)
        w.u32(node.center)
        _write_node(w, node.child)
    else:
        w.u8(_HASH)
        _write_hash(w, node.h)
        w.u32(len(node.children))
        words = key_words(node.h.k)
        for key, child in zip(node.keys, node.children):
            key = int(key)
            for j in range(words):
                w.u64((key >> (64 * j)) & 0xFFFFFFFFFFFFFFFF)
            _write_node(w, child)


def _read_node(r: Reader, n: int, counter: list) -> Node:
    counter[0] += 1
    kind = r.u8()
    if kind == _LEAF:
        idx = r.u32s(r.u32())
        if idx.size and idx.max() >= n:
            raise FormatError("leaf refers to a point outside the dataset")
        return Leaf(idx)
    if kind == _BALL:
        center = r.u32()
        if center >= n:
            raise FormatError("ball center outside the dataset")
        return Ball(center, _read_node(r, n, counter))
    if kind == _HASH:
        h = _read_hash(r)
        count = r.u32()
        words = key_words(h.k)
        keys = np.empty(count, dtype=np.uint64 if words == 1 else object)
        children = []
        for i in range(count):
            keys[i] = sum(r.u64() << (64 * j) for j in range(words))
            children.append(_read_node(r, n, counter))
        return HashNode(h, keys, children)
    raise FormatError(f"unknown node type {kind}")


def encode_index(idx: Index) -> bytes:
    w = Writer()
    w.raw(INDEX_MAGIC)
    w.u16(INDEX_VERSION)
    _write_params(w, idx.params, idx.scale)
    w.u64(formats.dataset_digest(idx.dataset))
    w.text(idx.dataset_path)
    st = idx.stats
    for v in (st.leaves, st.balls, st.hashes, st.max_depth):
        w.u32(v)
    w.u64(st.attempts)
    w.u64(st.nodes)
    w.u32(len(idx.roots))
    for root in idx.roots:
        _write_node(w, root)
    body = w.getvalue()
    return body + hashlib.blake2b(body, digest_size=8).digest()


def decode_index(data: bytes, dataset: PointSet | None = None, base_dir=None) -> Index:
    if len(data) < 6 or data[:4] != INDEX_MAGIC:
        raise FormatError("not an index file (bad magic)")
    version = int.from_bytes(data[4:6], "little")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    if len(data) < 14:
        raise FormatError("truncated stream")
    body, check = data[:-8], data[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != check:
        raise FormatError("checksum mismatch: index file is corrupted or truncated")
    r = Reader(body)
    r.take(6)
    params, scale = _read_params(r)
    digest = r.u64()
    path = r.text()
    stats = IndexStats(r.u32(), r.u32(), r.u32(), r.u32(), r.u64())
    total = r.u64()
    if dataset is None:
        if not path:
            raise FormatError("index carries no dataset path; pass the dataset explicitly")
        p = Path(path)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        dataset = formats.load_dataset(p)
    if formats.dataset_digest(dataset) != digest:
        raise FormatError("dataset digest does not match the one the index was built on")
    counter = [0]
    roots = [_read_node(r, dataset.n, counter) for _ in range(r.u32())]
    if not r.at_end():
        raise FormatError("trailing bytes after the last tree")
    if counter[0] != total or len(roots) != params.k_trees:
        raise FormatError("node or tree count mismatch")
    return Index(params, scale, dataset, roots, stats, path)


def save_index(idx: Index, sink) -> None:
    data = encode_index(idx)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)


def load_index(source, dataset: PointSet | None = None) -> Index:
    if hasattr(source, "read"):
        return decode_index(source.read(), dataset)
    source = Path(source)
    return decode_index(source.read_bytes(), dataset, base_dir=source.parent)


# structural audit

AUDIT_CHECKS = (
    "depth_cap",
    "leaf_contents",
    "leaf_size",
    "size_decay",
    "ball_majority",
    "ball_halving",
    "hash_dispersed",
    "hash_partition",
    "hash_load",
    "hash_width",
    "hash_calibration",
)


@dataclass
class AuditReport:
    violations: dict = field(default_factory=lambda: {name: [] for name in AUDIT_CHECKS})
    nodes_checked: int = 0

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def add(self, check: str, where: tuple, msg: str):
        self.violations[check].append(f"tree {where[0]} path {list(where[1])}: {msg}")

    def summary(self) -> dict:
        return {name: len(v) for name, v in self.violations.items()}


def audit_index(idx: Index) -> AuditReport:
    """Replay every tree from the full dataset and check each node's invariants."""
    P = idx.dataset.with_metric(idx.scale.metric)
    D = pairwise_distances(P)
    n = P.n
    p, s = idx.params, idx.scale
    ball_r = 2.0 * s.c * s.r
    rep = AuditReport()
    # trees share their top node sets, so the quadratic dense-ball scan is memoized
    dense_memo: dict[bytes, np.ndarray] = {}

    def visit(node: Node, Q: np.ndarray, level: int, where: tuple):
        rep.nodes_checked += 1
        if level > p.level_cap:
            rep.add("depth_cap", where, f"depth {level} > {p.level_cap}")
        if Q.shape[0] > n * s.b ** level * (1 + 1e-9) + 1e-9:
            rep.add("size_decay", where, f"|Q|={Q.shape[0]} > n b^{level}")
        if isinstance(node, Leaf):
            if not np.array_equal(np.sort(node.indices), Q):
                rep.add("leaf_contents", where, "stored points differ from the replayed set")
            if level < p.level_cap and Q.shape[0] > p.leaf_cap:
                rep.add("leaf_size", where, f"{Q.shape[0]} points above leaf cap below the level cap")
            return
        if level >= p.level_cap or Q.shape[0] <= p.leaf_cap:
            rep.add("leaf_size", where, "internal node where a leaf was required")
        memo_key = Q.tobytes()
        if memo_key not in dense_memo:
            inside = D[np.ix_(Q, Q)] <= ball_r
            dense_memo[memo_key] = np.flatnonzero(2 * inside.sum(axis=1) > Q.shape[0])
        dense = dense_memo[memo_key]
        path = where[1]
        if isinstance(node, Ball):
            pos = np.searchsorted(Q, node.center)
            if pos >= Q.shape[0] or Q[pos] != node.center:
                rep.add("ball_majority", where, "center not in node set")
                return
            if dense.size == 0 or dense[0] != pos:
                rep.add("ball_majority", where, "center is not the first majority ball")
            rest = Q[D[node.center, Q] > ball_r]
            if not 2 * rest.shape[0] < Q.shape[0]:
                rep.add("ball_halving", where, f"child {rest.shape[0]} not below half of {Q.shape[0]}")
            visit(node.child, rest, level + 1, (where[0], path + (0,)))
            return
        h = node.h
        if dense.size:
            rep.add("hash_dispersed", where, f"point {Q[dense[0]]} has a majority {ball_r:.4g}-ball")
        if not 1 <= h.k <= MAX_CUTS:
            rep.add("hash_width", where, f"k={h.k} outside [1, {MAX_CUTS}]")
        hp = h.params
        if 16.0 * hp.r / hp.t_scale > 0.5 or hp.rho > RHO_CONST * hp.big_D / hp.c:
            rep.add("hash_calibration", where, f"16r/t={16.0 * hp.r / hp.t_scale:.4g}, rho={hp.rho:.4g}")
        keys = hash_keys(h, P.coords[Q])
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if [int(k) for k in uniq] != [int(k) for k in node.keys]:
            rep.add("hash_partition", where, "bucket keys differ from stored children")
        if counts.max() > h.load_bound:
            rep.add("hash_load", where, f"bucket of {counts.max()} exceeds load bound {h.load_bound:.6g}")
        for i, key in enumerate(uniq):
            child = node.table.get(int(key))
            if child is not None:
                visit(child, Q[inv == i], level + 1, (where[0], path + (i,)))

    full = np.arange(n, dtype=np.int64)
    for t, root in enumerate(idx.roots):
        visit(root, full, 0, (t, ()))
    return rep
