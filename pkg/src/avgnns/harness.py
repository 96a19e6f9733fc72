"""Planted instances, benchmarking against brute force, embedding statistics."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import formats, lsh, weak
from .index import (
    LEAF_CAP,
    TREE_MULTIPLE,
    BuildParams,
    Index,
    audit_index,
    build_index,
    default_c,
    encode_index,
    query,
)
from .mazur import build_lp_embedding, evaluate_embedding, measure_q_avg_distortion
from .metrics import (
    MetricDescriptor,
    MetricKind,
    PointSet,
    cross_distances,
    distance,
    distances_to,
    pairwise_distances,
)
from .schatten import build_schatten_embedding, evaluate_schatten
from .weak import build_weak_embedding, measure_weak_distortion

REPORT_SCHEMA = 1
INSTANCE_SCHEMA = 1
DEFAULT_SPREAD = 4.0


@dataclass
class PlantedInstance:
    dataset: PointSet
    queries: np.ndarray
    planted: np.ndarray
    r: float
    c: float
    seed: int
    collisions: list = field(default_factory=list)

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]


def _unit_directions(rng: np.random.Generator, count: int, d: int, metric: MetricDescriptor) -> np.ndarray:
    base = metric.with_alpha(1.0)
    if metric.kind == MetricKind.SCHATTEN:
        s = math.isqrt(d)
        A = rng.normal(size=(count, s, s))
        V = (0.5 * (A + A.transpose(0, 2, 1))).reshape(count, d)
    else:
        V = rng.normal(size=(count, d))
    norms = cross_distances(V, np.zeros((1, d)), base)[:, 0]
    return V / norms[:, None]


def gen_planted(n: int, d: int, metric: MetricDescriptor, r: float = 1.0, c: float | None = None,
                seed: int = 0, n_queries: int = 100, query_scale: float = 1.0,
                spread: float = DEFAULT_SPREAD) -> PlantedInstance:
    """Seeded dataset plus queries, each within ``r`` of a planted dataset point.

    l_p data is uniform on a box of side ``spread * c * r``; Schatten data is
    symmetrized Gaussian matrices at the same scale. Queries move a random
    dataset point by a random direction of length ``u * query_scale * r`` with
    ``u`` uniform on [0, 1]. ``collisions`` lists every other dataset point
    within ``c * r`` of a query.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if d < 1:
        raise ValueError("need d >= 1")
    if not r > 0:
        raise ValueError("r must be positive")
    if c is None:
        c = default_c(metric)
    if not c > 1:
        raise ValueError("c must exceed 1")
    if n_queries < 0 or not 0.0 <= query_scale <= 1.0:
        raise ValueError("need n_queries >= 0 and query_scale in [0, 1]")
    if metric.kind == MetricKind.SCHATTEN and math.isqrt(d) ** 2 != d:
        raise ValueError("Schatten instances need d = side**2")
    rng = np.random.default_rng(seed)
    side = spread * c * r
    if metric.kind == MetricKind.LP:
        X = rng.uniform(0.0, side, size=(n, d))
    else:
        s = math.isqrt(d)
        A = rng.normal(size=(n, s, s))
        X = (0.5 * (A + A.transpose(0, 2, 1)) * side).reshape(n, d)
    P = PointSet(X, metric)
    planted = rng.integers(0, n, size=n_queries)
    dirs = _unit_directions(rng, n_queries, d, metric)
    lengths = rng.uniform(0.0, 1.0, size=n_queries) * query_scale * r ** (1.0 / metric.snowflake_alpha)
    Qs = P.coords[planted] + dirs * lengths[:, None]
    if metric.kind == MetricKind.SCHATTEN:
        Qs = PointSet(Qs, metric).coords.copy()
    for i in range(n_queries):
        # guard against roundoff pushing a query just past r
        while distance(Qs[i], P.coords[planted[i]], metric) > r:
            Qs[i] = P.coords[planted[i]] + (Qs[i] - P.coords[planted[i]]) * (1.0 - 1e-12)
    collisions = []
    if n_queries:
        Dq = cross_distances(Qs, P.coords, metric)
        for i in range(n_queries):
            for j in np.flatnonzero(Dq[i] <= c * r):
                if j != planted[i]:
                    collisions.append({"query": i, "point": int(j), "distance": float(Dq[i, j])})
    return PlantedInstance(P, Qs, planted.astype(np.int64), float(r), float(c), int(seed), collisions)


def queries_path(dataset_path) -> Path:
    return Path(str(dataset_path) + ".queries.json")


def save_instance(inst: PlantedInstance, path) -> tuple[Path, Path]:
    path = Path(path)
    formats.save_dataset(inst.dataset, path)
    side = queries_path(path)
    side.write_text(json.dumps({
        "schema": INSTANCE_SCHEMA,
        "seed": inst.seed,
        "r": inst.r,
        "c": inst.c,
        "queries": inst.queries.tolist(),
        "planted": inst.planted.tolist(),
        "collisions": inst.collisions,
    }))
    return path, side


def load_instance(path) -> PlantedInstance:
    path = Path(path)
    P = formats.load_dataset(path)
    side = queries_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing query file {side}")
    meta = json.loads(side.read_text())
    if meta.get("schema") != INSTANCE_SCHEMA:
        raise ValueError(f"unsupported instance schema {meta.get('schema')}")
    Qs = np.asarray(meta["queries"], dtype=np.float64).reshape(-1, P.d)
    return PlantedInstance(P, Qs, np.asarray(meta["planted"], dtype=np.int64), float(meta["r"]),
                           float(meta["c"]), int(meta["seed"]), meta.get("collisions", []))


# benchmarking

def calibration_constants() -> dict:
    return {
        "leaf_cap": LEAF_CAP,
        "tree_multiple": TREE_MULTIPLE,
        "alpha": weak.ALPHA,
        "ricard_const": weak.RICARD_CONST,
        "rho_const": lsh.RHO_CONST,
        "max_attempts": lsh.MAX_ATTEMPTS,
        "max_cuts": lsh.MAX_CUTS,
    }


def _percentile(values, q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


def _one_query(idx: Index, inst: PlantedInstance, i: int) -> dict:
    q = inst.queries[i]
    t0 = time.perf_counter()
    try:
        out = query(idx, q)
    except Exception as e:  # recorded per query, never fatal
        return {"query": i, "status": "error", "error": f"{type(e).__name__}: {e}",
                "seconds": time.perf_counter() - t0}
    seconds = time.perf_counter() - t0
    nn_dists = distances_to(idx.dataset, q)
    nn = int(np.argmin(nn_dists))
    nn_dist = float(nn_dists[nn])
    radius = idx.return_radius
    rec = {
        "query": i,
        "planted": int(inst.planted[i]),
        "nn_index": nn,
        "nn_distance": nn_dist,
        "returned_index": out.index,
        "returned_distance": out.distance,
        "tree": out.tree,
        "visits": out.visits,
        "seconds": seconds,
    }
    if out.found:
        rec["status"] = "ok" if out.distance <= radius * (1 + 1e-12) else "out_of_radius"
        rec["approx_ratio"] = out.distance / max(nn_dist, inst.r)
    else:
        rec["status"] = "miss" if nn_dist <= radius else "no_returnable_point"
        rec["approx_ratio"] = None
    return rec


def run_bench(inst: PlantedInstance, params: BuildParams, workers: int = 1,
              scaling: list[int] | None = None, audit: bool = True) -> dict:
    """Build, run every query, compare with brute force and audit the structure.

    Everything except the ``timings`` block is a deterministic function of the
    instance and ``params``.
    """
    t0 = time.monotonic()
    idx = build_index(inst.dataset, params)
    build_seconds = time.monotonic() - t0
    ids = range(inst.n_queries)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda i: _one_query(idx, inst, i), ids))
    else:
        records = [_one_query(idx, inst, i) for i in ids]
    records.sort(key=lambda rec: rec["query"])
    seconds = [rec.pop("seconds") for rec in records]
    ok = sum(rec["status"] == "ok" for rec in records)
    total = len(records)
    ratios = [rec["approx_ratio"] for rec in records if rec.get("approx_ratio") is not None]
    visits = [rec["visits"] for rec in records if "visits" in rec]
    report = {
        "schema_version": REPORT_SCHEMA,
        "instance": {
            "n": inst.dataset.n, "d": inst.dataset.d, "metric": _metric_dict(inst.dataset.metric),
            "r": inst.r, "c": inst.c, "seed": inst.seed, "n_queries": total,
            "collisions": len(inst.collisions),
        },
        "params": asdict(idx.params),
        "working_scale": _scale_dict(idx),
        "constants": calibration_constants(),
        "return_radius": idx.return_radius,
        "success_rate": ok / total if total else 1.0,
        "status_counts": {s: sum(rec["status"] == s for rec in records)
                          for s in ("ok", "miss", "no_returnable_point", "out_of_radius", "error")},
        "max_approx_ratio": max(ratios) if ratios else None,
        "approx_ratio_bound": idx.return_radius / inst.r,
        "mean_node_visits": float(np.mean(visits)) if visits else 0.0,
        "max_node_visits": int(max(visits)) if visits else 0,
        "space_bytes": len(encode_index(idx)),
        "index_stats": {
            "leaves": idx.stats.leaves, "balls": idx.stats.balls, "hashes": idx.stats.hashes,
            "max_depth": idx.stats.max_depth, "attempts": idx.stats.attempts,
        },
        "queries": records,
        "timings": {
            "build_seconds": build_seconds,
            "query_seconds_total": float(np.sum(seconds)),
            "query_p50_seconds": _percentile(seconds, 50),
            "query_p95_seconds": _percentile(seconds, 95),
        },
    }
    if audit:
        rep = audit_index(idx)
        report["audit"] = {"ok": rep.ok, "nodes_checked": rep.nodes_checked, "violations": rep.summary(),
                           "details": {k: v[:10] for k, v in rep.violations.items() if v}}
    if scaling:
        report["scaling"] = scaling_sweep(scaling, inst.dataset.d, inst.dataset.metric, params, inst.r, inst.seed)
    return report


def _metric_dict(m: MetricDescriptor) -> dict:
    return {"kind": "lp" if m.kind == MetricKind.LP else "schatten", "p": m.p, "alpha": m.snowflake_alpha}


def _scale_dict(idx: Index) -> dict:
    s = idx.scale
    return {"metric": _metric_dict(s.metric), "r": s.r, "c": s.c, "big_D": s.big_D, "delta": s.delta, "b": s.b}


def scaling_sweep(ns: list[int], d: int, metric: MetricDescriptor, params: BuildParams,
                  r: float = 1.0, seed: int = 0, n_queries: int = 100) -> dict:
    """Mean query node visits as ``n`` grows; logged for inspection, not asserted."""
    rows = []
    for n in sorted(ns):
        inst = gen_planted(n, d, metric, r, params.c, seed, n_queries)
        idx = build_index(inst.dataset, BuildParams(
            r=r, eps_exponent=params.eps_exponent, c=params.c, leaf_cap=params.leaf_cap,
            master_seed=params.master_seed, aspect_cap=params.aspect_cap,
        ))
        outs = [query(idx, q) for q in inst.queries]
        rows.append({
            "n": n,
            "k_trees": idx.params.k_trees,
            "mean_node_visits": float(np.mean([o.visits for o in outs])),
            "success_rate": float(np.mean([o.found for o in outs])),
        })
    slopes = []
    for a, b in zip(rows, rows[1:]):
        slopes.append(math.log(b["mean_node_visits"] / a["mean_node_visits"]) / math.log(b["n"] / a["n"]))
    return {"rows": rows, "log_log_slopes": slopes, "sublinear": all(s < 1.0 for s in slopes)}


# embedding statistics

def _report_dict(rep) -> dict:
    return {"max_pair_expansion": rep.max_pair_expansion, "sum_ratio_q": rep.sum_ratio_q,
            "d_empirical": rep.d_empirical}


def embed_stats(P: PointSet, q: float = 1.0) -> dict:
    """Distortion of each embedding builder on ``P``."""
    out = {"n": P.n, "d": P.d, "metric": _metric_dict(P.metric), "q": q, "embeddings": []}
    if P.metric.kind == MetricKind.LP:
        spec = build_lp_embedding(P, q)
        rep = measure_q_avg_distortion(P, evaluate_embedding(spec, P.coords), q, q)
        out["embeddings"].append({"embedding": "lp_mazur", "target_norm": q, "lip_bound": spec.lip_bound,
                                  **_report_dict(rep)})
        weak_src = P
    else:
        snow = P.with_metric(P.metric.with_alpha(P.metric.p / 2.0))
        spec = build_schatten_embedding(P)
        rep = measure_q_avg_distortion(snow, evaluate_schatten(spec, P.coords), q, 2.0)
        out["embeddings"].append({"embedding": "schatten_mazur", "target_norm": 2.0,
                                  "shift_residual": spec.residual, **_report_dict(rep)})
        weak_src = snow
    D = pairwise_distances(weak_src)
    wspec = build_weak_embedding(weak_src, D)
    out["embeddings"].append({
        "embedding": "weak_l1",
        "variant": wspec.variant.name.lower(),
        "lip_bound": wspec.lip_bound,
        "weak_distortion": measure_weak_distortion(weak_src, wspec, D),
    })
    return out
