"""Operations behind the HTTP endpoints; also called in-process by the CLI."""

from __future__ import annotations

import threading
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import __version__, formats
from ..harness import embed_stats, gen_planted, load_instance, run_bench, save_instance
from ..index import BuildParams, Index, audit_index, build_index, encode_index, load_index, query
from ..metrics import MetricDescriptor, PointSet, distance
from . import schemas as S


def _metric(name: S.MetricName, p: float) -> MetricDescriptor:
    return MetricDescriptor.lp(p) if name == S.MetricName.lp else MetricDescriptor.schatten(p)


class Service:
    """Stateless apart from a cache of loaded indexes keyed by path and mtime."""

    def __init__(self):
        self._lock = threading.Lock()
        self._indexes: dict[tuple[str, int, str | None], Index] = {}

    def health(self) -> S.HealthResponse:
        return S.HealthResponse(version=__version__)

    def generate(self, req: S.GenerateRequest) -> S.GenerateResponse:
        metric = _metric(req.metric, req.p)
        inst = gen_planted(req.n, req.d, metric, req.r, req.c, req.seed, req.n_queries, req.query_scale)
        data_path, side = save_instance(inst, req.out)
        planted = [distance(q, inst.dataset.coords[j], metric) for q, j in zip(inst.queries, inst.planted)]
        return S.GenerateResponse(
            dataset_path=str(data_path), queries_path=str(side), n=req.n, d=req.d, c=inst.c,
            n_queries=inst.n_queries, max_planted_distance=max(planted, default=0.0),
            collisions=len(inst.collisions),
        )

    def build(self, req: S.BuildRequest) -> S.BuildResponse:
        data_path = Path(req.data).resolve()
        P = formats.load_dataset(data_path)
        params = BuildParams(
            r=req.r, eps_exponent=req.eps, c=req.c, k_trees=req.trees, level_cap=req.level_cap,
            leaf_cap=req.leaf_cap, master_seed=req.seed,
        )
        idx = build_index(P, params, dataset_path=str(data_path))
        blob = encode_index(idx)
        Path(req.out).write_bytes(blob)
        st = idx.stats
        return S.BuildResponse(
            index_path=str(Path(req.out).resolve()),
            params=asdict(idx.params),
            working_scale={"r": idx.scale.r, "c": idx.scale.c, "big_D": idx.scale.big_D,
                           "delta": idx.scale.delta, "b": idx.scale.b,
                           "snowflake_alpha": idx.scale.metric.snowflake_alpha},
            stats={"leaves": st.leaves, "balls": st.balls, "hashes": st.hashes,
                   "max_depth": st.max_depth, "attempts": st.attempts},
            space_bytes=len(blob),
            build_seconds=st.build_seconds,
        )

    def _index(self, path: str, data: str | None) -> Index:
        p = Path(path).resolve()
        key = (str(p), p.stat().st_mtime_ns, data)
        with self._lock:
            idx = self._indexes.get(key)
        if idx is None:
            dataset = formats.load_dataset(data) if data else None
            idx = load_index(p, dataset)
            with self._lock:
                self._indexes = {k: v for k, v in self._indexes.items() if k[0] != key[0]}
                self._indexes[key] = idx
        return idx

    def query(self, req: S.QueryRequest) -> S.QueryResponse:
        idx = self._index(req.index, req.data)
        if req.points is not None:
            pts = np.asarray(req.points, dtype=np.float64).reshape(len(req.points), -1)
        else:
            pts = formats.read_points(req.point_file, idx.dataset.d)
        hits = []
        for i, q in enumerate(pts):
            out = query(idx, q)
            hits.append(S.QueryHit(query=i, found=out.found, index=out.index, distance=out.distance,
                                   tree=out.tree, visits=out.visits))
        return S.QueryResponse(return_radius=idx.return_radius, results=hits)

    def bench(self, req: S.BenchRequest) -> S.BenchResponse:
        inst = load_instance(req.instance)
        params = BuildParams(
            r=inst.r, eps_exponent=req.eps, c=req.c, k_trees=req.trees,
            master_seed=inst.seed if req.seed is None else req.seed,
        )
        report = run_bench(inst, params, workers=req.workers, scaling=req.scaling, audit=req.audit)
        return S.BenchResponse(report=report)

    def verify(self, req: S.VerifyRequest) -> S.VerifyResponse:
        idx = self._index(req.index, req.data)
        rep = audit_index(idx)
        return S.VerifyResponse(ok=rep.ok, nodes_checked=rep.nodes_checked, violations=rep.summary(),
                                details={k: v[:20] for k, v in rep.violations.items() if v})

    def embed_stats(self, req: S.EmbedStatsRequest) -> S.EmbedStatsResponse:
        return S.EmbedStatsResponse(stats=embed_stats(formats.load_dataset(req.data), req.q))

    def import_csv(self, req: S.ImportCsvRequest) -> S.ImportCsvResponse:
        P = PointSet(formats.read_csv_points(req.csv), _metric(req.metric, req.p))
        formats.save_dataset(P, req.out)
        return S.ImportCsvResponse(dataset_path=str(Path(req.out).resolve()), n=P.n, d=P.d)


__all__ = ["Service"]
