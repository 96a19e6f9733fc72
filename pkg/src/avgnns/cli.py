"""Command-line client. Runs operations in-process, or against a running
service when ``--server`` (or ``AVGNNS_SERVER``) is set."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import BaseModel, ValidationError

from .api import schemas as S

ENDPOINTS = {
    "generate": S.GenerateResponse,
    "build": S.BuildResponse,
    "query": S.QueryResponse,
    "bench": S.BenchResponse,
    "verify": S.VerifyResponse,
    "embed-stats": S.EmbedStatsResponse,
    "import-csv": S.ImportCsvResponse,
}


class Client:
    def __init__(self, server: str | None = None):
        self.server = server.rstrip("/") if server else None
        self._svc = None

    def call(self, endpoint: str, req: BaseModel) -> BaseModel:
        if self.server:
            import httpx

            resp = httpx.post(f"{self.server}/v1/{endpoint}", json=req.model_dump(mode="json"), timeout=None)
            if resp.status_code >= 400:
                raise RuntimeError(f"server returned {resp.status_code}: {resp.json().get('detail')}")
            return ENDPOINTS[endpoint].model_validate(resp.json())
        if self._svc is None:
            from .api.service import Service

            self._svc = Service()
        return getattr(self._svc, endpoint.replace("-", "_"))(req)


def _abs(path: str | None) -> str | None:
    # paths travel to the server, which may run elsewhere in the filesystem
    return None if path is None else str(Path(path).resolve())


def _emit(obj, out: str | None = None, as_json: bool = True):
    text = json.dumps(obj, indent=2) if as_json else obj
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _scaling(s: str | None) -> list[int] | None:
    return None if not s else [int(v) for v in s.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avgnns", description=__doc__)
    ap.add_argument("--server", default=os.environ.get("AVGNNS_SERVER"), help="service URL; in-process if unset")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a planted instance")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--metric", choices=["lp", "schatten"], default="lp")
    g.add_argument("--p", type=float, default=4.0)
    g.add_argument("--r", type=float, default=1.0)
    g.add_argument("--c", type=float, default=None)
    g.add_argument("--seed", type=int, default=17)
    g.add_argument("--queries", type=int, default=100)
    g.add_argument("--query-scale", type=float, default=1.0)
    g.add_argument("--out", required=True)

    b = sub.add_parser("build", help="build an index over a dataset file")
    b.add_argument("--data", required=True)
    b.add_argument("--r", type=float, required=True)
    b.add_argument("--eps", type=float, default=0.5)
    b.add_argument("--c", type=float, default=None)
    b.add_argument("--trees", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--level-cap", type=int, default=None)
    b.add_argument("--leaf-cap", type=int, default=100)
    b.add_argument("--out", required=True)

    q = sub.add_parser("query", help="answer queries from a point file (dataset, .npy or CSV)")
    q.add_argument("--index", required=True)
    q.add_argument("--point-file", required=True)
    q.add_argument("--data", default=None, help="dataset file, if not at the path stored in the index")
    q.add_argument("--out", default=None)

    be = sub.add_parser("bench", help="benchmark a planted instance against brute force")
    be.add_argument("--instance", required=True)
    be.add_argument("--eps", type=float, default=0.5)
    be.add_argument("--c", type=float, default=None)
    be.add_argument("--seed", type=int, default=None)
    be.add_argument("--trees", type=int, default=None)
    be.add_argument("--workers", type=int, default=1)
    be.add_argument("--scaling", default=None, help="comma-separated n values for a node-visit sweep")
    be.add_argument("--no-audit", action="store_true")
    be.add_argument("--json", action="store_true", help="print the full JSON report")
    be.add_argument("--out", default=None)

    v = sub.add_parser("verify", help="structural audit of an index; exit 1 on any violation")
    v.add_argument("--index", required=True)
    v.add_argument("--data", default=None)

    e = sub.add_parser("embed-stats", help="distortion of each embedding on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--q", type=float, default=1.0)
    e.add_argument("--json", action="store_true")

    i = sub.add_parser("import-csv", help="convert a CSV of points into a dataset file")
    i.add_argument("--csv", required=True)
    i.add_argument("--metric", choices=["lp", "schatten"], default="lp")
    i.add_argument("--p", type=float, default=2.0)
    i.add_argument("--out", required=True)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return ap


def _bench_summary(rep: dict) -> str:
    t = rep["timings"]
    lines = [
        f"success_rate      {rep['success_rate']:.3f}  ({rep['status_counts']})",
        f"max approx ratio  {rep['max_approx_ratio']}  (bound {rep['approx_ratio_bound']:.6g})",
        f"mean node visits  {rep['mean_node_visits']:.3f}",
        f"space             {rep['space_bytes']} bytes",
        f"build             {t['build_seconds']:.3f} s",
        f"query p50/p95     {t['query_p50_seconds'] * 1e3:.3f} / {t['query_p95_seconds'] * 1e3:.3f} ms",
    ]
    if "audit" in rep:
        lines.append(f"audit             {'pass' if rep['audit']['ok'] else 'FAIL'} {rep['audit']['violations']}")
    return "\n".join(lines)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.cmd == "serve":
        import uvicorn

        from .api import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    client = Client(args.server)
    if args.cmd == "gen":
        res = client.call("generate", S.GenerateRequest(
            n=args.n, d=args.d, metric=args.metric, p=args.p, r=args.r, c=args.c, seed=args.seed,
            out=_abs(args.out), n_queries=args.queries, query_scale=args.query_scale))
        _emit(res.model_dump(mode="json"))
    elif args.cmd == "build":
        res = client.call("build", S.BuildRequest(
            data=_abs(args.data), r=args.r, eps=args.eps, c=args.c, trees=args.trees, seed=args.seed,
            out=_abs(args.out), level_cap=args.level_cap, leaf_cap=args.leaf_cap))
        _emit(res.model_dump(mode="json"))
    elif args.cmd == "query":
        res = client.call("query", S.QueryRequest(
            index=_abs(args.index), point_file=_abs(args.point_file), data=_abs(args.data)))
        _emit(res.model_dump(mode="json"), args.out)
    elif args.cmd == "bench":
        res = client.call("bench", S.BenchRequest(
            instance=_abs(args.instance), eps=args.eps, c=args.c, seed=args.seed, trees=args.trees,
            workers=args.workers, scaling=_scaling(args.scaling), audit=not args.no_audit))
        if args.json:
            _emit(res.report, args.out)
        else:
            _emit(_bench_summary(res.report), args.out, as_json=False)
    elif args.cmd == "verify":
        res = client.call("verify", S.VerifyRequest(index=_abs(args.index), data=_abs(args.data)))
        _emit(res.model_dump(mode="json"))
        return 0 if res.ok else 1
    elif args.cmd == "embed-stats":
        res = client.call("embed-stats", S.EmbedStatsRequest(data=_abs(args.data), q=args.q))
        if args.json:
            _emit(res.stats)
        else:
            for emb in res.stats["embeddings"]:
                print("  ".join(f"{k}={v}" for k, v in emb.items()))
    elif args.cmd == "import-csv":
        res = client.call("import-csv", S.ImportCsvRequest(
            csv=_abs(args.csv), metric=args.metric, p=args.p, out=_abs(args.out)))
        _emit(res.model_dump(mode="json"))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ValidationError, ValueError, OSError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
