"""HTTP surface: one POST endpoint per operation under /v1."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..lsh import LSHError
from ..schatten import ShiftSolverError
from . import schemas as S
from .service import Service


def create_app(service: Service | None = None) -> FastAPI:
    svc = service or Service()
    app = FastAPI(title="avgnns", version=__version__)

    @app.exception_handler(LSHError)
    @app.exception_handler(ShiftSolverError)
    async def _calibration(request: Request, exc: Exception):
        return JSONResponse(status_code=422, content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.exception_handler(ValueError)
    async def _bad_input(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.exception_handler(FileNotFoundError)
    async def _missing(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.get("/health", response_model=S.HealthResponse)
    def health():
        return svc.health()

    @app.post("/v1/generate", response_model=S.GenerateResponse)
    def generate(req: S.GenerateRequest):
        return svc.generate(req)

    @app.post("/v1/build", response_model=S.BuildResponse)
    def build(req: S.BuildRequest):
        return svc.build(req)

    @app.post("/v1/query", response_model=S.QueryResponse)
    def query(req: S.QueryRequest):
        return svc.query(req)

    @app.post("/v1/bench", response_model=S.BenchResponse)
    def bench(req: S.BenchRequest):
        return svc.bench(req)

    @app.post("/v1/verify", response_model=S.VerifyResponse)
    def verify(req: S.VerifyRequest):
        return svc.verify(req)

    @app.post("/v1/embed-stats", response_model=S.EmbedStatsResponse)
    def embed_stats(req: S.EmbedStatsRequest):
        return svc.embed_stats(req)

    @app.post("/v1/import-csv", response_model=S.ImportCsvResponse)
    def import_csv(req: S.ImportCsvRequest):
        return svc.import_csv(req)

    return app
