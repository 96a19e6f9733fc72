"""Request and response models shared by the HTTP service and the CLI."""

from __future__ import annotations

from enum import Enum
from typing import Any

from pydantic import BaseModel, Field, model_validator


class MetricName(str, Enum):
    lp = "lp"
    schatten = "schatten"


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class GenerateRequest(BaseModel):
    n: int = Field(2000, ge=2)
    d: int = Field(20, ge=1)
    metric: MetricName = MetricName.lp
    p: float = Field(4.0, ge=1.0)
    r: float = Field(1.0, gt=0.0)
    c: float | None = Field(None, gt=1.0)
    seed: int = Field(17, ge=0)
    out: str
    n_queries: int = Field(100, ge=0)
    query_scale: float = Field(1.0, ge=0.0, le=1.0)


class GenerateResponse(BaseModel):
    dataset_path: str
    queries_path: str
    n: int
    d: int
    c: float
    n_queries: int
    max_planted_distance: float
    collisions: int


class BuildRequest(BaseModel):
    data: str
    r: float = Field(..., gt=0.0)
    eps: float = Field(0.5, gt=0.0, le=1.0)
    c: float | None = Field(None, gt=1.0)
    trees: int | None = Field(None, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    out: str
    level_cap: int | None = Field(None, ge=1)
    leaf_cap: int = Field(100, ge=1)


class BuildResponse(BaseModel):
    index_path: str
    params: dict[str, Any]
    working_scale: dict[str, Any]
    stats: dict[str, Any]
    space_bytes: int
    build_seconds: float


class QueryRequest(BaseModel):
    index: str
    points: list[list[float]] | None = None
    point_file: str | None = None
    data: str | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.points is None) == (self.point_file is None):
            raise ValueError("give exactly one of points or point_file")
        return self


class QueryHit(BaseModel):
    query: int
    found: bool
    index: int | None = None
    distance: float | None = None
    tree: int | None = None
    visits: int


class QueryResponse(BaseModel):
    return_radius: float
    results: list[QueryHit]


class BenchRequest(BaseModel):
    instance: str
    eps: float = Field(0.5, gt=0.0, le=1.0)
    c: float | None = Field(None, gt=1.0)
    seed: int | None = Field(None, ge=0)
    trees: int | None = Field(None, ge=1)
    workers: int = Field(1, ge=1)
    scaling: list[int] | None = None
    audit: bool = True


class BenchResponse(BaseModel):
    report: dict[str, Any]


class VerifyRequest(BaseModel):
    index: str
    data: str | None = None


class VerifyResponse(BaseModel):
    ok: bool
    nodes_checked: int
    violations: dict[str, int]
    details: dict[str, list[str]]


class EmbedStatsRequest(BaseModel):
    data: str
    q: float = Field(1.0, ge=1.0)


class EmbedStatsResponse(BaseModel):
    stats: dict[str, Any]


class ImportCsvRequest(BaseModel):
    csv: str
    metric: MetricName = MetricName.lp
    p: float = Field(2.0, ge=1.0)
    out: str


class ImportCsvResponse(BaseModel):
    dataset_path: str
    n: int
    d: int
