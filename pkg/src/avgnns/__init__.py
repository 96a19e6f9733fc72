"""Approximate near-neighbor search over l_p and Schatten-p spaces via
average-distortion embeddings into l_1 and data-dependent hashing."""

__version__ = "0.1.0"

from .index import BuildParams, Index, audit_index, build_index, load_index, query, save_index
from .metrics import MetricDescriptor, MetricKind, PointSet, brute_force_nn, distance

__all__ = [
    "__version__",
    "BuildParams",
    "Index",
    "MetricDescriptor",
    "MetricKind",
    "PointSet",
    "audit_index",
    "brute_force_nn",
    "build_index",
    "distance",
    "load_index",
    "query",
    "save_index",
]
