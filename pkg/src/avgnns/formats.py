"""Little-endian binary records: dataset files and embedding specs.

Dataset file::

    b"ADNN" | u16 version | u64 n | u64 d | u8 kind | f64 p | f64 alpha | n*d f64

Embedding spec records are tagged by a leading u8: 1 shifted Mazur, 2 weak
embedding, 3 Schatten Mazur.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .mazur import ShiftedMazurSpec, mazur_lip_bound
from .metrics import MetricDescriptor, MetricKind, PointSet
from .schatten import SchattenMazurSpec
from .weak import Variant, WeakEmbeddingSpec

DATASET_MAGIC = b"ADNN"
DATASET_VERSION = 1

TAG_MAZUR = 1
TAG_WEAK = 2
TAG_SCHATTEN = 3

_NONE_U32 = 0xFFFFFFFF


class FormatError(ValueError):
    pass


class Writer:
    def __init__(self):
        self.buf = bytearray()

    def raw(self, b: bytes):
        self.buf += b

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u16(self, v: int):
        self.buf += struct.pack("<H", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def u64(self, v: int):
        self.buf += struct.pack("<Q", v)

    def f64(self, v: float):
        self.buf += struct.pack("<d", v)

    def f64s(self, a):
        self.buf += np.ascontiguousarray(a, dtype="<f8").tobytes()

    def u32s(self, a):
        self.buf += np.ascontiguousarray(a, dtype="<u4").tobytes()

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf += b

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError("truncated stream")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def _unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]

    def u8(self) -> int:
        return self._unpack("<B")

    def u16(self) -> int:
        return self._unpack("<H")

    def u32(self) -> int:
        return self._unpack("<I")

    def u64(self) -> int:
        return self._unpack("<Q")

    def f64(self) -> float:
        return self._unpack("<d")

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def u32s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.int64)

    def text(self) -> str:
        return bytes(self.take(self.u32())).decode("utf-8")

    def at_end(self) -> bool:
        return self.pos == len(self.data)


# datasets

def encode_dataset(P: PointSet) -> bytes:
    w = Writer()
    w.raw(DATASET_MAGIC)
    w.u16(DATASET_VERSION)
    w.u64(P.n)
    w.u64(P.d)
    w.u8(int(P.metric.kind))
    w.f64(P.metric.p)
    w.f64(P.metric.snowflake_alpha)
    w.f64s(P.coords)
    return w.getvalue()


def decode_dataset(data: bytes) -> PointSet:
    r = Reader(data)
    if bytes(r.take(4)) != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    version = r.u16()
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    n, d = r.u64(), r.u64()
    kind = r.u8()
    if kind not in (0, 1):
        raise FormatError(f"unknown metric kind {kind}")
    metric = MetricDescriptor(MetricKind(kind), r.f64(), r.f64())
    coords = r.f64s(n * d).reshape(n, d)
    if not r.at_end():
        raise FormatError("trailing bytes after dataset")
    return PointSet(coords, metric)


def dataset_digest(P: PointSet) -> int:
    return int.from_bytes(hashlib.blake2b(encode_dataset(P), digest_size=8).digest(), "little")


def save_dataset(P: PointSet, path) -> None:
    Path(path).write_bytes(encode_dataset(P))


def load_dataset(path) -> PointSet:
    return decode_dataset(Path(path).read_bytes())


def read_csv_points(path) -> np.ndarray:
    """One point per row; blank lines and rows starting with '#' are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise FormatError(f"no points in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"rows of differing width in {path}")
    return np.asarray(rows, dtype=np.float64)


def read_points(path, d: int | None = None) -> np.ndarray:
    """Query points from a dataset file, a .npy array or a CSV file."""
    path = Path(path)
    head = path.read_bytes()[:4]
    if head == DATASET_MAGIC:
        pts = load_dataset(path).coords
    elif path.suffix == ".npy":
        pts = np.load(path)
    else:
        pts = read_csv_points(path)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if d is not None and pts.shape[1] != d:
        raise FormatError(f"points have {pts.shape[1]} coordinates, expected {d}")
    return pts


# embedding specs

def write_metric(w: Writer, m: MetricDescriptor):
    w.u8(int(m.kind))
    w.f64(m.p)
    w.f64(m.snowflake_alpha)


def read_metric(r: Reader) -> MetricDescriptor:
    kind = r.u8()
    return MetricDescriptor(MetricKind(kind), r.f64(), r.f64())


def write_spec(w: Writer, spec) -> None:
    if isinstance(spec, ShiftedMazurSpec):
        w.u8(TAG_MAZUR)
        w.f64(spec.p)
        w.f64(spec.q)
        w.u32(spec.d)
        w.f64s(spec.shift)
    elif isinstance(spec, SchattenMazurSpec):
        w.u8(TAG_SCHATTEN)
        w.f64(spec.p)
        w.u32(spec.d)
        w.f64s(spec.shift_T)
        w.f64(spec.residual)
        w.f64(spec.target_eps)
    elif isinstance(spec, WeakEmbeddingSpec):
        w.u8(TAG_WEAK)
        w.u8(int(spec.variant))
        write_metric(w, spec.metric)
        w.f64(spec.lip_bound)
        w.f64(spec.alpha_const)
        w.u32(_NONE_U32 if spec.center_index < 0 else spec.center_index)
        w.f64(spec.s_star)
        if spec.variant == Variant.RADIAL:
            w.u32(spec.center.shape[0])
            w.f64s(spec.center)
        else:
            write_spec(w, spec.sub)
        w.u8(0 if spec.l2l1_seed is None else 1)
        if spec.l2l1_seed is not None:
            w.u64(spec.l2l1_seed)
        if spec.q_subset_indices is None:
            w.u32(_NONE_U32)
        else:
            w.u32(spec.q_subset_indices.shape[0])
            w.u32s(spec.q_subset_indices)
    else:
        raise TypeError(f"cannot serialize {type(spec).__name__}")


def read_spec(r: Reader):
    tag = r.u8()
    if tag == TAG_MAZUR:
        p, q = r.f64(), r.f64()
        d = r.u32()
        return ShiftedMazurSpec(p, q, r.f64s(d), mazur_lip_bound(p, q))
    if tag == TAG_SCHATTEN:
        p = r.f64()
        d = r.u32()
        T = r.f64s(d * d).reshape(d, d)
        return SchattenMazurSpec(p, d, T, r.f64(), r.f64())
    if tag == TAG_WEAK:
        variant = Variant(r.u8())
        metric = read_metric(r)
        lip, alpha_const = r.f64(), r.f64()
        ci = r.u32()
        s_star = r.f64()
        center = sub = None
        if variant == Variant.RADIAL:
            center = r.f64s(r.u32())
        else:
            sub = read_spec(r)
        seed = r.u64() if r.u8() else None
        nq = r.u32()
        q_idx = None if nq == _NONE_U32 else r.u32s(nq)
        return WeakEmbeddingSpec(
            variant, metric, lip, center=center, sub=sub, l2l1_seed=seed, q_subset_indices=q_idx,
            center_index=-1 if ci == _NONE_U32 else ci, s_star=s_star, alpha_const=alpha_const,
        )
    raise FormatError(f"unknown embedding spec tag {tag}")


def encode_spec(spec) -> bytes:
    w = Writer()
    write_spec(w, spec)
    return w.getvalue()


def decode_spec(data: bytes):
    r = Reader(data)
    spec = read_spec(r)
    if not r.at_end():
        raise FormatError("trailing bytes after embedding spec")
    return spec
