import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from avgnns.formats import (
    FormatError,
    Reader,
    Writer,
    dataset_digest,
    decode_dataset,
    decode_spec,
    encode_dataset,
    encode_spec,
    load_dataset,
    read_csv_points,
    read_points,
    save_dataset,
)
from avgnns.mazur import build_lp_embedding
from avgnns.metrics import MetricDescriptor, PointSet
from avgnns.schatten import build_schatten_embedding
from avgnns.weak import Variant, build_weak_embedding, evaluate_weak

from conftest import line, sym_cloud


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestPrimitives:
    def test_round_trip(self):
        w = Writer()
        w.u8(7)
        w.u16(513)
        w.u32(2 ** 31)
        w.u64(2 ** 63 + 5)
        w.f64(-0.1)
        w.text("päth")
        w.f64s([1.5, 2.5])
        w.u32s([3, 4])
        r = Reader(w.getvalue())
        assert (r.u8(), r.u16(), r.u32(), r.u64(), r.f64(), r.text()) == (7, 513, 2 ** 31, 2 ** 63 + 5, -0.1, "päth")
        assert r.f64s(2).tolist() == [1.5, 2.5] and r.u32s(2).tolist() == [3, 4]
        assert r.at_end()

    def test_little_endian(self):
        w = Writer()
        w.u32(1)
        assert w.getvalue() == b"\x01\x00\x00\x00"

    def test_truncated(self):
        with pytest.raises(FormatError, match="truncated"):
            Reader(b"\x01\x02").u32()


class TestDataset:
    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)), elements=finite),
           st.sampled_from([1.0, 2.0, 3.5]))
    def test_round_trip(self, X, p):
        P = PointSet(X, MetricDescriptor.lp(p))
        back = decode_dataset(encode_dataset(P))
        assert np.array_equal(back.coords, P.coords) and back.metric == P.metric

    def test_schatten_round_trip(self, rng):
        P = PointSet(sym_cloud(rng, 4, 3), MetricDescriptor.schatten(1.5, 0.75))
        back = decode_dataset(encode_dataset(P))
        assert np.array_equal(back.coords, P.coords) and back.metric == P.metric

    def test_header(self):
        data = encode_dataset(line([1.0, 2.0]))
        assert data[:4] == b"ADNN" and data[4:6] == b"\x01\x00"

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            decode_dataset(b"NOPE" + encode_dataset(line([1.0]))[4:])

    def test_trailing_and_truncated(self):
        data = encode_dataset(line([1.0, 2.0]))
        with pytest.raises(FormatError):
            decode_dataset(data + b"\x00")
        with pytest.raises(FormatError):
            decode_dataset(data[:-1])

    def test_digest_tracks_content(self):
        a, b = line([1.0, 2.0]), line([1.0, 2.0000001])
        assert dataset_digest(a) == dataset_digest(line([1.0, 2.0]))
        assert dataset_digest(a) != dataset_digest(b)

    def test_file(self, tmp_path):
        P = line([3.0, 4.0])
        save_dataset(P, tmp_path / "x.adnn")
        assert np.array_equal(load_dataset(tmp_path / "x.adnn").coords, P.coords)


class TestPoints:
    def test_csv(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("# header\n1,2\n\n3,4.5\n")
        assert read_csv_points(f).tolist() == [[1.0, 2.0], [3.0, 4.5]]

    def test_ragged_csv(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("1,2\n3\n")
        with pytest.raises(FormatError, match="width"):
            read_csv_points(f)

    def test_empty_csv(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("# nothing\n")
        with pytest.raises(FormatError):
            read_csv_points(f)

    def test_sources(self, tmp_path):
        X = np.arange(6.0).reshape(3, 2)
        np.save(tmp_path / "q.npy", X)
        save_dataset(PointSet(X, MetricDescriptor.lp(2.0)), tmp_path / "q.adnn")
        np.savetxt(tmp_path / "q.csv", X, delimiter=",")
        for name in ("q.npy", "q.adnn", "q.csv"):
            assert np.array_equal(read_points(tmp_path / name, 2), X)
        with pytest.raises(FormatError):
            read_points(tmp_path / "q.npy", 3)

    def test_single_row(self, tmp_path):
        np.save(tmp_path / "one.npy", np.array([1.0, 2.0]))
        assert read_points(tmp_path / "one.npy").shape == (1, 2)


class TestSpecs:
    def test_mazur(self, rng):
        spec = build_lp_embedding(PointSet(rng.normal(size=(9, 4)), MetricDescriptor.lp(3.0)), 1.0)
        back = decode_spec(encode_spec(spec))
        assert np.array_equal(back.shift, spec.shift) and back.lip_bound == spec.lip_bound

    def test_schatten(self, rng):
        spec = build_schatten_embedding(PointSet(sym_cloud(rng, 10, 3), MetricDescriptor.schatten(1.0)))
        back = decode_spec(encode_spec(spec))
        assert np.array_equal(back.shift_T, spec.shift_T) and back.residual == spec.residual

    def test_weak_variants(self, rng):
        radial = build_weak_embedding(line([0.0] * 9 + [100.0]))
        m = MetricDescriptor.schatten(1.0, 0.5)
        P = PointSet(sym_cloud(rng, 40, 3), m)
        schatten = build_weak_embedding(P, seed=77)
        lp = build_weak_embedding(PointSet(rng.uniform(-1, 1, size=(120, 20)), MetricDescriptor.lp(2.0)))
        for spec, X in ((radial, np.array([[3.0], [50.0]])), (schatten, P.coords[:5]),
                        (lp, rng.normal(size=(3, 20)))):
            back = decode_spec(encode_spec(spec))
            assert back.variant == spec.variant and back.lip_bound == spec.lip_bound
            assert np.array_equal(evaluate_weak(back, X), evaluate_weak(spec, X))
            assert encode_spec(back) == encode_spec(spec)
        assert lp.variant == Variant.SHIFTED

    def test_unknown_tag(self):
        with pytest.raises(FormatError, match="tag"):
            decode_spec(b"\x09")

    def test_trailing(self, rng):
        spec = build_lp_embedding(PointSet(rng.normal(size=(5, 2)), MetricDescriptor.lp(2.0)))
        with pytest.raises(FormatError):
            decode_spec(encode_spec(spec) + b"\x00")
