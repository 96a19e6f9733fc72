import numpy as np
import pytest
from fastapi.testclient import TestClient

from avgnns import __version__
from avgnns.api import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def built(client, tmp_path_factory):
    d = tmp_path_factory.mktemp("api")
    gen = client.post("/v1/generate", json={"n": 300, "d": 6, "p": 4.0, "seed": 3, "n_queries": 10,
                                            "out": str(d / "inst.adnn")})
    assert gen.status_code == 200, gen.text
    build = client.post("/v1/build", json={"data": str(d / "inst.adnn"), "r": 1.0, "trees": 4, "seed": 2,
                                           "out": str(d / "inst.idx")})
    assert build.status_code == 200, build.text
    return d, gen.json(), build.json()


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "version": __version__}


def test_generate_response(built):
    _, gen, _ = built
    assert gen["n"] == 300 and gen["n_queries"] == 10
    assert gen["max_planted_distance"] <= 1.0
    assert gen["queries_path"].endswith(".queries.json")


def test_build_response(built):
    _, _, build = built
    assert build["params"]["k_trees"] == 4 and build["space_bytes"] > 0
    assert build["stats"]["leaves"] > 0


def test_query_points(client, built):
    d, _, _ = built
    from avgnns.formats import load_dataset

    pts = load_dataset(d / "inst.adnn").coords[:3].tolist()
    res = client.post("/v1/query", json={"index": str(d / "inst.idx"), "points": pts})
    assert res.status_code == 200
    body = res.json()
    assert [h["found"] for h in body["results"]] == [True, True, True]
    assert all(h["distance"] <= body["return_radius"] for h in body["results"])


def test_query_point_file(client, built):
    d, _, _ = built
    np.save(d / "q.npy", np.zeros((2, 6)))
    res = client.post("/v1/query", json={"index": str(d / "inst.idx"), "point_file": str(d / "q.npy")})
    assert res.status_code == 200 and len(res.json()["results"]) == 2


def test_query_needs_one_source(client, built):
    d, _, _ = built
    res = client.post("/v1/query", json={"index": str(d / "inst.idx")})
    assert res.status_code == 422


def test_query_wrong_dimension(client, built):
    d, _, _ = built
    res = client.post("/v1/query", json={"index": str(d / "inst.idx"), "points": [[1.0, 2.0]]})
    assert res.status_code == 400


def test_verify(client, built):
    d, _, build = built
    res = client.post("/v1/verify", json={"index": str(d / "inst.idx")}).json()
    assert res["ok"] and res["nodes_checked"] == sum(build["stats"][k] for k in ("leaves", "balls", "hashes"))


def test_bench(client, built):
    d, _, _ = built
    res = client.post("/v1/bench", json={"instance": str(d / "inst.adnn"), "trees": 4})
    assert res.status_code == 200
    rep = res.json()["report"]
    assert rep["instance"]["n_queries"] == 10 and rep["audit"]["ok"]


def test_embed_stats(client, built):
    d, _, _ = built
    res = client.post("/v1/embed-stats", json={"data": str(d / "inst.adnn"), "q": 1.0})
    assert [e["embedding"] for e in res.json()["stats"]["embeddings"]] == ["lp_mazur", "weak_l1"]


def test_import_csv(client, tmp_path):
    (tmp_path / "p.csv").write_text("1,2\n3,4\n5,7\n")
    res = client.post("/v1/import-csv", json={"csv": str(tmp_path / "p.csv"), "p": 1.0,
                                              "out": str(tmp_path / "p.adnn")})
    assert res.json()["n"] == 3 and res.json()["d"] == 2


def test_missing_file(client, tmp_path):
    res = client.post("/v1/embed-stats", json={"data": str(tmp_path / "absent.adnn")})
    assert res.status_code == 404


def test_validation_errors(client, tmp_path):
    assert client.post("/v1/generate", json={"n": 1, "out": str(tmp_path / "x")}).status_code == 422
    assert client.post("/v1/build", json={"data": "x", "r": -1, "out": "y"}).status_code == 422


def test_calibration_error_maps_to_422(client, tmp_path):
    from avgnns.formats import save_dataset
    from avgnns.metrics import MetricDescriptor, PointSet

    # two far clusters with a tiny c: the hash node cannot meet its calibration bound
    X = np.concatenate([np.zeros((150, 1)), np.full((150, 1), 20.0)])
    X += np.random.default_rng(0).uniform(0, 0.01, size=X.shape)
    save_dataset(PointSet(X, MetricDescriptor.lp(1.0)), tmp_path / "two.adnn")
    res = client.post("/v1/build", json={"data": str(tmp_path / "two.adnn"), "r": 1.0, "c": 7.0,
                                         "trees": 1, "out": str(tmp_path / "two.idx")})
    assert res.status_code == 422
    assert "CalibrationError" in res.json()["detail"] or "DispersionError" in res.json()["detail"]
