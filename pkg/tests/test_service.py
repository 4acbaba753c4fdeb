"""HTTP service conformance: state machine, concurrency, validation."""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from panecg.metrics import psnr
from panecg.model import GeoVTModel
from panecg.records import panobench_synthetic, record_to_bytes
from panecg.service import DEFAULT_RECORDED_LEADS, create_app

UPLOAD = {"content-type": "application/octet-stream"}


@pytest.fixture(scope="module")
def service_record():
    return panobench_synthetic(11, 1, duration=10.0, jitter_std_deg=0.0)[0]


@pytest.fixture()
def client(tiny_config, tmp_path):
    model = GeoVTModel(tiny_config, seed=0)
    app = create_app(
        model=model,
        data_dir=tmp_path / "records",
        state_dir=tmp_path / "sessions",
        calib_iterations=6,
    )
    with TestClient(app) as c:
        yield c


def upload(client, record):
    r = client.post("/records", content=record_to_bytes(record), headers=UPLOAD)
    assert r.status_code == 201
    return r.json()["record_id"]


def make_session(client, record_id, leads=None):
    body = {"record_id": record_id}
    if leads is not None:
        body["recorded_leads"] = leads
    r = client.post("/sessions", json=body)
    assert r.status_code == 201
    return r.json()["session_id"]


def wait_done(client, sid, timeout=120.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        doc = client.get(f"/sessions/{sid}").json()
        if doc["status"] in ("done", "failed"):
            return doc
        time.sleep(0.05)
    raise TimeoutError(f"calibration did not finish within {timeout}s")


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def test_upload_and_list(client, service_record):
    rid = upload(client, service_record)
    listed = client.get("/records").json()
    assert [r["record_id"] for r in listed] == [rid]
    assert listed[0]["n_leads"] == 48
    assert listed[0]["duration"] == pytest.approx(10.0)
    assert listed[0]["device"] == "identity"


def test_upload_rejects_malformed_payload(client):
    r = client.post("/records", content=b"not a pecg blob", headers=UPLOAD)
    assert r.status_code == 400
    assert "magic" in r.json()["detail"]


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

def test_session_lifecycle(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    doc = client.get(f"/sessions/{sid}").json()
    assert doc["status"] == "idle"
    assert doc["recorded_leads"] == list(DEFAULT_RECORDED_LEADS)
    assert "fitted_deviations" not in doc


def test_session_validation(client, service_record):
    rid = upload(client, service_record)
    assert client.post("/sessions", json={"record_id": "rec-missing"}).status_code == 404
    r = client.post("/sessions", json={"record_id": rid, "recorded_leads": ["I", "II", "view-99"]})
    assert r.status_code == 422
    r = client.post("/sessions", json={"record_id": rid, "recorded_leads": ["I", "II"]})
    assert r.status_code == 422
    assert client.get("/sessions/sess-missing").status_code == 404


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def test_synthesize_shape_and_window(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    r = client.get(f"/sessions/{sid}/synthesize", params={"theta": 90.0, "phi": 45.0})
    assert r.status_code == 200
    doc = r.json()
    # second half of the 10 s record, truncated to the downsample multiple
    half = service_record.n_samples // 2
    assert len(doc["samples"]) == (half // 4) * 4
    assert doc["fs"] == service_record.fs
    assert doc["source"] == "model"


def test_synthesize_angle_validation(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    for params in (
        {"theta": 190.0, "phi": 0.0},
        {"theta": -1.0, "phi": 0.0},
        {"theta": 90.0, "phi": -180.0},  # seam belongs to +180
        {"theta": 90.0, "phi": 200.0},
        {"theta": 90.0, "phi": 0.0, "source": "magic"},
    ):
        assert client.get(f"/sessions/{sid}/synthesize", params=params).status_code == 422


def test_oracle_source_reconstructs_ground_truth(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    target = service_record.lead_index("view-10")
    ang = service_record.leads[target].nominal
    r = client.get(
        f"/sessions/{sid}/synthesize",
        params={"theta": ang.theta, "phi": ang.phi, "source": "oracle"},
    )
    assert r.status_code == 200
    got = np.array(r.json()["samples"])
    half = service_record.n_samples // 2
    truth = service_record.leads[target].samples[half : half + len(got)]
    assert psnr(got, truth) >= 99.0


def test_panorama_grid(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    r = client.get(f"/sessions/{sid}/panorama", params={"grid": "3x4", "source": "oracle"})
    assert r.status_code == 200
    doc = r.json()
    assert doc["grid"] == [3, 4]
    assert len(doc["entries"]) == 12
    thetas = sorted({e["theta"] for e in doc["entries"]})
    assert thetas == pytest.approx([30.0, 90.0, 150.0])
    phis = sorted({e["phi"] for e in doc["entries"]})
    assert phis == pytest.approx([-135.0, -45.0, 45.0, 135.0])
    assert all(-180.0 < p <= 180.0 for p in phis)


def test_panorama_validation(client, service_record):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    assert client.get(f"/sessions/{sid}/panorama", params={"grid": "axb"}).status_code == 422
    assert client.get(f"/sessions/{sid}/panorama", params={"grid": "100x100"}).status_code == 422


# ---------------------------------------------------------------------------
# calibration state machine
# ---------------------------------------------------------------------------

def test_calibration_flow_and_persistence(client, service_record, tiny_config, tmp_path):
    rid = upload(client, service_record)
    sid = make_session(client, rid)
    r = client.post(f"/sessions/{sid}/calibrate")
    assert r.status_code == 202
    assert r.json()["status"] == "running"
    doc = wait_done(client, sid)
    assert doc["status"] == "done"
    fitted = doc["fitted_deviations"]
    assert set(fitted) == set(DEFAULT_RECORDED_LEADS)
    assert all(len(v) == 2 for v in fitted.values())

    # a fresh app over the same directories restores records and sessions
    app2 = create_app(
        model=GeoVTModel(tiny_config, seed=0),
        data_dir=tmp_path / "records",
        state_dir=tmp_path / "sessions",
    )
    with TestClient(app2) as c2:
        assert [r["record_id"] for r in c2.get("/records").json()] == [rid]
        doc2 = c2.get(f"/sessions/{sid}").json()
        assert doc2["status"] == "done"
        assert doc2["fitted_deviations"] == fitted


def test_calibrate_validation(client, tiny_config, service_record):
    short = panobench_synthetic(12, 1, duration=4.0, jitter_std_deg=0.0)[0]
    rid = upload(client, short)
    sid = make_session(client, rid)
    r = client.post(f"/sessions/{sid}/calibrate")
    assert r.status_code == 422 and "10" in r.json()["detail"]

    rid2 = upload(client, service_record)
    sid2 = make_session(client, rid2, leads=["I", "II", "III", "aVR"])
    r = client.post(f"/sessions/{sid2}/calibrate")
    assert r.status_code == 422 and "non-limb" in r.json()["detail"]


def test_concurrent_calibration_conflicts(tiny_config, tmp_path, service_record):
    model = GeoVTModel(tiny_config, seed=0)
    app = create_app(
        model=model,
        data_dir=tmp_path / "records",
        state_dir=tmp_path / "sessions",
        calib_iterations=60,
    )
    with TestClient(app) as client:
        rid = upload(client, service_record)
        sid = make_session(client, rid)
        assert client.post(f"/sessions/{sid}/calibrate").status_code == 202
        second = client.post(f"/sessions/{sid}/calibrate")
        assert second.status_code == 409
        assert "already running" in second.json()["detail"]
        doc = wait_done(client, sid)
        assert doc["status"] == "done"
        # once finished, a new calibration may start again
        assert client.post(f"/sessions/{sid}/calibrate").status_code == 202
        wait_done(client, sid)


def test_synthesis_consistent_during_calibration(tiny_config, tmp_path, service_record):
    model = GeoVTModel(tiny_config, seed=0)
    app = create_app(
        model=model,
        data_dir=tmp_path / "records",
        state_dir=tmp_path / "sessions",
        calib_iterations=40,
    )
    params = {"theta": 75.0, "phi": 30.0}
    with TestClient(app) as client:
        rid = upload(client, service_record)
        sid = make_session(client, rid)
        pre = np.array(client.get(f"/sessions/{sid}/synthesize", params=params).json()["samples"])
        client.post(f"/sessions/{sid}/calibrate")
        sampled = []
        while client.get(f"/sessions/{sid}").json()["status"] == "running":
            sampled.append(np.array(client.get(f"/sessions/{sid}/synthesize", params=params).json()["samples"]))
        assert client.get(f"/sessions/{sid}").json()["status"] == "done"
        post = np.array(client.get(f"/sessions/{sid}/synthesize", params=params).json()["samples"])
        assert len(sampled) > 0
        # every response during the swap window equals exactly one of the two
        # committed states: never a half-updated mixture
        for s in sampled:
            assert np.array_equal(s, pre) or np.array_equal(s, post)


def test_static_ui_mount(tiny_config, tmp_path, service_record):
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<html><body>panorama viewer</body></html>")
    app = create_app(
        model=GeoVTModel(tiny_config, seed=0),
        data_dir=tmp_path / "records",
        state_dir=tmp_path / "sessions",
        static_dir=ui,
    )
    with TestClient(app) as client:
        r = client.get("/ui/")
        assert r.status_code == 200
        assert "panorama viewer" in r.text
