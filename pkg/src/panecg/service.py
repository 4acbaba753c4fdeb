"""HTTP service: record upload, per-record calibration sessions, and
angle-parameterized synthesis with the dipole oracle available side-by-side.

Calibration runs on a clone of the session model in a worker thread and is
swapped in with a single reference assignment, so concurrent synthesize
requests always see either the old or the new state, never a mix.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles

from .dipole import DegenerateGeometryError, estimate_dipole_lsq, oracle_synthesize
from .geometry import ViewAngle
from .model import GeoVTModel, checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint
from .records import MultiViewRecord, PECGFormatError, read_record, record_from_bytes, write_record
from .training import stage_config, stage3_ofcal

__all__ = ["create_app", "DEFAULT_RECORDED_LEADS"]

DEFAULT_RECORDED_LEADS = ("I", "II", "view-6", "view-28")
PANORAMA_MAX_POINTS = 2048
_SYNTH_CHUNK = 64


@dataclass
class _Session:
    session_id: str
    record_id: str
    recorded_idx: tuple[int, ...]
    model: GeoVTModel
    status: str = "idle"  # idle | running | done | failed
    fitted: Optional[np.ndarray] = None
    error: Optional[str] = None
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class _State:
    def __init__(
        self,
        base_model: GeoVTModel,
        data_dir: Path,
        state_dir: Path,
        recorded_leads: tuple[str, ...],
        max_workers: int,
        calib_iterations: int,
    ):
        self.base_bytes = checkpoint_to_bytes(base_model)
        self.data_dir = data_dir
        self.state_dir = state_dir
        self.default_recorded = recorded_leads
        self.calib_iterations = calib_iterations
        self.records: dict[str, MultiViewRecord] = {}
        self.sessions: dict[str, _Session] = {}
        self.executor = ThreadPoolExecutor(max_workers=max_workers)
        data_dir.mkdir(parents=True, exist_ok=True)
        state_dir.mkdir(parents=True, exist_ok=True)
        self._load_persisted()

    def new_model(self) -> GeoVTModel:
        return checkpoint_from_bytes(self.base_bytes)

    # -- persistence -------------------------------------------------------

    def _session_path(self, sid: str) -> Path:
        return self.state_dir / f"{sid}.json"

    def persist_session(self, s: _Session) -> None:
        doc = {
            "session_id": s.session_id,
            "record_id": s.record_id,
            "recorded_idx": list(s.recorded_idx),
            "status": s.status if s.status != "running" else "idle",
            "fitted": None if s.fitted is None else s.fitted.tolist(),
            "created_at": s.created_at,
            "error": s.error,
        }
        self._session_path(s.session_id).write_text(json.dumps(doc))

    def _load_persisted(self) -> None:
        for p in sorted(self.data_dir.glob("*.pecg")):
            try:
                self.records[p.stem] = read_record(p)
            except (PECGFormatError, OSError):
                continue
        for p in sorted(self.state_dir.glob("*.json")):
            try:
                doc = json.loads(p.read_text())
                if doc["record_id"] not in self.records:
                    continue
                model = self.new_model()
                fitted = doc.get("fitted")
                if fitted is not None:
                    model.params["dev"].data = np.asarray(fitted, dtype=np.float32)
                self.sessions[doc["session_id"]] = _Session(
                    session_id=doc["session_id"],
                    record_id=doc["record_id"],
                    recorded_idx=tuple(doc["recorded_idx"]),
                    model=model,
                    status=doc.get("status", "idle"),
                    fitted=None if fitted is None else np.asarray(fitted, dtype=np.float32),
                    error=doc.get("error"),
                    created_at=doc.get("created_at", time.time()),
                )
            except (KeyError, ValueError, OSError):
                continue


def _eval_window(record: MultiViewRecord, downsample: int) -> tuple[int, int]:
    half = record.n_samples // 2
    return half, half + (half // downsample) * downsample


def create_app(
    model: Optional[GeoVTModel] = None,
    checkpoint: Optional[str | Path] = None,
    data_dir: str | Path = "service-data/records",
    state_dir: str | Path = "service-data/sessions",
    recorded_leads: tuple[str, ...] = DEFAULT_RECORDED_LEADS,
    max_workers: int = 2,
    calib_iterations: int = 100,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    if model is None:
        if checkpoint is None:
            raise ValueError("create_app needs a model or a checkpoint path")
        model = load_checkpoint(checkpoint)
    model.eval()
    state = _State(model, Path(data_dir), Path(state_dir), recorded_leads, max_workers, calib_iterations)
    app = FastAPI(title="panecg panorama service")
    app.state.panecg = state

    # -- records ---------------------------------------------------------

    @app.post("/records", status_code=201)
    def upload_record(body: bytes = Body(..., media_type="application/octet-stream")):
        try:
            record = record_from_bytes(body)
        except PECGFormatError as e:
            raise HTTPException(status_code=400, detail=str(e))
        record_id = f"rec-{uuid.uuid4().hex[:12]}"
        write_record(record, state.data_dir / f"{record_id}.pecg")
        state.records[record_id] = record
        return {"record_id": record_id, "subject_id": record.subject_id, "n_leads": len(record.leads)}

    @app.get("/records")
    def list_records():
        return [
            {
                "record_id": rid,
                "subject_id": r.subject_id,
                "n_leads": len(r.leads),
                "fs": r.fs,
                "duration": r.duration,
                "device": r.device,
            }
            for rid, r in sorted(state.records.items())
        ]

    # -- sessions ----------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        record_id = body.get("record_id")
        if record_id not in state.records:
            raise HTTPException(status_code=404, detail=f"unknown record {record_id!r}")
        record = state.records[record_id]
        names = body.get("recorded_leads", list(state.default_recorded))
        try:
            idx = tuple(record.lead_index(n) for n in names)
        except KeyError as e:
            raise HTTPException(status_code=422, detail=str(e))
        if len(idx) < 3:
            raise HTTPException(status_code=422, detail="need at least 3 recorded leads")
        sid = f"sess-{uuid.uuid4().hex[:12]}"
        session = _Session(session_id=sid, record_id=record_id, recorded_idx=idx, model=state.new_model())
        state.sessions[sid] = session
        state.persist_session(session)
        return {"session_id": sid}

    def _get_session(sid: str) -> _Session:
        s = state.sessions.get(sid)
        if s is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return s

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        s = _get_session(sid)
        record = state.records[s.record_id]
        doc = {
            "session_id": s.session_id,
            "record_id": s.record_id,
            "recorded_leads": [record.leads[i].name for i in s.recorded_idx],
            "status": s.status,
            "created_at": s.created_at,
        }
        if s.error:
            doc["error"] = s.error
        if s.status == "done" and s.fitted is not None:
            doc["fitted_deviations"] = {
                record.leads[i].name: [float(s.fitted[i, 0]), float(s.fitted[i, 1])] for i in s.recorded_idx
            }
        return doc

    def _run_calibration(s: _Session) -> None:
        try:
            record = state.records[s.record_id]
            m = state.new_model()
            cfg = stage_config("III", iterations=state.calib_iterations)
            session = stage3_ofcal(record, m, cfg, recorded_idx=s.recorded_idx)
            m.eval()
            s.fitted = session.fitted_dev
            s.model = m  # single reference assignment: swap is atomic
            s.status = "done"
        except Exception as e:  # surfaced through the status endpoint
            s.error = f"{type(e).__name__}: {e}"
            s.status = "failed"
        state.persist_session(s)

    @app.post("/sessions/{sid}/calibrate", status_code=202)
    def calibrate(sid: str):
        s = _get_session(sid)
        record = state.records[s.record_id]
        if record.duration < 10.0 - 1e-9:
            raise HTTPException(status_code=422, detail=f"record is {record.duration:.2f}s; calibration needs >= 10s")
        if not any(record.leads[i].kind != "limb" for i in s.recorded_idx):
            raise HTTPException(status_code=422, detail="calibration needs a non-limb recorded lead")
        with s.lock:
            if s.status == "running":
                raise HTTPException(status_code=409, detail="calibration already running for this session")
            s.status = "running"
            s.error = None
        state.executor.submit(_run_calibration, s)
        return {"session_id": sid, "status": "running"}

    # -- synthesis ---------------------------------------------------------

    def _synthesize_many(s: _Session, angles: np.ndarray, source: str) -> np.ndarray:
        record = state.records[s.record_id]
        m = s.model  # grab once; calibration swaps the whole object
        lo, hi = _eval_window(record, m.config.downsample)
        sig = record.signal_matrix(s.recorded_idx)[:, lo:hi]
        if source == "oracle":
            try:
                p_hat = estimate_dipole_lsq(
                    [l for l in sig], [record.leads[i].nominal for i in s.recorded_idx], fs=record.fs
                )
            except DegenerateGeometryError as e:
                raise HTTPException(status_code=422, detail=str(e))
            return np.stack([oracle_synthesize(p_hat, ViewAngle(t, p)) for t, p in angles])
        ra = np.array([record.leads[i].nominal.as_tuple() for i in s.recorded_idx], dtype=np.float32)
        ri = np.array(s.recorded_idx, dtype=np.int64)
        outs = []
        for c0 in range(0, len(angles), _SYNTH_CHUNK):
            chunk = angles[c0 : c0 + _SYNTH_CHUNK]
            out = m.forward(sig[None], ra[None], chunk[None].astype(np.float32), rec_lead_ids=ri[None])
            outs.append(out.data[0])
        return np.concatenate(outs, axis=0)

    @app.get("/sessions/{sid}/synthesize")
    def synthesize(
        sid: str,
        theta: float = Query(..., ge=0.0, le=180.0),
        phi: float = Query(..., gt=-180.0, le=180.0),
        source: Literal["model", "oracle"] = Query("model"),
    ):
        s = _get_session(sid)
        record = state.records[s.record_id]
        samples = _synthesize_many(s, np.array([[theta, phi]]), source)[0]
        return {
            "session_id": sid,
            "theta": theta,
            "phi": phi,
            "source": source,
            "fs": record.fs,
            "samples": [float(v) for v in samples],
        }

    @app.get("/sessions/{sid}/panorama")
    def panorama(
        sid: str,
        grid: str = Query(..., pattern=r"^\d+x\d+$"),
        source: Literal["model", "oracle"] = Query("model"),
    ):
        s = _get_session(sid)
        record = state.records[s.record_id]
        n, mcols = (int(v) for v in grid.split("x"))
        if n < 1 or mcols < 1 or n * mcols > PANORAMA_MAX_POINTS:
            raise HTTPException(status_code=422, detail=f"grid must have 1..{PANORAMA_MAX_POINTS} points")
        thetas = (np.arange(n) + 0.5) * (180.0 / n)
        phis = -180.0 + (np.arange(mcols) + 0.5) * (360.0 / mcols)
        angles = np.array([[t, p] for t in thetas for p in phis])  # row-major by (theta, phi)
        samples = _synthesize_many(s, angles, source)
        return {
            "session_id": sid,
            "source": source,
            "fs": record.fs,
            "grid": [n, mcols],
            "entries": [
                {"theta": float(t), "phi": float(p), "samples": [float(v) for v in row]}
                for (t, p), row in zip(angles, samples)
            ],
        }

    static = Path(static_dir) if static_dir else Path("frontend/dist")
    if static.is_dir():
        app.mount("/ui", StaticFiles(directory=str(static), html=True), name="ui")

    return app
