"""Multi-view ECG records: container format, synthetic benchmark, sampling.

The on-disk "PECG" container is magic + version + JSON header + raw float32
lead blocks, with a CRC over the payload.  The synthetic benchmark mirrors a
48-view layout: 6 limb leads plus 42 chest views at fixed catalog angles,
one far-field dipole projection per view, with optional per-subject
placement jitter and per-device acquisition effects.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dipole import (
    BUILTIN_DEVICE_PROFILES,
    DeviceProfile,
    PlacementJitter,
    apply_device,
    project_lead_far,
    synth_dipole_trajectory,
)
from .geometry import ViewAngle
from .rng import split, stream

__all__ = [
    "Lead",
    "MultiViewRecord",
    "PairSample",
    "DatasetManifest",
    "PECGFormatError",
    "LIMB_ANGLES",
    "CHEST_VIEW_ANGLES",
    "panobench_lead_catalog",
    "panobench_synthetic",
    "write_record",
    "read_record",
    "sample_pair",
    "split_dataset",
    "GeneratorConfig",
    "generate_dataset",
]

PECG_MAGIC = b"PECG"
PECG_VERSION = 1


class PECGFormatError(ValueError):
    """Malformed or corrupted PECG container."""


# Mean limb-lead angles (degrees) of the 48-view benchmark layout.
LIMB_ANGLES: dict[str, tuple[float, float]] = {
    "I": (90, 90),
    "II": (150, 90),
    "III": (150, -90),
    "aVR": (60, -90),
    "aVL": (60, 90),
    "aVF": (180, 90),
}

# Chest views 1..42, (theta, phi) in degrees.
CHEST_VIEW_ANGLES: dict[int, tuple[float, float]] = {
    1: (106, -102), 2: (121, -101), 3: (132, -99),
    4: (52, -83), 5: (68, -78), 6: (90, -74),
    7: (109, -75), 8: (125, -77), 9: (137, -81),
    10: (43, -74), 11: (63, -61), 12: (90, -54),
    13: (113, -55), 14: (131, -62), 15: (144, -70),
    16: (30, -73), 17: (54, -51), 18: (90, -33),
    19: (118, -40), 20: (137, -54), 21: (149, -64),
    22: (20, 70), 23: (48, 42), 24: (90, 11),
    25: (122, 32), 26: (141, 51), 27: (153, 63),
    28: (30, 69), 29: (54, 48), 30: (90, 32),
    31: (119, 41), 32: (139, 55), 33: (152, 67),
    34: (40, 80), 35: (60, 71), 36: (90, 65),
    37: (117, 66), 38: (135, 69), 39: (147, 77),
    40: (112, 105), 41: (129, 103), 42: (140, 100),
}


@dataclass
class Lead:
    name: str
    kind: str  # limb | chest | virtual
    nominal: ViewAngle
    true: ViewAngle
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.kind not in ("limb", "chest", "virtual"):
            raise ValueError(f"unknown lead kind {self.kind!r}")


@dataclass
class MultiViewRecord:
    """One subject's leads; all leads share fs and sample count."""

    subject_id: str
    fs: float
    leads: list[Lead]
    device: str = "identity"

    def __post_init__(self):
        counts = {lead.samples.shape[0] for lead in self.leads}
        if len(counts) > 1:
            raise ValueError(f"leads disagree on sample count: {sorted(counts)}")

    @property
    def n_samples(self) -> int:
        return self.leads[0].samples.shape[0] if self.leads else 0

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def lead_index(self, name: str) -> int:
        for i, lead in enumerate(self.leads):
            if lead.name == name:
                return i
        raise KeyError(f"record {self.subject_id} has no lead named {name!r}")

    def signal_matrix(self, indices: Sequence[int] | None = None) -> np.ndarray:
        idx = range(len(self.leads)) if indices is None else indices
        return np.stack([self.leads[i].samples for i in idx])


def panobench_lead_catalog() -> list[tuple[str, str, ViewAngle]]:
    """(name, kind, nominal angle) for the 48 benchmark views, limb leads first."""
    catalog = [(name, "limb", ViewAngle(*ang)) for name, ang in LIMB_ANGLES.items()]
    catalog += [(f"view-{k}", "chest", ViewAngle(*CHEST_VIEW_ANGLES[k])) for k in sorted(CHEST_VIEW_ANGLES)]
    return catalog


def panobench_synthetic(
    seed: int,
    n_subjects: int,
    fs: float = 250.0,
    duration: float = 10.0,
    jitter_std_deg: float = 10.6,
    heart_rate_range: tuple[float, float] = (55.0, 90.0),
    device: Optional[DeviceProfile] = None,
) -> list[MultiViewRecord]:
    """Generate the synthetic 48-view benchmark.

    Every lead is the far-field projection of the subject's dipole at the
    lead's TRUE angle (nominal + placement jitter); records carry both angles
    so models can be fed nominal geometry while the data reflects reality.
    """
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    catalog = panobench_lead_catalog()
    jitter = PlacementJitter(std_deg=jitter_std_deg) if jitter_std_deg > 0 else None
    device_name = "identity" if device is None else _device_name(device)
    records = []
    for i in range(n_subjects):
        sid_seed = split(seed, f"subject-{i}")
        rng = stream(sid_seed, "subject")
        hr = rng.uniform(*heart_rate_range)
        traj = synth_dipole_trajectory(sid_seed, heart_rate_bpm=hr, duration_s=duration, fs=fs)
        dev = jitter.draw(rng, len(catalog)) if jitter else np.zeros((len(catalog), 2))
        leads = []
        for j, (name, kind, nominal) in enumerate(catalog):
            true = nominal.offset(dev[j, 0], dev[j, 1])
            sig = project_lead_far(traj, true)
            if device is not None:
                sig = apply_device(sig, device, split(sid_seed, f"lead-{j}"), fs=fs)
            leads.append(Lead(name=name, kind=kind, nominal=nominal, true=true, samples=sig))
        records.append(
            MultiViewRecord(subject_id=f"subj-{seed}-{i:04d}", fs=fs, leads=leads, device=device_name)
        )
    return records


def _device_name(device: DeviceProfile) -> str:
    for name, prof in BUILTIN_DEVICE_PROFILES.items():
        if prof == device:
            return name
    return "custom"


# ---------------------------------------------------------------------------
# PECG container
# ---------------------------------------------------------------------------

def record_to_bytes(record: MultiViewRecord) -> bytes:
    payload = b"".join(np.ascontiguousarray(lead.samples, dtype="<f4").tobytes() for lead in record.leads)
    header = {
        "subject_id": record.subject_id,
        "fs": record.fs,
        "device": record.device,
        "n_leads": len(record.leads),
        "leads": [
            {
                "name": lead.name,
                "kind": lead.kind,
                "nominal": [lead.nominal.theta, lead.nominal.phi],
                "true": [lead.true.theta, lead.true.phi],
                "n_samples": int(lead.samples.shape[0]),
            }
            for lead in record.leads
        ],
        "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    return PECG_MAGIC + struct.pack("<II", PECG_VERSION, len(hdr)) + hdr + payload


def record_from_bytes(blob: bytes) -> MultiViewRecord:
    if len(blob) < 12 or blob[:4] != PECG_MAGIC:
        raise PECGFormatError("bad magic: not a PECG container")
    version, hdr_len = struct.unpack("<II", blob[4:12])
    if version != PECG_VERSION:
        raise PECGFormatError(f"unsupported PECG version {version}")
    if len(blob) < 12 + hdr_len:
        raise PECGFormatError("truncated header")
    try:
        header = json.loads(blob[12 : 12 + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PECGFormatError(f"unreadable header: {e}") from e
    payload = blob[12 + hdr_len :]
    declared = header["leads"]
    if header.get("n_leads") != len(declared):
        raise PECGFormatError(f"header declares {header.get('n_leads')} leads but lists {len(declared)}")
    sizes = [int(d["n_samples"]) * 4 for d in declared]
    expected = sum(sizes)
    if len(payload) != expected:
        # a whole number of missing/extra blocks is a structural error, anything else a truncation
        if sizes and len(set(sizes)) == 1 and len(payload) % sizes[0] == 0:
            raise PECGFormatError(
                f"structural error: header declares {len(declared)} lead blocks, payload holds {len(payload) // sizes[0]}"
            )
        raise PECGFormatError(f"truncated lead blocks: expected {expected} bytes, got {len(payload)}")
    if (zlib.crc32(payload) & 0xFFFFFFFF) != header["crc32"]:
        raise PECGFormatError("checksum mismatch: payload does not match header crc32")
    leads = []
    off = 0
    for d in declared:
        n = int(d["n_samples"])
        samples = np.frombuffer(payload, dtype="<f4", count=n, offset=off).copy()
        off += n * 4
        leads.append(
            Lead(
                name=d["name"],
                kind=d["kind"],
                nominal=ViewAngle(*d["nominal"]),
                true=ViewAngle(*d["true"]),
                samples=samples,
            )
        )
    return MultiViewRecord(
        subject_id=header["subject_id"], fs=header["fs"], leads=leads, device=header.get("device", "identity")
    )


def write_record(record: MultiViewRecord, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(record_to_bytes(record))
    return path


def read_record(path: str | Path) -> MultiViewRecord:
    return record_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# pairing and splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairSample:
    """Disjoint recorded/query lead index sets for one record."""

    recorded: tuple[int, ...]
    query: tuple[int, ...]
    record: MultiViewRecord

    def __post_init__(self):
        if set(self.recorded) & set(self.query):
            raise ValueError("recorded and query lead sets overlap")


def sample_pair(
    record: MultiViewRecord,
    n_recorded: int,
    n_query: int,
    seed: int,
    pool: Optional[Sequence[int]] = None,
) -> PairSample:
    """Random disjoint recorded/query split; limb leads I and II always recorded.

    ``pool`` restricts sampling to a subset of lead indices (it must contain
    I and II), which is how evaluation views are held out of training.
    """
    n = len(record.leads)
    if n_recorded < 3:
        raise ValueError(f"n_recorded must be >= 3 (two limb leads plus one other), got {n_recorded}")
    anchors = [record.lead_index("I"), record.lead_index("II")]
    candidates = list(range(n)) if pool is None else list(pool)
    if any(a not in candidates for a in anchors):
        raise ValueError("lead pool must contain limb leads I and II")
    if n_recorded + n_query > len(candidates):
        raise ValueError(f"requested {n_recorded}+{n_query} leads from a pool of {len(candidates)}")
    rest = [i for i in candidates if i not in anchors]
    rng = stream(seed, "pair")
    chosen = rng.choice(len(rest), size=n_recorded - 2 + n_query, replace=False)
    recorded = tuple(anchors + [rest[i] for i in chosen[: n_recorded - 2]])
    query = tuple(rest[i] for i in chosen[n_recorded - 2 :])
    return PairSample(recorded=recorded, query=query, record=record)


@dataclass
class DatasetManifest:
    """Index of a generated dataset directory."""

    records: list[dict]  # {"path", "subject_id", "checksum"}
    splits: dict[str, list[str]] = field(default_factory=dict)
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps({"records": self.records, "splits": self.splits, "config_hash": self.config_hash}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(records=d["records"], splits=d.get("splits", {}), config_hash=d.get("config_hash", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())


def split_dataset(manifest: DatasetManifest, ratio: float = 0.8, seed: int = 0) -> tuple[list[str], list[str]]:
    """Subject-level train/test partition, stored back into the manifest."""
    subjects = sorted({r["subject_id"] for r in manifest.records})
    rng = stream(seed, "split")
    order = rng.permutation(len(subjects))
    n_train = int(round(ratio * len(subjects)))
    train = sorted(subjects[i] for i in order[:n_train])
    test = sorted(subjects[i] for i in order[n_train:])
    manifest.splits = {"train": train, "test": test}
    return train, test


# ---------------------------------------------------------------------------
# generator config and dataset materialization
# ---------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    """Flat key/value generator settings (see parse())."""

    seed: int = 0
    n_subjects: int = 20
    fs: float = 250.0
    duration: float = 10.0
    jitter_std_deg: float = 10.6
    heart_rate: tuple[float, float] = (55.0, 90.0)
    device_profiles: tuple[str, ...] = ("identity",)

    @classmethod
    def parse(cls, text: str) -> "GeneratorConfig":
        """Parse `key = value` lines; '#' starts a comment.

        Keys: seed, n_subjects, fs, duration, jitter_std_deg,
        heart_rate (single value or "lo,hi"), device_profiles (comma list).
        """
        cfg = cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "seed":
                cfg.seed = int(val)
            elif key == "n_subjects":
                cfg.n_subjects = int(val)
            elif key == "fs":
                cfg.fs = float(val)
            elif key == "duration":
                cfg.duration = float(val)
            elif key == "jitter_std_deg":
                cfg.jitter_std_deg = float(val)
            elif key == "heart_rate":
                parts = [float(p) for p in val.split(",")]
                cfg.heart_rate = (parts[0], parts[-1])
            elif key == "device_profiles":
                names = tuple(p.strip() for p in val.split(",") if p.strip())
                unknown = [n for n in names if n not in BUILTIN_DEVICE_PROFILES]
                if unknown:
                    raise ValueError(f"unknown device profiles {unknown}; known: {sorted(BUILTIN_DEVICE_PROFILES)}")
                cfg.device_profiles = names
            else:
                raise ValueError(f"unknown generator config key {key!r}")
        return cfg

    def content_hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


def generate_dataset(cfg: GeneratorConfig, out_dir: str | Path) -> DatasetManifest:
    """Materialize records (one PECG file each) plus a manifest with splits."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    per_device = max(1, cfg.n_subjects // len(cfg.device_profiles))
    subj = 0
    for dname in cfg.device_profiles:
        device = BUILTIN_DEVICE_PROFILES[dname]
        dev = None if dname == "identity" else device
        count = per_device if dname != cfg.device_profiles[-1] else cfg.n_subjects - subj
        recs = panobench_synthetic(
            seed=split(cfg.seed, f"dev:{dname}"),
            n_subjects=count,
            fs=cfg.fs,
            duration=cfg.duration,
            jitter_std_deg=cfg.jitter_std_deg,
            heart_rate_range=cfg.heart_rate,
            device=dev,
        )
        for r in recs:
            r.subject_id = f"{r.subject_id}-{dname}"
            blob = record_to_bytes(r)
            path = out / f"{r.subject_id}.pecg"
            path.write_bytes(blob)
            entries.append(
                {"path": path.name, "subject_id": r.subject_id, "checksum": zlib.crc32(blob) & 0xFFFFFFFF}
            )
            subj += 1
    manifest = DatasetManifest(records=entries, config_hash=cfg.content_hash())
    split_dataset(manifest, ratio=0.8, seed=cfg.seed)
    manifest.save(out / "manifest.json")
    return manifest


def load_dataset(dir_path: str | Path) -> tuple[DatasetManifest, list[MultiViewRecord]]:
    d = Path(dir_path)
    manifest = DatasetManifest.load(d / "manifest.json")
    records = [read_record(d / e["path"]) for e in manifest.records]
    return manifest, records
