"""Record container, binary format round-trips, sampling, dataset pipeline."""

import json
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panecg.geometry import ViewAngle
from panecg.records import (
    CHEST_VIEW_ANGLES,
    LIMB_ANGLES,
    DatasetManifest,
    GeneratorConfig,
    Lead,
    MultiViewRecord,
    PairSample,
    PECGFormatError,
    generate_dataset,
    load_dataset,
    panobench_lead_catalog,
    panobench_synthetic,
    read_record,
    record_from_bytes,
    record_to_bytes,
    sample_pair,
    split_dataset,
    write_record,
)

PECG_MAGIC = b"PECG"


def tiny_record(seed=0, n_subjects=1, **kw):
    kw.setdefault("duration", 1.0)
    kw.setdefault("jitter_std_deg", 0.0)
    return panobench_synthetic(seed, n_subjects, **kw)[0]


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def test_lead_kind_validation():
    with pytest.raises(ValueError):
        Lead("x", "torso", ViewAngle(90, 0), ViewAngle(90, 0), np.zeros(4))


def test_record_rejects_ragged_leads():
    a = Lead("a", "chest", ViewAngle(90, 0), ViewAngle(90, 0), np.zeros(4))
    b = Lead("b", "chest", ViewAngle(90, 10), ViewAngle(90, 10), np.zeros(5))
    with pytest.raises(ValueError):
        MultiViewRecord(subject_id="s", fs=250.0, leads=[a, b])


def test_record_properties_and_lookup():
    r = tiny_record()
    assert r.n_samples == 250
    assert r.duration == pytest.approx(1.0)
    assert r.lead_index("I") == 0
    assert r.leads[r.lead_index("view-1")].kind == "chest"
    with pytest.raises(KeyError):
        r.lead_index("nope")
    m = r.signal_matrix([0, 2])
    np.testing.assert_array_equal(m[1], r.leads[2].samples)


def test_catalog_layout():
    cat = panobench_lead_catalog()
    assert len(cat) == len(LIMB_ANGLES) + len(CHEST_VIEW_ANGLES) == 48
    assert [c[0] for c in cat[:6]] == list(LIMB_ANGLES)
    assert all(kind == "limb" for _, kind, _ in cat[:6])
    assert all(kind == "chest" for _, kind, _ in cat[6:])
    assert cat[6][0] == "view-1"


def test_synthetic_determinism_and_jitter():
    a = panobench_synthetic(7, 2, duration=1.0)
    b = panobench_synthetic(7, 2, duration=1.0)
    assert a[0].subject_id == b[0].subject_id
    np.testing.assert_array_equal(a[1].signal_matrix(), b[1].signal_matrix())
    # default jitter: nominal and true differ for most leads
    devs = [lead.true.as_tuple() != lead.nominal.as_tuple() for lead in a[0].leads]
    assert any(devs)
    clean = tiny_record(jitter_std_deg=0.0)
    assert all(lead.true == lead.nominal for lead in clean.leads)


def test_synthetic_validation():
    with pytest.raises(ValueError):
        panobench_synthetic(0, 0)


# ---------------------------------------------------------------------------
# PECG binary format
# ---------------------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    r = tiny_record(seed=3, jitter_std_deg=10.6)
    blob = record_to_bytes(r)
    back = record_from_bytes(blob)
    assert back.subject_id == r.subject_id
    assert back.fs == r.fs
    assert back.device == r.device
    for orig, rt in zip(r.leads, back.leads):
        assert rt.name == orig.name and rt.kind == orig.kind
        assert rt.nominal == orig.nominal and rt.true == orig.true
        assert rt.samples.dtype == np.float32
        assert np.array_equal(rt.samples.view(np.uint8), orig.samples.view(np.uint8))
    # and the re-serialization is byte-identical
    assert record_to_bytes(back) == blob
    p = write_record(r, tmp_path / "r.pecg")
    assert np.array_equal(read_record(p).signal_matrix(), r.signal_matrix())


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.floats(min_value=100.0, max_value=1000.0))
def test_round_trip_arbitrary_float32_payloads(seed, fs):
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal(17).astype(np.float32)
    samples[0] = np.float32("1e-38")  # subnormal-adjacent values must survive
    lead = Lead("z", "virtual", ViewAngle(12.0, -34.0), ViewAngle(14.0, -30.0), samples)
    r = MultiViewRecord(subject_id=f"s{seed}", fs=fs, leads=[lead])
    back = record_from_bytes(record_to_bytes(r))
    assert np.array_equal(back.leads[0].samples.view(np.uint8), samples.view(np.uint8))
    assert back.fs == fs


def test_bad_magic_rejected():
    with pytest.raises(PECGFormatError, match="magic"):
        record_from_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(PECGFormatError):
        record_from_bytes(b"PE")


def test_bad_version_rejected():
    blob = bytearray(record_to_bytes(tiny_record()))
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(PECGFormatError, match="version"):
        record_from_bytes(bytes(blob))


def test_truncated_header_rejected():
    blob = record_to_bytes(tiny_record())
    with pytest.raises(PECGFormatError, match="header"):
        record_from_bytes(blob[:16])


def test_corrupt_header_json_rejected():
    blob = bytearray(record_to_bytes(tiny_record()))
    blob[12] = ord("{") ^ 0xFF
    with pytest.raises(PECGFormatError, match="header"):
        record_from_bytes(bytes(blob))


def test_truncated_payload_rejected():
    blob = record_to_bytes(tiny_record())
    with pytest.raises(PECGFormatError, match="truncated lead blocks"):
        record_from_bytes(blob[:-5])


def test_missing_whole_block_is_structural_error():
    r = tiny_record()
    blob = record_to_bytes(r)
    block = r.n_samples * 4
    with pytest.raises(PECGFormatError, match="structural"):
        record_from_bytes(blob[:-block])


def test_payload_corruption_fails_checksum():
    blob = bytearray(record_to_bytes(tiny_record()))
    blob[-3] ^= 0x40
    with pytest.raises(PECGFormatError, match="checksum"):
        record_from_bytes(bytes(blob))


def test_lead_count_mismatch_rejected():
    r = tiny_record()
    blob = record_to_bytes(r)
    hdr_len = struct.unpack("<II", blob[4:12])[1]
    header = json.loads(blob[12 : 12 + hdr_len])
    header["n_leads"] = 7
    hdr = json.dumps(header, sort_keys=True).encode()
    forged = PECG_MAGIC + struct.pack("<II", 1, len(hdr)) + hdr + blob[12 + hdr_len :]
    with pytest.raises(PECGFormatError, match="declares"):
        record_from_bytes(forged)


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------

def test_pair_sample_contracts():
    r = tiny_record()
    s = sample_pair(r, n_recorded=4, n_query=3, seed=0)
    assert len(s.recorded) == 4 and len(s.query) == 3
    assert set(s.recorded).isdisjoint(s.query)
    assert r.lead_index("I") in s.recorded and r.lead_index("II") in s.recorded
    # deterministic in seed
    t = sample_pair(r, n_recorded=4, n_query=3, seed=0)
    assert s.recorded == t.recorded and s.query == t.query
    u = sample_pair(r, n_recorded=4, n_query=3, seed=1)
    assert (s.recorded, s.query) != (u.recorded, u.query)


def test_pair_sample_pool_restriction():
    r = tiny_record()
    pool = [0, 1, 10, 11, 12, 13]
    s = sample_pair(r, n_recorded=3, n_query=2, seed=5, pool=pool)
    assert set(s.recorded) | set(s.query) <= set(pool)
    with pytest.raises(ValueError, match="pool"):
        sample_pair(r, n_recorded=3, n_query=1, seed=0, pool=[10, 11, 12, 13])


def test_pair_sample_validation():
    r = tiny_record()
    with pytest.raises(ValueError):
        sample_pair(r, n_recorded=2, n_query=1, seed=0)
    with pytest.raises(ValueError):
        sample_pair(r, n_recorded=40, n_query=20, seed=0)
    with pytest.raises(ValueError):
        PairSample(recorded=(0, 1, 2), query=(2, 3), record=r)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=3, max_value=10),
       st.integers(min_value=1, max_value=8))
def test_pair_sample_always_disjoint_with_anchors(seed, n_rec, n_q):
    r = tiny_record()
    s = sample_pair(r, n_recorded=n_rec, n_query=n_q, seed=seed)
    assert set(s.recorded).isdisjoint(s.query)
    assert len(set(s.recorded)) == n_rec and len(set(s.query)) == n_q
    assert {0, 1} <= set(s.recorded)


# ---------------------------------------------------------------------------
# generator config and dataset materialization
# ---------------------------------------------------------------------------

def test_generator_config_parse():
    cfg = GeneratorConfig.parse(
        """
        # benchmark
        seed = 3
        n_subjects = 5
        fs = 125
        heart_rate = 50, 70
        device_profiles = identity, lowpass_a
        """
    )
    assert cfg.seed == 3 and cfg.n_subjects == 5 and cfg.fs == 125.0
    assert cfg.heart_rate == (50.0, 70.0)
    assert cfg.device_profiles == ("identity", "lowpass_a")


def test_generator_config_parse_errors():
    with pytest.raises(ValueError, match="key = value"):
        GeneratorConfig.parse("just words")
    with pytest.raises(ValueError, match="unknown generator config key"):
        GeneratorConfig.parse("bogus = 1")
    with pytest.raises(ValueError, match="unknown device profiles"):
        GeneratorConfig.parse("device_profiles = nope")


def test_generate_and_load_dataset(tmp_path):
    cfg = GeneratorConfig(seed=1, n_subjects=4, duration=1.0, device_profiles=("identity", "lowpass_a"))
    manifest = generate_dataset(cfg, tmp_path)
    assert len(manifest.records) == 4
    assert (tmp_path / "manifest.json").exists()
    assert manifest.config_hash == cfg.content_hash()
    # checksums in the manifest match the files on disk
    for e in manifest.records:
        blob = (tmp_path / e["path"]).read_bytes()
        assert (zlib.crc32(blob) & 0xFFFFFFFF) == e["checksum"]
    loaded_manifest, records = load_dataset(tmp_path)
    assert {r.subject_id for r in records} == {e["subject_id"] for e in manifest.records}
    devices = {r.device for r in records}
    assert devices == {"identity", "lowpass_a"}
    # splits partition the subjects
    train, test = loaded_manifest.splits["train"], loaded_manifest.splits["test"]
    assert set(train).isdisjoint(test)
    assert set(train) | set(test) == {r.subject_id for r in records}


def test_split_dataset_deterministic():
    manifest = DatasetManifest(records=[{"path": f"{i}.pecg", "subject_id": f"s{i}", "checksum": 0} for i in range(10)])
    a = split_dataset(manifest, ratio=0.7, seed=3)
    b = split_dataset(manifest, ratio=0.7, seed=3)
    assert a == b
    assert len(a[0]) == 7 and len(a[1]) == 3


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest(records=[{"path": "a.pecg", "subject_id": "a", "checksum": 1}],
                        splits={"train": ["a"], "test": []}, config_hash="ff")
    m.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back.records == m.records and back.splits == m.splits and back.config_hash == "ff"
