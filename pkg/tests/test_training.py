"""Training-stage contracts: batching, determinism, freezes, calibration."""

import json

import numpy as np
import pytest

from panecg.autodiff import DimensionError, Tensor
from panecg.dipole import BUILTIN_DEVICE_PROFILES, estimate_dipole_lsq, oracle_synthesize
from panecg.geometry import ViewAngle
from panecg.model import GeoVTModel
from panecg.records import panobench_synthetic
from panecg.training import (
    CalibrationSession,
    evaluate_views,
    mae_loss,
    noise_perturb,
    stage1_anypre,
    stage2_devcal,
    stage3_ofcal,
    stage_config,
    train_loop,
)
from panecg.training import _assemble_batch  # white-box: batch contract tests


@pytest.fixture(scope="module")
def long_records():
    # two clean 10 s subjects for calibration tests
    return panobench_synthetic(5, 2, duration=10.0, jitter_std_deg=0.0)


def tiny_stage1_cfg(**over):
    base = dict(epochs=2, batch_size=2, crop_len=64, seed=0, milestones=(50,))
    base.update(over)
    return stage_config("I", desk=True, **base)


# ---------------------------------------------------------------------------
# configs and primitives
# ---------------------------------------------------------------------------

def test_stage_config_defaults():
    c1 = stage_config("I")
    assert (c1.lr, c1.epochs) == (1e-3, 200)
    assert stage_config("I", desk=True).epochs == 50
    assert stage_config("II", desk=True).epochs == 30
    c3 = stage_config("III", desk=True)  # desk leaves stage III alone
    assert (c3.lr, c3.iterations, c3.epochs) == (5e-5, 100, 0)
    assert stage_config("II", lr=9.0, batch_size=4).lr == 9.0
    with pytest.raises(KeyError):
        stage_config("IV")
    with pytest.raises(ValueError):
        stage_config("I", noise_sigma=-0.1)


def test_mae_loss_value_and_mismatch():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 3, 8)).astype(np.float32)
    b = rng.standard_normal((2, 3, 8)).astype(np.float32)
    loss = mae_loss(Tensor(a), b)
    assert loss.item() == pytest.approx(np.mean(np.abs(a - b)), rel=1e-6)
    assert mae_loss(Tensor(a), Tensor(b)).item() == loss.item()
    with pytest.raises(DimensionError):
        mae_loss(Tensor(a), b[:, :, :4])


def test_noise_perturb_contract():
    rng = np.random.default_rng(1)
    x = (rng.standard_normal((3, 10_000)) * np.array([1.0, 5.0, 0.2])[:, None]).astype(np.float32)
    assert noise_perturb(x, 0.0, 7) is x
    a = noise_perturb(x, 0.1, 7)
    b = noise_perturb(x, 0.1, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, noise_perturb(x, 0.1, 8))
    # empirical noise std tracks sigma times each lead's own std within 10%
    ratio = (a - x).std(axis=-1) / (0.1 * x.std(axis=-1))
    assert np.all(np.abs(ratio - 1.0) < 0.1)
    with pytest.raises(ValueError):
        noise_perturb(x, -1.0, 0)


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def test_assemble_batch_shapes_and_determinism(bench_records):
    cfg = tiny_stage1_cfg()
    out1 = _assemble_batch(list(bench_records), [0, 1], cfg, seed=3, pool=None, fixed_recorded=None)
    out2 = _assemble_batch(list(bench_records), [0, 1], cfg, seed=3, pool=None, fixed_recorded=None)
    sig, ra, ri, qa, qi, tgt = out1
    assert sig.shape[0] == 2 and sig.shape[2] == 64
    assert ra.shape == sig.shape[:2] + (2,)
    assert tgt.shape == (2, cfg.n_query, 64)
    assert qa.shape == (2, cfg.n_query, 2)
    for x, y in zip(out1, out2):
        assert np.array_equal(x, y)
    out3 = _assemble_batch(list(bench_records), [0, 1], cfg, seed=4, pool=None, fixed_recorded=None)
    assert not np.array_equal(out1[0], out3[0])


def test_assemble_batch_fixed_recorded(bench_records):
    fixed = (0, 1, 6, 12)
    cfg = tiny_stage1_cfg(n_query=3)
    sig, ra, ri, qa, qi, tgt = _assemble_batch(
        list(bench_records), [0, 2], cfg, seed=0, pool=None, fixed_recorded=fixed
    )
    assert sig.shape == (2, 4, 64)
    assert np.all(ri == np.array(fixed))
    for row in qi:  # queries never overlap the fixed electrode set
        assert set(row.tolist()).isdisjoint(fixed)


def test_assemble_batch_recorded_queries_included(bench_records):
    fixed = (0, 1, 6, 12)
    cfg = tiny_stage1_cfg(n_query=2, include_recorded_queries=True)
    sig, ra, ri, qa, qi, tgt = _assemble_batch(
        list(bench_records), [0], cfg, seed=0, pool=None, fixed_recorded=fixed
    )
    assert qi.shape == (1, 6)
    assert tuple(qi[0, :4]) == fixed
    # recorded-as-query targets reuse the exact input signals and labels
    assert np.array_equal(tgt[0, :4], sig[0])
    assert np.array_equal(qa[0, :4], ra[0])


def test_assemble_batch_crop_too_long(bench_records):
    cfg = tiny_stage1_cfg(crop_len=10_000)
    with pytest.raises(ValueError, match="crop"):
        _assemble_batch(list(bench_records), [0], cfg, seed=0, pool=None, fixed_recorded=None)


def test_jitter_zero_limit_matches_nominal(long_records):
    # sigma -> 0: resynthesized views converge on the stored nominal signals
    fixed = (0, 1, 6, 12, 20)
    cfg = tiny_stage1_cfg(n_query=2, angle_jitter_sigma=1e-7, crop_len=128)
    sig, ra, ri, qa, qi, tgt = _assemble_batch(
        list(long_records), [0], cfg, seed=2, pool=None, fixed_recorded=fixed, dipoles={}
    )
    cfg0 = tiny_stage1_cfg(n_query=2, angle_jitter_sigma=0.0, crop_len=128)
    sig0, ra0, *_ = _assemble_batch(
        list(long_records), [0], cfg0, seed=2, pool=None, fixed_recorded=fixed, dipoles=None
    )
    np.testing.assert_allclose(ra, ra0, atol=1e-5)
    np.testing.assert_allclose(sig, sig0, atol=1e-4)


def test_jittered_pairs_stay_physically_consistent(long_records):
    # inputs and targets of a jittered batch must describe one dipole: fit it
    # from the recorded views and predict the query targets from the labels
    fixed = (0, 1, 6, 12, 20, 30)
    cfg = tiny_stage1_cfg(n_query=3, angle_jitter_sigma=4.0, crop_len=256)
    sig, ra, ri, qa, qi, tgt = _assemble_batch(
        list(long_records), [0], cfg, seed=9, pool=None, fixed_recorded=fixed, dipoles={}
    )
    angles = [ViewAngle(float(t), float(p)) for t, p in ra[0]]
    traj = estimate_dipole_lsq(list(sig[0].astype(np.float64)), angles, fs=long_records[0].fs)
    for j in range(qa.shape[1]):
        pred = oracle_synthesize(traj, ViewAngle(float(qa[0, j, 0]), float(qa[0, j, 1])))
        np.testing.assert_allclose(pred, tgt[0, j], atol=1e-3)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_evaluate_views_report_shape(tiny_model, bench_records):
    rep = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7, 8], window=(0, 400))
    assert rep.n_input == 3 and rep.n_synth == 2
    assert len(rep.psnr_per_lead) == 2 and len(rep.ssim_per_lead) == 2
    assert np.isfinite(rep.mean_psnr) and np.isfinite(rep.mean_ssim)


def test_evaluate_views_window_truncates_to_downsample(tiny_model, bench_records):
    a = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400))
    b = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 403))
    assert a.psnr_per_lead == b.psnr_per_lead


def test_evaluate_views_batching_invariant(tiny_model, bench_records):
    a = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7, 9], window=(0, 400))
    b = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7, 9], window=(0, 400), batch_records=1)
    np.testing.assert_allclose(a.psnr_per_lead, b.psnr_per_lead, atol=1e-3)


def test_evaluate_views_angle_override(tiny_model, bench_records):
    nominal = np.array([bench_records[0].leads[i].nominal.as_tuple() for i in (0, 1, 6)], dtype=np.float32)
    a = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400))
    b = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400), rec_angle_override=nominal)
    assert a.psnr_per_lead == b.psnr_per_lead
    shifted = nominal.copy()
    shifted[:, 1] += 25.0
    c = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400), rec_angle_override=shifted)
    assert c.psnr_per_lead != a.psnr_per_lead


def test_evaluate_views_lead_ids_matter_only_with_deviations(tiny_model, bench_records):
    a = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400))
    b = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400), use_rec_lead_ids=False)
    assert a.psnr_per_lead == b.psnr_per_lead  # zero deviations: ids are inert
    tiny_model.params["dev"].data[6] = [5.0, -10.0]
    c = evaluate_views(tiny_model, bench_records, [0, 1, 6], [7], window=(0, 400))
    assert c.psnr_per_lead != a.psnr_per_lead


# ---------------------------------------------------------------------------
# stages I and II
# ---------------------------------------------------------------------------

def test_stage1_deterministic_and_trains(tiny_config, bench_records):
    runs = []
    for _ in range(2):
        model = GeoVTModel(tiny_config, seed=0)
        hist = stage1_anypre(bench_records, model, tiny_stage1_cfg())
        runs.append((model, hist))
    (m1, h1), (m2, h2) = runs
    assert [e["loss"] for e in h1] == [e["loss"] for e in h2]
    for n in m1.params:
        assert np.array_equal(m1.params[n].data, m2.params[n].data)
    # deviations stay untouched through pretraining
    assert np.all(m1.params["dev"].data == 0.0)
    assert h1[0].keys() >= {"stage", "epoch", "lr", "loss"}
    assert not m1.training  # loop leaves the model in eval mode


def test_stage1_loss_decreases(tiny_config, bench_records):
    model = GeoVTModel(tiny_config, seed=0)
    hist = stage1_anypre(bench_records, model, tiny_stage1_cfg(epochs=8, batch_size=3, lr=3e-3))
    assert hist[-1]["loss"] < hist[0]["loss"]


def test_stage1_lr_schedule_in_history(tiny_config, bench_records):
    model = GeoVTModel(tiny_config, seed=0)
    hist = stage1_anypre(bench_records, model, tiny_stage1_cfg(epochs=3, lr=1e-3, milestones=(1,), gamma=0.5))
    assert [e["lr"] for e in hist] == [1e-3, 5e-4, 5e-4]


def test_stage1_log_file(tiny_config, bench_records, tmp_path):
    log = tmp_path / "train.jsonl"
    model = GeoVTModel(tiny_config, seed=0)
    stage1_anypre(bench_records, model, tiny_stage1_cfg(log_path=str(log)))
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 2 and lines[1]["epoch"] == 1


def test_stage1_rejects_bad_dataset(tiny_model, bench_records):
    rec = bench_records[0]
    crippled = type(rec)(
        subject_id="x", fs=rec.fs, leads=rec.leads[:3], device=rec.device
    )
    with pytest.raises(ValueError, match="fewer than 4"):
        stage1_anypre([crippled], tiny_model, tiny_stage1_cfg())


def test_stage2_requires_single_device_and_electrodes(tiny_model, bench_records):
    mixed = [
        bench_records[0],
        panobench_synthetic(9, 1, duration=4.0, device=BUILTIN_DEVICE_PROFILES["lowpass_a"])[0],
    ]
    cfg = stage_config("II", desk=True, epochs=1, batch_size=2, crop_len=64, fixed_recorded=(0, 1, 6))
    with pytest.raises(ValueError, match="single-device"):
        stage2_devcal(mixed, tiny_model, cfg)
    cfg_no = stage_config("II", desk=True, epochs=1, batch_size=2, crop_len=64)
    with pytest.raises(ValueError, match="fixed_recorded"):
        stage2_devcal(bench_records, tiny_model, cfg_no)


def test_stage2_runs_on_fixed_set(tiny_config, bench_records):
    model = GeoVTModel(tiny_config, seed=0)
    cfg = stage_config(
        "II", desk=True, epochs=2, batch_size=2, crop_len=64, seed=1,
        fixed_recorded=(0, 1, 6, 12), n_query=2,
    )
    hist = stage2_devcal(bench_records, model, cfg)
    assert len(hist) == 2
    assert np.all(model.params["dev"].data == 0.0)


# ---------------------------------------------------------------------------
# stage III calibration
# ---------------------------------------------------------------------------

REC = (0, 1, 6, 12, 20)


def stage3_cfg(**over):
    base = dict(iterations=4, milestones=(100,))
    base.update(over)
    return stage_config("III", **base)


def test_stage3_freezes_everything_but_angle_pathway(tiny_model, long_records):
    params_before = {n: p.data.copy() for n, p in tiny_model.params.items()}
    buffers_before = {n: b.copy() for n, b in tiny_model.buffers.items()}
    session = stage3_ofcal(long_records[0], tiny_model, stage3_cfg(), recorded_idx=REC)
    allowed = {"dev", "emb.w", "emb.b"}
    for n, before in params_before.items():
        if n not in allowed:
            assert np.array_equal(tiny_model.params[n].data, before), n
    for n, before in buffers_before.items():
        assert np.array_equal(tiny_model.buffers[n], before), n
    assert set(session.frozen_names) == set(params_before) - allowed


def test_stage3_windows_are_disjoint_halves(tiny_model, long_records):
    session = stage3_ofcal(long_records[0], tiny_model, stage3_cfg(), recorded_idx=REC)
    n = long_records[0].n_samples
    ds = tiny_model.config.downsample
    c_lo, c_hi = session.calib_window
    e_lo, e_hi = session.eval_window
    assert c_lo == 0 and e_lo == n // 2
    assert c_hi <= e_lo  # fit never sees evaluation samples
    assert (c_hi - c_lo) % ds == 0 and (e_hi - e_lo) % ds == 0
    assert e_hi <= n


def test_stage3_fits_only_recorded_rows(tiny_model, long_records):
    session = stage3_ofcal(long_records[0], tiny_model, stage3_cfg(iterations=6), recorded_idx=REC)
    dev = session.fitted_dev
    outside = np.setdiff1d(np.arange(dev.shape[0]), np.array(REC))
    assert np.all(dev[outside] == 0.0)
    assert session.fitted_for(4) == (0.0, 0.0)
    assert session.recorded_idx == REC
    assert len(session.history) == 6


def test_stage3_validation_lead_never_fitted(tiny_model, long_records):
    session = stage3_ofcal(
        long_records[0], tiny_model, stage3_cfg(iterations=5), recorded_idx=REC, validation_idx=20
    )
    held = {e["held_out"] for e in session.history}
    assert 20 not in held
    assert all("validation" in e for e in session.history)
    # limb anchors are trusted references, never self-supervision targets
    assert held.isdisjoint({0, 1})


def test_stage3_validation_only_periodic_without_dedicated_lead(tiny_model, long_records):
    session = stage3_ofcal(long_records[0], tiny_model, stage3_cfg(iterations=6), recorded_idx=REC)
    flags = ["validation" in e for e in session.history]
    assert not all(flags) and any(flags)


def test_stage3_best_state_no_worse_than_start(tiny_model, long_records):
    start = tiny_model.params["dev"].data.copy()
    session = stage3_ofcal(
        long_records[0], tiny_model, stage3_cfg(iterations=6), recorded_idx=REC, validation_idx=20
    )
    scored = [e["validation"] for e in session.history]
    # the restored state is the best scored one (or the untouched start)
    assert min(scored) >= 0.0
    if np.array_equal(tiny_model.params["dev"].data, start):
        # kept the pre-fit state: every candidate must have scored worse
        assert all(v >= min(scored) for v in scored)


def test_stage3_angle_override_changes_fit(tiny_config, long_records):
    a = GeoVTModel(tiny_config, seed=0)
    b = GeoVTModel(tiny_config, seed=0)
    nominal = np.array([long_records[0].leads[i].nominal.as_tuple() for i in REC], dtype=np.float32)
    shifted = nominal.copy()
    shifted[2:, 1] += 20.0
    s_a = stage3_ofcal(long_records[0], a, stage3_cfg(iterations=4), recorded_idx=REC)
    s_b = stage3_ofcal(long_records[0], b, stage3_cfg(iterations=4), recorded_idx=REC, rec_angle_override=shifted)
    assert not np.array_equal(s_a.fitted_dev, s_b.fitted_dev)


def test_stage3_deterministic(tiny_config, long_records):
    fits = []
    for _ in range(2):
        model = GeoVTModel(tiny_config, seed=0)
        fits.append(stage3_ofcal(long_records[0], model, stage3_cfg(iterations=5), recorded_idx=REC))
    assert np.array_equal(fits[0].fitted_dev, fits[1].fitted_dev)
    assert [e["loss"] for e in fits[0].history] == [e["loss"] for e in fits[1].history]


def test_stage3_input_validation(tiny_model, long_records, bench_records):
    with pytest.raises(ValueError, match="10"):
        stage3_ofcal(bench_records[0], tiny_model, stage3_cfg(), recorded_idx=REC)
    with pytest.raises(ValueError, match="no recorded leads"):
        stage3_ofcal(long_records[0], tiny_model, stage3_cfg())
    with pytest.raises(ValueError, match="non-limb"):
        stage3_ofcal(long_records[0], tiny_model, stage3_cfg(), recorded_idx=(0, 1, 2))
    with pytest.raises(ValueError, match="must be one of"):
        stage3_ofcal(long_records[0], tiny_model, stage3_cfg(), recorded_idx=REC, validation_idx=7)
    with pytest.raises(ValueError, match="leaves no recorded leads"):
        stage3_ofcal(long_records[0], tiny_model, stage3_cfg(), recorded_idx=(0, 1, 6), validation_idx=6)


def test_calibration_session_container():
    dev = np.zeros((48, 2), dtype=np.float32)
    dev[6] = [1.5, -2.5]
    s = CalibrationSession(
        subject_id="s", recorded_idx=(0, 1, 6), fitted_dev=dev,
        calib_window=(0, 1248), eval_window=(1250, 2498), frozen_names=("head.w",),
    )
    assert s.fitted_for(6) == (1.5, -2.5)
    assert s.history == []
