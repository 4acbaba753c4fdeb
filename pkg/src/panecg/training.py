"""Three-stage training: any-pairs pretraining, per-device finetuning, and
per-record angular calibration.

Stage boundaries follow the deployment story: stage 1 learns the general
angle-to-signal mapping from random recorded/query pairings, stage 2 adapts
to one device's fixed electrode set and acquisition quirks, and stage 3 fits
only the angular pathway (including per-lead deviation parameters) on the
first half of a single record, leaving the second half untouched for
evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dipole import estimate_dipole_lsq, oracle_synthesize
from .metrics import MetricReport, psnr_per_lead, ssim_per_lead
from .model import GeoVTModel
from .optim import AdamW
from .records import MultiViewRecord, sample_pair
from .rng import split, stream

__all__ = [
    "StageConfig",
    "stage_config",
    "mae_loss",
    "noise_perturb",
    "evaluate_views",
    "stage1_anypre",
    "stage2_devcal",
    "stage3_ofcal",
    "CalibrationSession",
    "train_loop",
]


@dataclass
class StageConfig:
    """Hyperparameters for one training stage."""

    stage: str  # "I" | "II" | "III"
    lr: float
    epochs: int = 0
    iterations: int = 0
    batch_size: int = 32
    weight_decay: float = 1e-2
    milestones: tuple[int, ...] = (50, 100, 150)
    gamma: float = 0.5
    noise_sigma: float = 0.02  # input perturbation, relative to per-lead std
    n_recorded_range: tuple[int, int] = (3, 5)
    n_query: int = 4
    crop_len: int = 512
    seed: int = 0
    deviation_lr: float = 0.5  # degrees-scale step for (dtheta, dphi)
    # Ridge on the deviations during calibration.  Self-supervision within a
    # fixed electrode set cannot pin a common rotation of all its views, so
    # unidentified modes must be held at zero rather than left to drift.
    deviation_wd: float = 0.01
    lead_pool: Optional[tuple[int, ...]] = None  # stage-1 sampling pool
    fixed_recorded: tuple[int, ...] = ()  # stage-2/3 device electrode set
    # With fixed_recorded set, also supervise the recorded views as queries
    # each step (on top of n_query draws from the rest of the pool).
    include_recorded_queries: bool = False
    # Placement augmentation: resample each training view at a small random
    # angular offset (signal and label shifted together, so pairs stay
    # consistent).  Teaches the true local angle response; without it the
    # trunk's behaviour between catalog angles is unconstrained and per-lead
    # calibration gradients die out a few degrees from the nominal grid.
    angle_jitter_sigma: float = 0.0
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.stage not in ("I", "II", "III"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


_STAGE_DEFAULTS = {
    "I": dict(lr=1e-3, epochs=200),
    "II": dict(lr=5e-4, epochs=200),
    "III": dict(lr=5e-5, iterations=100),
}
_DESK_EPOCHS = {"I": 50, "II": 30}


def stage_config(stage: str, desk: bool = False, **overrides) -> StageConfig:
    """Stage defaults (lr, epochs/iterations, batch 32, wd 1e-2, milestones
    [50, 100, 150], gamma 0.5); ``desk`` shortens epochs for CPU-scale runs."""
    base = dict(_STAGE_DEFAULTS[stage])
    if desk and stage in _DESK_EPOCHS:
        base["epochs"] = _DESK_EPOCHS[stage]
    base.update(overrides)
    return StageConfig(stage=stage, **base)


def mae_loss(y_hat: Tensor, y: np.ndarray | Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    target = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float32)
    if y_hat.data.shape != target.shape:
        raise ad.DimensionError(f"loss shape mismatch: {y_hat.data.shape} vs {target.shape}")
    return ad.tabs(y_hat - Tensor(target)).mean()


def noise_perturb(x: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add seeded Gaussian noise scaled by sigma times each lead's std.

    Training-time robustness perturbation for recorded inputs; identity at
    sigma = 0.  x is (..., leads, t).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return x
    rng = stream(seed, "input-noise")
    scale = x.std(axis=-1, keepdims=True) * sigma
    return (x + rng.normal(size=x.shape) * scale).astype(np.float32)


# ---------------------------------------------------------------------------
# batching and evaluation
# ---------------------------------------------------------------------------

def _lead_angles(record: MultiViewRecord, idx: Sequence[int]) -> np.ndarray:
    return np.array([record.leads[i].nominal.as_tuple() for i in idx], dtype=np.float32)


def _crop_start(rng, n_samples: int, crop: int) -> int:
    if crop > n_samples:
        raise ValueError(f"crop {crop} longer than record ({n_samples} samples)")
    return int(rng.integers(0, n_samples - crop + 1))


def _assemble_batch(
    records: list[MultiViewRecord],
    rec_ids: list[int],
    cfg: StageConfig,
    seed: int,
    pool: Optional[Sequence[int]],
    fixed_recorded: Optional[Sequence[int]],
    dipoles: Optional[dict] = None,
):
    """Stack one training batch: fresh pair draws, one random crop per record."""
    rng = stream(seed, "batch")
    if fixed_recorded is not None:
        n_rec = len(fixed_recorded)
    else:
        n_rec = int(rng.integers(cfg.n_recorded_range[0], cfg.n_recorded_range[1] + 1))
    sig, ra, ri, qa, qi, tgt = [], [], [], [], [], []
    for j, r_id in enumerate(rec_ids):
        record = records[r_id]
        if fixed_recorded is not None:
            candidates = [i for i in (pool or range(len(record.leads))) if i not in fixed_recorded]
            q_pick = rng.choice(len(candidates), size=cfg.n_query, replace=False)
            recorded = tuple(fixed_recorded)
            query = tuple(candidates[i] for i in q_pick)
            if cfg.include_recorded_queries:
                query = recorded + query
        else:
            pair = sample_pair(record, n_rec, cfg.n_query, split(seed, f"pair-{j}"), pool=pool)
            recorded, query = pair.recorded, pair.query
        start = _crop_start(rng, record.n_samples, cfg.crop_len)
        window = slice(start, start + cfg.crop_len)
        if cfg.angle_jitter_sigma > 0 and dipoles is not None:
            traj = dipoles.get(r_id)
            if traj is None:
                traj = estimate_dipole_lsq(
                    [ld.samples for ld in record.leads],
                    [ld.true for ld in record.leads],
                    fs=record.fs,
                )
                dipoles[r_id] = traj

            def _jittered(idx_seq):
                sigs, angs = [], []
                for i in idx_seq:
                    dt, dp = rng.normal(0.0, cfg.angle_jitter_sigma, size=2)
                    a = record.leads[i].nominal.offset(float(dt), float(dp))
                    sigs.append(oracle_synthesize(traj, a)[window].astype(np.float32))
                    angs.append(a.as_tuple())
                return np.stack(sigs), np.asarray(angs, dtype=np.float32)

            r_sig, r_ang = _jittered(recorded)
            if fixed_recorded is not None and cfg.include_recorded_queries:
                e_sig, e_ang = _jittered(query[len(recorded):])
                q_sig = np.concatenate([r_sig, e_sig])
                q_ang = np.concatenate([r_ang, e_ang])
            else:
                q_sig, q_ang = _jittered(query)
            sig.append(r_sig)
            tgt.append(q_sig)
            ra.append(r_ang)
            qa.append(q_ang)
        else:
            sig.append(record.signal_matrix(recorded)[:, window])
            tgt.append(record.signal_matrix(query)[:, window])
            ra.append(_lead_angles(record, recorded))
            qa.append(_lead_angles(record, query))
        ri.append(recorded)
        qi.append(query)
    return (
        np.stack(sig),
        np.stack(ra),
        np.array(ri, dtype=np.int64),
        np.stack(qa),
        np.array(qi, dtype=np.int64),
        np.stack(tgt),
    )


def evaluate_views(
    model: GeoVTModel,
    records: Sequence[MultiViewRecord],
    recorded_idx: Sequence[int],
    query_idx: Sequence[int],
    window: tuple[int, int] | None = None,
    rec_angle_override: Optional[np.ndarray] = None,
    use_rec_lead_ids: bool = True,
    task: str = "synthesis",
    batch_records: int = 16,
) -> MetricReport:
    """Synthesize ``query_idx`` views from ``recorded_idx`` leads and score them.

    ``rec_angle_override`` replaces the nominal recorded-lead angle labels
    (the deviation study feeds corrupted labels this way).  Per-lead metrics
    are averaged over records.
    """
    model.eval()
    recorded_idx = list(recorded_idx)
    query_idx = list(query_idx)
    ds = model.config.downsample
    n = records[0].n_samples
    lo, hi = window if window is not None else (0, n)
    hi = lo + ((hi - lo) // ds) * ds
    psnr_rows, ssim_rows = [], []
    for b0 in range(0, len(records), batch_records):
        chunk = records[b0 : b0 + batch_records]
        sig = np.stack([r.signal_matrix(recorded_idx)[:, lo:hi] for r in chunk])
        tgt = np.stack([r.signal_matrix(query_idx)[:, lo:hi] for r in chunk])
        ra = np.stack([_lead_angles(r, recorded_idx) for r in chunk])
        if rec_angle_override is not None:
            ra = np.broadcast_to(np.asarray(rec_angle_override, dtype=np.float32), ra.shape).copy()
        qa = np.stack([_lead_angles(r, query_idx) for r in chunk])
        ri = np.broadcast_to(np.array(recorded_idx, dtype=np.int64), (len(chunk), len(recorded_idx)))
        out = model.forward(sig, ra, qa, rec_lead_ids=ri if use_rec_lead_ids else None)
        for k in range(len(chunk)):
            psnr_rows.append(psnr_per_lead(out.data[k], tgt[k]))
            ssim_rows.append(ssim_per_lead(out.data[k], tgt[k]))
    return MetricReport(
        task=task,
        n_input=len(recorded_idx),
        n_supervised=len(recorded_idx),
        n_synth=len(query_idx),
        psnr_per_lead=list(np.mean(psnr_rows, axis=0)),
        ssim_per_lead=list(np.mean(ssim_rows, axis=0)),
    )


# ---------------------------------------------------------------------------
# training loop core
# ---------------------------------------------------------------------------

def _check_stage1_dataset(records: Sequence[MultiViewRecord]) -> None:
    for r in records:
        if len(r.leads) < 4:
            raise ValueError(f"record {r.subject_id} has fewer than 4 leads")
        r.lead_index("I")
        r.lead_index("II")


def _log_line(cfg: StageConfig, entry: dict) -> None:
    if cfg.log_path:
        with open(cfg.log_path, "a") as f:
            f.write(json.dumps(entry) + "\n")


def train_loop(
    model: GeoVTModel,
    records: list[MultiViewRecord],
    cfg: StageConfig,
    trainable: str,
    pool: Optional[Sequence[int]],
    fixed_recorded: Optional[Sequence[int]],
) -> list[dict]:
    names = model.param_names("all")
    if trainable == "all_but_deviations":
        names = [n for n in names if n != "dev"]
    params = {n: model.params[n] for n in names}
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay, milestones=cfg.milestones, gamma=cfg.gamma)
    n_batches = max(1, len(records) // cfg.batch_size)
    dipole_cache: Optional[dict] = {} if cfg.angle_jitter_sigma > 0 else None
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        losses = []
        for b in range(n_batches):
            bseed = split(cfg.seed, f"stage{cfg.stage}-e{epoch}-b{b}")
            rng = stream(bseed, "records")
            rec_ids = list(rng.choice(len(records), size=min(cfg.batch_size, len(records)), replace=len(records) < cfg.batch_size))
            sig, ra, ri, qa, qi, tgt = _assemble_batch(
                records, rec_ids, cfg, bseed, pool, fixed_recorded, dipole_cache
            )
            sig = noise_perturb(sig, cfg.noise_sigma, split(bseed, "noise"))
            with Tape() as tape:
                out = model.forward(sig, ra, qa, rec_lead_ids=ri, query_lead_ids=qi)
                loss = mae_loss(out, tgt)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
        entry = {"stage": cfg.stage, "epoch": epoch, "lr": opt.current_lr, "loss": float(np.mean(losses))}
        history.append(entry)
        _log_line(cfg, entry)
    model.eval()
    return history


def stage1_anypre(
    records: Sequence[MultiViewRecord], model: GeoVTModel, cfg: Optional[StageConfig] = None
) -> list[dict]:
    """Any-pairs pretraining: random recorded/query splits every batch.

    All parameters train except the per-lead deviations, which stay exactly
    zero until calibration.
    """
    cfg = cfg or stage_config("I", desk=True)
    _check_stage1_dataset(records)
    return train_loop(model, list(records), cfg, "all_but_deviations", cfg.lead_pool, None)


def stage2_devcal(
    records: Sequence[MultiViewRecord], model: GeoVTModel, cfg: Optional[StageConfig] = None
) -> list[dict]:
    """Device finetuning on a fixed electrode set; one device per dataset."""
    cfg = cfg or stage_config("II", desk=True)
    devices = {r.device for r in records}
    if len(devices) > 1:
        raise ValueError(f"stage II requires a single-device dataset, got {sorted(devices)}")
    if not cfg.fixed_recorded:
        raise ValueError("stage II needs cfg.fixed_recorded (the device's electrode set)")
    return train_loop(model, list(records), cfg, "all_but_deviations", cfg.lead_pool, cfg.fixed_recorded)


@dataclass
class CalibrationSession:
    """Result of per-record angular calibration."""

    subject_id: str
    recorded_idx: tuple[int, ...]
    fitted_dev: np.ndarray  # (n_leads, 2) degrees, rows outside recorded_idx zero
    calib_window: tuple[int, int]
    eval_window: tuple[int, int]
    frozen_names: tuple[str, ...]
    history: list[dict] = field(default_factory=list)

    def fitted_for(self, lead_idx: int) -> tuple[float, float]:
        return float(self.fitted_dev[lead_idx, 0]), float(self.fitted_dev[lead_idx, 1])


def stage3_ofcal(
    record: MultiViewRecord,
    model: GeoVTModel,
    cfg: Optional[StageConfig] = None,
    recorded_idx: Optional[Sequence[int]] = None,
    rec_angle_override: Optional[np.ndarray] = None,
    validation_idx: Optional[int] = None,
) -> CalibrationSession:
    """On-the-fly calibration: fit the angular pathway on the first 5 s.

    Each iteration holds out one non-limb recorded lead as the
    self-supervision target; everything except the angle embedding and the
    per-lead deviations stays frozen.  Evaluation must use the second 5 s.

    ``validation_idx`` designates one trusted recorded lead that is never a
    fitting target; predicting it scores candidate states instead.  Training
    loss keeps falling as the fit adapts to the calibration segment, so an
    unfitted view is the only internal signal that tracks generalization.
    """
    cfg = cfg or stage_config("III")
    if record.duration < 10.0 - 1e-9:
        raise ValueError(f"record {record.subject_id} is {record.duration:.2f}s; calibration needs >= 10s")
    if recorded_idx is None:
        recorded_idx = list(cfg.fixed_recorded)
    if not recorded_idx:
        raise ValueError("no recorded leads given for calibration")
    ds = model.config.downsample
    half = record.n_samples // 2
    c_len = (half // ds) * ds
    calib = (0, c_len)
    eval_w = (half, half + c_len)

    angles = _lead_angles(record, recorded_idx)
    if rec_angle_override is not None:
        angles = np.asarray(rec_angle_override, dtype=np.float32).reshape(angles.shape)
    nonlimb = [k for k, i in enumerate(recorded_idx) if record.leads[i].kind != "limb"]
    if not nonlimb:
        raise ValueError("calibration needs at least one non-limb recorded lead to hold out")
    if validation_idx is not None:
        if validation_idx not in recorded_idx:
            raise ValueError("validation lead must be one of the recorded leads")
        v_pos = list(recorded_idx).index(validation_idx)
        cycle = [k for k in nonlimb if k != v_pos]
        if not cycle:
            raise ValueError("validation lead leaves no recorded leads to fit on")
    else:
        v_pos = None
        cycle = nonlimb

    trainable = {n: model.params[n] for n in model.param_names("angle_pathway")}
    frozen = tuple(sorted(set(model.params) - set(trainable)))
    opt = AdamW(
        trainable,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        milestones=cfg.milestones,
        gamma=cfg.gamma,
        group_overrides={"dev": {"lr": cfg.deviation_lr, "weight_decay": cfg.deviation_wd}},
    )
    sig_full = record.signal_matrix(recorded_idx)[:, calib[0] : calib[1]]

    def _hold_batch(hold):
        keep = [k for k in range(len(recorded_idx)) if k != hold]
        x = sig_full[keep][None]
        tgt = sig_full[hold][None, None]
        ra = angles[keep][None]
        qa = angles[hold][None, None]
        ri = np.array([[recorded_idx[k] for k in keep]], dtype=np.int64)
        qi = np.array([[recorded_idx[hold]]], dtype=np.int64)
        return x, tgt, ra, qa, ri, qi

    def _validation():
        holds = nonlimb if v_pos is None else [v_pos]
        total = 0.0
        for hold in holds:
            x, tgt, ra, qa, ri, qi = _hold_batch(hold)
            out = model.forward(x, ra, qa, rec_lead_ids=ri, query_lead_ids=qi)
            total += float(np.mean(np.abs(out.data - tgt)))
        return total / len(holds)

    # Self-supervised updates can drift past the useful correction, so keep
    # the angle-pathway state with the best full-cycle holdout loss; the
    # pre-update state is scored first so a no-op fit cannot end up worse.
    # The whole fit runs in eval mode: calibration is inference-time
    # adaptation, so frozen-module state (the spectral-norm power-iteration
    # vectors) must stay bit-identical; gradients reach the angle pathway
    # either way.
    history = []
    model.eval()
    best_val = _validation()
    best_state = {n: p.data.copy() for n, p in trainable.items()}
    for it in range(cfg.iterations):
        hold = cycle[it % len(cycle)]
        x, tgt, ra, qa, ri, qi = _hold_batch(hold)
        with Tape() as tape:
            out = model.forward(x, ra, qa, rec_lead_ids=ri, query_lead_ids=qi)
            loss = mae_loss(out, tgt)
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        entry = {"stage": "III", "iteration": it, "held_out": int(recorded_idx[hold]), "loss": loss.item()}
        # A dedicated validation lead is one cheap forward, so score it every
        # step; the all-leads fallback is a full cycle and stays periodic.
        if v_pos is not None or (it + 1) % len(cycle) == 0 or it == cfg.iterations - 1:
            val = _validation()
            entry["validation"] = val
            if val < best_val:
                best_val = val
                best_state = {n: p.data.copy() for n, p in trainable.items()}
        history.append(entry)
        _log_line(cfg, entry)
    for n, p in trainable.items():
        p.data[...] = best_state[n]
    model.eval()
    return CalibrationSession(
        subject_id=record.subject_id,
        recorded_idx=tuple(recorded_idx),
        fitted_dev=model.params["dev"].data.copy(),
        calib_window=calib,
        eval_window=eval_w,
        frozen_names=frozen,
        history=history,
    )
