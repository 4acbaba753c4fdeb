"""Command-line entry points: dataset generation, staged training,
evaluation, the trend studies, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .experiments import (
    EVAL_RECORDED_IDX,
    RECON_EVAL_IDX,
    SYN_HOLDOUT_IDX,
    component_ablation,
    data_efficiency,
    desk_model_config,
    deviation_study,
    prepare_deviation_model,
    make_benchmark,
    reports_to_json,
    supervision_sweep,
    train_pool,
    train_stage1_desk,
)
from .model import GeoVTModel, ModelConfig, load_checkpoint, save_checkpoint
from .records import DatasetManifest, GeneratorConfig, generate_dataset, load_dataset
from .training import evaluate_views, stage2_devcal, stage3_ofcal, stage_config, stage1_anypre


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _coerce(dc_cls, kv: dict[str, str]) -> dict:
    """Map key=value strings onto a dataclass's field types."""
    by_name = {f.name: f for f in fields(dc_cls)}
    out = {}
    for k, v in kv.items():
        if k not in by_name:
            raise ValueError(f"unknown {dc_cls.__name__} field {k!r}; known: {sorted(by_name)}")
        t = str(by_name[k].type)
        if "bool" in t:
            out[k] = v.lower() in ("1", "true", "yes")
        elif "tuple" in t:
            out[k] = tuple(int(p) if p.strip().lstrip("-").isdigit() else float(p) for p in v.split(","))
        elif "int" in t:
            out[k] = int(v)
        elif "float" in t:
            out[k] = float(v)
        else:
            out[k] = v
    return out


def _model_config(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        kv = _parse_kv(Path(args.model_config).read_text())
        return ModelConfig(**_coerce(ModelConfig, kv))
    return desk_model_config()


def _overrides(args) -> dict:
    kv = {}
    for item in getattr(args, "set", None) or []:
        k, v = item.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def _load_split(data_dir: str):
    manifest, records = load_dataset(data_dir)
    by_subject = {r.subject_id: r for r in records}
    train = [by_subject[s] for s in manifest.splits.get("train", []) if s in by_subject]
    test = [by_subject[s] for s in manifest.splits.get("test", []) if s in by_subject]
    if not train:
        train, test = records, []
    return train, test


def cmd_gen_dataset(args) -> int:
    cfg = GeneratorConfig.parse(Path(args.config).read_text()) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {len(manifest.records)} records to {args.out} "
          f"(train {len(manifest.splits['train'])} / test {len(manifest.splits['test'])})")
    return 0


def cmd_train(args) -> int:
    train, test = _load_split(args.data)
    overrides = _coerce(type(stage_config("I")), _overrides(args)) if _overrides(args) else {}
    stage = str(args.stage)
    if stage == "1":
        cfg = stage_config("I", desk=not args.paper, seed=args.seed, lead_pool=train_pool(),
                           log_path=args.log, **overrides)
        model = load_checkpoint(args.ckpt_in) if args.ckpt_in else GeoVTModel(_model_config(args), seed=args.seed)
        history = stage1_anypre(train, model, cfg)
    elif stage == "2":
        if not args.ckpt_in:
            raise SystemExit("stage 2 requires --ckpt-in (stage-1 checkpoint)")
        cfg = stage_config("II", desk=not args.paper, seed=args.seed, lead_pool=train_pool(),
                           fixed_recorded=EVAL_RECORDED_IDX, log_path=args.log, **overrides)
        model = load_checkpoint(args.ckpt_in)
        history = stage2_devcal(train, model, cfg)
    else:
        if not args.ckpt_in:
            raise SystemExit("stage 3 requires --ckpt-in")
        model = load_checkpoint(args.ckpt_in)
        record = next((r for r in train + test if r.subject_id == args.record), None) if args.record else train[0]
        if record is None:
            raise SystemExit(f"record {args.record!r} not found in dataset")
        cfg = stage_config("III", seed=args.seed, log_path=args.log, **overrides)
        session = stage3_ofcal(record, model, cfg, recorded_idx=EVAL_RECORDED_IDX)
        history = session.history
        for i in session.recorded_idx:
            dt, dp = session.fitted_for(i)
            print(f"lead {record.leads[i].name}: dtheta {dt:+.2f} deg, dphi {dp:+.2f} deg")
    if args.ckpt_out:
        save_checkpoint(model, args.ckpt_out)
        print(f"checkpoint -> {args.ckpt_out}")
    print(f"final loss {history[-1]['loss']:.5f} over {len(history)} {'epochs' if stage != '3' else 'iterations'}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.ckpt)
    _, test = _load_split(args.dataset)
    if not test:
        test, _ = _load_split(args.dataset)
    queries = RECON_EVAL_IDX if args.task == "rec" else SYN_HOLDOUT_IDX
    task = "reconstruction" if args.task == "rec" else "synthesis"
    report = evaluate_views(model, test, EVAL_RECORDED_IDX, queries, task=task)
    print(f"{task}: PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f} over {len(test)} records")
    if args.out:
        report.save(args.out)
        print(f"report -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    if args.study == "supervision":
        train, test = make_benchmark(seed, 100, 16)
        results = supervision_sweep(train, test, seed=seed)
        doc = {c: {k: r.to_dict() for k, r in v.items()} for c, v in results.items()}
    elif args.study == "ablation":
        train, test = make_benchmark(seed, 40, 16)
        results = component_ablation(train, test, seed=seed)
        doc = {c: {k: r.to_dict() for k, r in v.items()} for c, v in results.items()}
    elif args.study == "deviation":
        train, test = make_benchmark(seed, 200, 20)
        if args.ckpt:
            model = load_checkpoint(args.ckpt)
        else:
            model = prepare_deviation_model(train, seed=seed)
        doc = deviation_study(model, test)
    else:  # data-efficiency
        if not args.ckpt:
            raise SystemExit("data-efficiency study requires --ckpt (pretrained stage-1 model)")
        model = load_checkpoint(args.ckpt)
        train, test = make_benchmark(seed + 1, 100, 10, device="lowpass_a")
        doc = data_efficiency(model, train, test, seed=seed)
    path = out_dir / f"{args.study}.json"
    path.write_text(reports_to_json(doc))
    print(f"{args.study} results -> {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    port = int(os.environ.get("PANECG_PORT", args.port))
    workers = int(os.environ.get("PANECG_WORKERS", args.workers))
    app = create_app(
        checkpoint=args.ckpt,
        data_dir=Path(args.data) / "records",
        state_dir=Path(args.data) / "sessions",
        max_workers=workers,
    )
    uvicorn.run(app, host=args.host, port=port)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="panecg", description="panoramic ECG view synthesis")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-dataset", help="generate the synthetic benchmark")
    g.add_argument("--config", help="key=value generator config file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(fn=cmd_gen_dataset)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", required=True, choices=["1", "2", "3"])
    t.add_argument("--data", required=True, help="dataset directory (gen-dataset output)")
    t.add_argument("--ckpt-in")
    t.add_argument("--ckpt-out")
    t.add_argument("--model-config", help="key=value ModelConfig file")
    t.add_argument("--record", help="subject id for stage 3")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--paper", action="store_true", help="full-length schedules")
    t.add_argument("--log", help="JSONL training log path")
    t.add_argument("--set", action="append", metavar="KEY=VAL", help="stage-config override")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--task", choices=["rec", "syn"], default="syn")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a trend study")
    s.add_argument("study", choices=["supervision", "ablation", "deviation", "data-efficiency"])
    s.add_argument("--out", required=True)
    s.add_argument("--ckpt", help="pretrained checkpoint (optional for deviation, required for data-efficiency)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("serve", help="start the panorama HTTP service")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", default="service-data")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8080)
    v.add_argument("--workers", type=int, default=2)
    v.set_defaults(fn=cmd_serve)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
