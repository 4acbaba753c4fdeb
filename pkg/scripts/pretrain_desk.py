"""Pretrain the desk-scale trunk on the synthetic benchmark and save it.

Reproduces the headline evaluation: any-pairs pretraining on 200 subjects,
then synthesis/reconstruction PSNR on 20 held-out subjects.
"""

import argparse
import json
import pathlib

from panecg.experiments import (
    EVAL_RECORDED_IDX,
    RECON_EVAL_IDX,
    SYN_HOLDOUT_IDX,
    make_benchmark,
    train_stage1_desk,
)
from panecg.model import checkpoint_to_bytes
from panecg.training import evaluate_views


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=None, help="override desk epoch count")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results/desk_trunk.pckp"))
    args = ap.parse_args()

    train, test = make_benchmark(args.seed, args.n_train, args.n_test)
    overrides = {} if args.epochs is None else {"epochs": args.epochs}
    model, history = train_stage1_desk(train, seed=args.seed, **overrides)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(checkpoint_to_bytes(model))
    syn = evaluate_views(model, test, EVAL_RECORDED_IDX, SYN_HOLDOUT_IDX, task="synthesis")
    recon = evaluate_views(model, test, EVAL_RECORDED_IDX, RECON_EVAL_IDX, task="reconstruction")
    summary = {
        "checkpoint": str(args.out),
        "train_mae_first": history[0]["loss"],
        "train_mae_last": history[-1]["loss"],
        "synthesis": syn.to_dict(),
        "reconstruction": recon.to_dict(),
    }
    args.out.with_suffix(".json").write_text(json.dumps(summary, indent=2))
    print(f"synthesis {syn.mean_psnr:.2f} dB  reconstruction {recon.mean_psnr:.2f} dB")
    print(f"saved {args.out}")


if __name__ == "__main__":
    main()
