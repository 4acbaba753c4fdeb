"""Run the evaluation studies end to end and write their JSON reports.

Studies:
  supervision      synthesis/reconstruction vs number of supervised views
  ablation         uniform fusion -> +attention -> +FiLM -> -input noise
  deviation        electrode-placement corruption, calibration recovery,
                   single-lead identification
  data-efficiency  device finetuning from the trunk vs from scratch

Each study retrains what it needs from the synthetic benchmark, so a full
`--study all` run takes roughly 15 minutes on a laptop core.
"""

import argparse
import pathlib

from panecg.experiments import (
    component_ablation,
    data_efficiency,
    deviation_study,
    make_benchmark,
    prepare_deviation_model,
    reports_to_json,
    supervision_sweep,
    train_stage1_desk,
)
from panecg.model import checkpoint_from_bytes

STUDIES = ("supervision", "ablation", "deviation", "data-efficiency")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--study", choices=STUDIES + ("all",), default="all")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ckpt", type=pathlib.Path, default=None,
                    help="pretrained trunk for data-efficiency (trains one if omitted)")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    wanted = STUDIES if args.study == "all" else (args.study,)

    def save(name: str, payload) -> None:
        path = args.out / f"{name}.json"
        path.write_text(reports_to_json(payload))
        print(f"wrote {path}")

    if "supervision" in wanted:
        train, test = make_benchmark(args.seed, 100, 16)
        save("supervision", supervision_sweep(train, test, seed=args.seed))

    if "ablation" in wanted:
        train, test = make_benchmark(args.seed, 40, 16)
        save("ablation", component_ablation(train, test, seed=args.seed))

    if "deviation" in wanted:
        train, test = make_benchmark(args.seed, 200, 20)
        model = prepare_deviation_model(train, seed=args.seed)
        save("deviation", deviation_study(model, test))

    if "data-efficiency" in wanted:
        if args.ckpt is not None:
            trunk = checkpoint_from_bytes(args.ckpt.read_bytes())
        else:
            train, _ = make_benchmark(args.seed, 200, 20)
            trunk, _ = train_stage1_desk(train, seed=args.seed)
        dev_train, dev_test = make_benchmark(args.seed + 1, 100, 10, device="lowpass_a")
        save("data_efficiency", data_efficiency(trunk, dev_train, dev_test, seed=args.seed))


if __name__ == "__main__":
    main()
