"""Boot the synthesis service with a ready-to-use model and sample records.

Trains a quick desk trunk if no checkpoint is given (a few minutes), drops a
couple of synthetic records into the data directory, and serves the API plus
the viewer (if frontend/dist exists) on the given port.
"""

import argparse
import pathlib

import uvicorn

from panecg.experiments import make_benchmark, train_stage1_desk
from panecg.model import checkpoint_from_bytes, checkpoint_to_bytes
from panecg.records import record_to_bytes
from panecg.service import create_app


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", type=pathlib.Path, default=None)
    ap.add_argument("--state", type=pathlib.Path, default=pathlib.Path("demo_state"))
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8072)
    ap.add_argument("--quick", action="store_true", help="tiny trunk (seconds, low quality)")
    args = ap.parse_args()

    if args.ckpt is not None:
        model = checkpoint_from_bytes(args.ckpt.read_bytes())
    else:
        n_train, overrides = (24, {"epochs": 6}) if args.quick else (200, {})
        train, _ = make_benchmark(0, n_train, 0)
        model, _ = train_stage1_desk(train, seed=0, **overrides)
        args.state.mkdir(parents=True, exist_ok=True)
        (args.state / "demo_trunk.pckp").write_bytes(checkpoint_to_bytes(model))

    data_dir = args.state / "records"
    data_dir.mkdir(parents=True, exist_ok=True)
    _, samples = make_benchmark(7, 0, 3)
    for r in samples:
        (data_dir / f"{r.subject_id}.pecg").write_bytes(record_to_bytes(r))

    app = create_app(model=model, data_dir=data_dir, state_dir=args.state / "sessions")
    print(f"serving on http://{args.host}:{args.port}  (viewer at /ui when frontend/dist exists)")
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
