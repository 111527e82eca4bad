"""Command-line entry point: ``posegraphnet <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import DataError, load_dataset, save_dataset, stack_inputs
from .gradcheck import model_gradient_errors
from .metrics import AlignmentError, evaluate
from .model import GROUPS, ConfigError, export_adjacency
from .skeleton import SkeletonError, default_skeleton, load_skeleton
from .synthetic import CameraModel, generate_synthetic
from .tensor import NumericalError, ShapeError, StateError
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("posegraphnet")

RUNTIME_ERRORS = (CheckpointError, DataError, ConfigError, SkeletonError, TrainingError,
                  AlignmentError, NumericalError, ShapeError, StateError, OSError)


def read_config(path) -> dict:
    """JSON object whose keys are TrainConfig fields."""
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return values


def _skeleton(args):
    return load_skeleton(Path(args.skeleton).read_text()) if args.skeleton else default_skeleton()


def cmd_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.epochs is not None:
        values["epochs"] = args.epochs
    config = TrainConfig.from_dict(values)
    skeleton = _skeleton(args)
    samples = load_dataset(args.data, skeleton)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(dataclasses.asdict(config), indent=2) + "\n")
    result = train(config, samples, skeleton, out_dir=out)
    if result.log:
        last = result.log[-1]
        print(f"trained {len(result.log)} epochs ({result.steps} steps); "
              f"val_loss {last['val_loss']:.4f}, val_mpjpe_p1 {last['val_mpjpe_p1']:.2f} mm")
    else:
        print("epochs=0: wrote initialised model")
    print(f"checkpoints in {out}")
    return 0


def cmd_eval(args) -> int:
    skeleton = _skeleton(args)
    model = load_checkpoint(args.ckpt, skeleton)
    samples = load_dataset(args.data, skeleton)
    report = evaluate(model, samples, with_scale=not args.no_scale)
    print(report.to_json())
    return 0


def cmd_infer(args) -> int:
    skeleton = _skeleton(args)
    model = load_checkpoint(args.ckpt, skeleton)
    samples = load_dataset(args.inp, skeleton, require_3d=False)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        if samples:
            x = stack_inputs(samples)
            preds = np.concatenate([model.predict(x[i:i + 256]) for i in range(0, len(x), 256)])
            for s, p in zip(samples, preds):
                rec = {"pose3d": p.tolist()}
                for key in ("subject", "action", "camera"):
                    if getattr(s, key) is not None:
                        rec[key] = getattr(s, key)
                fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(samples)} poses to {args.out}")
    return 0


def cmd_synth(args) -> int:
    samples = generate_synthetic(args.n, seed=args.seed, camera=CameraModel())
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = model_gradient_errors(hidden=args.h, seed=args.seed)
    worst = max(errors, key=errors.get)
    for name, err in errors.items():
        log.debug("%s %.3e", name, err)
    print(f"max relative error {errors[worst]:.3e} ({worst}) over {len(errors)} parameters")
    return 0 if errors[worst] < 1e-4 else 1


def cmd_export_adjacency(args) -> int:
    skeleton = _skeleton(args)
    model = load_checkpoint(args.ckpt, skeleton)
    text = export_adjacency(model, args.group, args.layer)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posegraphnet", description="2D-to-3D pose lifting with PoseGraphNet")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_skeleton(p):
        p.add_argument("--skeleton", help="skeleton CSV (name,parent); default: 17-joint Human3.6M")
        return p

    p = with_skeleton(sub.add_parser("train", help="train a model"))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", required=True, help="training data (JSON lines)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = with_skeleton(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--no-scale", action="store_true", help="rigid (no scale) Procrustes for protocol 2")
    p.set_defaults(func=cmd_eval)

    p = with_skeleton(sub.add_parser("infer", help="lift 2D poses to 3D"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--h", type=int, default=4, help="hidden width")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = with_skeleton(sub.add_parser("export-adjacency", help="print a learned normalised adjacency"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--group", required=True, choices=GROUPS)
    p.add_argument("--layer", type=int, default=0, help="layer index when adjacency is per layer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_adjacency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.n <= 0:
        parser.error("--n must be positive")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
