"""Command-line entry point: data generation, training, evaluation and verification suites."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import checks
from .io import (CheckpointError, ConfigError, apply_config, load_config, load_tensors, parse_config,
                 read_dataset, read_ppm, write_dataset, write_pfm, write_ppm)
from .synthetic import SceneSpec, make_dataset
from .train import TrainConfig, build_model, evaluate_model, predict_depth, train

DATA_KEYS = ("num_samples", "seed")


def _load_checkpoint(path, config_path, height, width):
    """Rebuild a model from a checkpoint and the config written next to it."""
    path = Path(path)
    config_path = Path(config_path) if config_path else path.with_name("config.txt")
    config = load_config(config_path, TrainConfig) if config_path.exists() else TrainConfig()
    state = load_tensors(path)
    model = build_model(config, height, width)
    model.load_state_dict(state)
    return model, config


def cmd_gen_data(args) -> int:
    values = parse_config(Path(args.spec).read_text()) if args.spec else {}
    n = int(values.pop("num_samples", 200))
    seed = int(values.pop("seed", 0))
    spec = apply_config(SceneSpec, values)
    kwargs = {f.name: getattr(spec, f.name) for f in fields(SceneSpec) if f.name in values}
    samples = make_dataset(n, seed=seed, **kwargs)
    write_dataset(args.out, samples)
    print(f"wrote {n} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, TrainConfig) if args.config else TrainConfig()
    samples = read_dataset(args.data)
    eval_samples = read_dataset(args.eval_data) if args.eval_data else None
    result = train(config, samples, out_dir=args.out, eval_samples=eval_samples)
    print(f"trained {config.epochs} epochs in {result.seconds:.1f}s; checkpoint in {args.out}")
    return 0


def cmd_eval(args) -> int:
    samples = read_dataset(args.data)
    H, W = samples[0].gt_depth.shape
    model, config = _load_checkpoint(args.checkpoint, args.config, H, W)
    result = evaluate_model(model, samples, config.eval_cap)
    for k, v in result.as_dict().items():
        print(f"{k}\t{v:.6f}")
    return 0


def cmd_dump_depth(args) -> int:
    image = read_ppm(args.image)
    _, H, W = image.shape
    model, _ = _load_checkpoint(args.checkpoint, args.config, H, W)
    depth = predict_depth(model, image[None])[0]
    out = Path(args.out)
    if out.suffix.lower() == ".pfm":
        write_pfm(out, depth)
    else:
        write_ppm(out, 1.0 / depth)
    print(f"depth range [{depth.min():.4g}, {depth.max():.4g}] written to {out}")
    return 0


def _report(results) -> int:
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_grad_check(args) -> int:
    return _report(checks.run_gradient_checks(args.module, instances=args.instances, seed=args.seed))


def cmd_oracle_check(args) -> int:
    return _report(checks.run_oracle_checks(instances=args.instances, seed=args.seed))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semdepth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch training lines")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a synthetic dataset")
    s.add_argument("--spec", help="key=value file: num_samples, seed and scene fields")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="key=value training config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eval-data", help="held-out dataset evaluated after every epoch")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="depth metrics, edge F-score and mIoU of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="defaults to config.txt next to the checkpoint")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", help="float64 finite-difference gradient suite")
    s.add_argument("--module", default="all", choices=("all",) + checks.MODULES)
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("oracle-check", help="compare against brute-force scalar oracles")
    s.add_argument("--instances", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("dump-depth", help="predict depth for one PPM image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True, help=".pfm for raw depth, anything else for a disparity PPM")
    s.add_argument("--config", help="defaults to config.txt next to the checkpoint")
    s.set_defaults(func=cmd_dump_depth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
