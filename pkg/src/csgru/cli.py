"""Command line: ``csgru {train,ablate,encode,eval}``.

Exit codes: 0 success, 2 configuration/input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .bench import ablation_grid, load_task, run_experiment
from .checkpoint import load_checkpoint, write_archive
from .config import ExperimentConfig, TaskSpec
from .errors import ConfigError, DataError, TrainingDiverged
from .training import evaluate

EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("csgru")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the run seed")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "runs", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="csgru", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True, help="JSON experiment config")
    _global_flags(p, suppress=True)

    p = sub.add_parser("ablate", help="baselines plus one run per mod subset")
    p.add_argument("--config", required=True, help="JSON base config")
    p.add_argument(
        "--mods", default="1,2,3,4",
        help="mod subsets separated by ';', mods within a subset by ',' or '-'. "
             "A single list like '1,2,3,4' runs each mod alone plus all of them together.",
    )
    _global_flags(p, suppress=True)

    p = sub.add_parser("encode", help="turn IDX images or an event CSV into a spike archive")
    p.add_argument("--in", dest="inp", required=True, help="IDX image file or t,x,y,p event CSV")
    p.add_argument("--out", required=True, help="output archive")
    p.add_argument("--labels", help="IDX label file (images only)")
    p.add_argument("--timesteps", type=int, default=10)
    p.add_argument("--limit", type=int, help="encode only the first N images")
    p.add_argument("--sensor", default="128x128", help="event sensor extent HxW")
    p.add_argument("--window", type=float, default=1.0, help="event window in seconds")
    _global_flags(p, suppress=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", help="task as inline JSON or a JSON file; default: the checkpoint's own task")
    _global_flags(p, suppress=True)
    return parser


def parse_subsets(text: str):
    groups = [g for g in text.split(";") if g.strip()]
    if len(groups) == 1 and "-" not in groups[0]:
        singles = [int(k) for k in groups[0].split(",") if k.strip()]
        subsets = [[k] for k in singles]
        if len(singles) > 1:
            subsets.append(singles)
        return subsets
    return [[int(k) for k in g.replace("-", ",").split(",") if k.strip()] for g in groups]


def _load_config(args):
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config.validate()


def cmd_train(args):
    config = _load_config(args)
    record = run_experiment(config, args.out_dir)
    print(f"{record.label}: test_acc={record.final_test_acc:.4f} "
          f"spikes_per_neuron_per_step={record.spikes_per_neuron_per_step:.4f} status={record.status}")
    if record.status != "ok":
        return EXIT_DIVERGED
    return 0


def cmd_ablate(args):
    config = _load_config(args)
    try:
        subsets = parse_subsets(args.mods)
    except ValueError as e:
        raise ConfigError(f"bad --mods {args.mods!r}") from e
    results = ablation_grid(config, subsets, args.out_dir)
    for rec, _ in results:
        print(f"{rec.label:<22} acc={rec.final_test_acc:.4f} rate={rec.spikes_per_neuron_per_step:.4f} {rec.status}")
    print(f"wrote {Path(args.out_dir) / 'ablation.csv'}")
    return 0


def cmd_encode(args):
    seed = 0 if args.seed is None else args.seed
    inp = Path(args.inp)
    if inp.suffix.lower() == ".csv":
        h, w = (int(v) for v in args.sensor.lower().split("x"))
        seq = data.load_events(inp, (h, w), args.timesteps, args.window)
        spikes, labels = seq.data[None], np.zeros(1, dtype=np.int64)
        source = "events"
    else:
        images = data.read_idx(inp).astype(np.float64) / 255.0
        if args.limit:
            images = images[:args.limit]
        if images.ndim == 3:
            images = images[:, None]
        labels = np.zeros(len(images), dtype=np.int64)
        if args.labels:
            labels = data.read_idx(args.labels).astype(np.int64)[:len(images)]
        spikes = data.rate_encode_batch(images, args.timesteps, seed)
        source = "idx"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(out, {"spikes": spikes}, {"kind": "spikes", "source": source, "seed": seed}, dtype="u1")
    write_archive(out.with_suffix(".labels.zip"), {"labels": labels}, {"kind": "labels"}, dtype="<i8")
    print(f"encoded {spikes.shape[0]} sequences of shape {spikes.shape[1:]} -> {out}")
    return 0


def cmd_eval(args):
    network, config = load_checkpoint(args.checkpoint)
    if args.task:
        text = args.task
        raw = json.loads(Path(text).read_text()) if Path(text).is_file() else json.loads(text)
        base = config.task.__dict__ | raw
        if "grid" in base:
            base["grid"] = tuple(base["grid"])
        config = config.replace(task=TaskSpec(**base))
    if args.seed is not None:
        config = config.replace(task=TaskSpec(**(config.task.__dict__ | {"seed": args.seed})))
    _, (x, y), n_classes = load_task(config)
    if n_classes != network.n_classes:
        raise ConfigError(f"task has {n_classes} classes, checkpoint {network.n_classes}")
    _, acc, rate = evaluate(network, x, y)
    result = {"checkpoint": str(args.checkpoint), "test_acc": acc, "spikes_per_neuron_per_step": rate,
              "n_test": int(len(y))}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, sort_keys=True))
    return 0


COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "encode": cmd_encode, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, json.JSONDecodeError, TypeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
