"""Train CS-GRU and the plain SpikGRU on pattern3 and print accuracy and activity."""

import argparse
from pathlib import Path

from csgru.bench import activity_table, load_task, run_experiment
from csgru.cells import ModSet
from csgru.config import ExperimentConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/pattern3.json")
    ap.add_argument("--out-dir", default="runs/pattern3")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    task = load_task(config)
    rates = []
    for cfg in (config.replace(mods=ModSet()), config):
        rec = run_experiment(cfg.validate(), Path(args.out_dir) / cfg.label().lower(), task=task)
        print(f"{rec.label}: test_acc={rec.final_test_acc:.4f} status={rec.status}")
        rates.append(("SpikGRU" if not cfg.mods.ids else "CS-GRU", rec.spikes_per_neuron_per_step))
    print(activity_table(rates))


if __name__ == "__main__":
    main()
