"""Tiny-MNIST with CS-GRU. Builds the IDX split first if it is missing."""

import argparse
from pathlib import Path

from csgru.bench import run_experiment
from csgru.config import ExperimentConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/tiny_mnist.json")
    ap.add_argument("--out-dir", default="runs/tiny_mnist")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if not Path(config.task.images).exists():
        import make_tiny_mnist

        make_tiny_mnist.main(["--out-dir", str(Path(config.task.images).parent)])
    rec = run_experiment(config.validate(), args.out_dir)
    for row in rec.rows:
        print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  test {row['test_acc']:.3f}")
    print(f"{rec.label}: test_acc={rec.final_test_acc:.4f} activity={rec.spikes_per_neuron_per_step:.4f}")


if __name__ == "__main__":
    main()
