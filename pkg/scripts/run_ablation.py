"""Baselines plus single-mod and all-mod SpikGRU variants; writes ablation.csv."""

import argparse

from csgru.bench import ablation_grid
from csgru.cli import parse_subsets
from csgru.config import ExperimentConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/pattern3_ablation.json")
    ap.add_argument("--mods", default="1,2,3,4")
    ap.add_argument("--out-dir", default="runs/ablation")
    args = ap.parse_args(argv)

    results = ablation_grid(ExperimentConfig.load(args.config).validate(), parse_subsets(args.mods), args.out_dir)
    print(f"{'model':<22}{'acc':>8}{'rate':>10}{'red. %':>10}")
    for rec, _ in results:
        print(f"{rec.label:<22}{rec.final_test_acc:>8.3f}{rec.spikes_per_neuron_per_step:>10.4f}{rec.relative_reduction:>10.1f}")


if __name__ == "__main__":
    main()
