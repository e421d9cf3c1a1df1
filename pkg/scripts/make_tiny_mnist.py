"""Write a Tiny-MNIST split as IDX files.

Source is the 5000-image MNIST subset bundled with mlxtend (no download).
The images are shuffled with a fixed seed before splitting.
"""

import argparse
from pathlib import Path

import numpy as np

from csgru.data import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="data/tiny_mnist")
    ap.add_argument("--n-train", type=int, default=1000)
    ap.add_argument("--n-test", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = np.random.default_rng(args.seed).permutation(len(x))
    x = np.clip(np.rint(x[order]), 0, 255).astype(np.uint8).reshape(-1, 28, 28)
    y = y[order].astype(np.uint8)
    tr = slice(0, args.n_train)
    te = slice(args.n_train, args.n_train + args.n_test)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images.idx", x[tr])
    write_idx(out / "train-labels.idx", y[tr])
    write_idx(out / "test-images.idx", x[te])
    write_idx(out / "test-labels.idx", y[te])
    print(f"wrote {args.n_train} train / {args.n_test} test to {out}")


if __name__ == "__main__":
    main()
