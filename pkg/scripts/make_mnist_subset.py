"""Build the MNIST fixture under tests/data/mnist5k from a CSV of 5000 digits.

The CSV has one image per row: 784 pixel values (0-255) then the label.
mlxtend ships such a file as ``mlxtend/data/data/mnist_5k.csv.gz``; unzip
the wheel and point ``--csv`` at it.  The split is fixed by ``--seed``:
per digit, ``--train-per-digit`` images go to train and ``--test-per-digit``
to test, and both splits are shuffled.
"""

import argparse
from pathlib import Path

import numpy as np

from relkit.io import write_idx


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests/data/mnist5k")
    parser.add_argument("--train-per-digit", type=int, default=300)
    parser.add_argument("--test-per-digit", type=int, default=200)
    parser.add_argument("--seed", type=int, default=20240611)
    args = parser.parse_args(argv)

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    images = table[:, :784].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, 784].astype(np.uint8)
    rng = np.random.default_rng(args.seed)
    train, test = [], []
    for digit in range(10):
        members = rng.permutation(np.flatnonzero(labels == digit))
        need = args.train_per_digit + args.test_per_digit
        if members.size < need:
            raise SystemExit(f"digit {digit}: {members.size} images, {need} needed")
        train.extend(members[: args.train_per_digit])
        test.extend(members[args.train_per_digit : need])
    args.out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", rng.permutation(train)), ("test", rng.permutation(test))):
        write_idx(args.out / f"{name}-images-idx3-ubyte.gz", images[idx])
        write_idx(args.out / f"{name}-labels-idx1-ubyte.gz", labels[idx])
        print(f"{name}: {len(idx)} images")


if __name__ == "__main__":
    main()
