"""Build the bundled MNIST subset fixture.

Source: the 5,000-sample MNIST extract shipped inside the mlxtend wheel
(``mlxtend/data/data/mnist_5k.csv.gz``; 784 pixel columns then the label,
500 images per digit). Draws 100 images per digit for the training split and
another disjoint 100 per digit for the test split, and writes them as gzipped
IDX files in the standard MNIST naming scheme.

Usage:
    pip download --no-deps -d /tmp/mlx mlxtend
    python scripts/build_mnist_subset.py /tmp/mlx/mlxtend-*.whl
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from torus_secagg.data import MNIST_FILES, write_idx_file

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
PER_CLASS = 100


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="mlxtend wheel or an extracted mnist_5k.csv.gz")
    parser.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src/torus_secagg/fixtures/mnist"),
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.source.endswith(".whl"):
        raw = zipfile.ZipFile(args.source).read(CSV_MEMBER)
    else:
        raw = Path(args.source).read_bytes()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",").astype(np.int64)
    pixels, labels = table[:, :784].astype(np.uint8), table[:, 784].astype(np.uint8)

    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        train_idx.append(idx[:PER_CLASS])
        test_idx.append(idx[PER_CLASS : 2 * PER_CLASS])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, idx in (("train", train_idx), ("test", test_idx)):
        write_idx_file(out / (MNIST_FILES[f"{split}_images"] + ".gz"), pixels[idx].reshape(-1, 28, 28))
        write_idx_file(out / (MNIST_FILES[f"{split}_labels"] + ".gz"), labels[idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {out}")


if __name__ == "__main__":
    main()
