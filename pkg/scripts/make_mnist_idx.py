"""Build the gzipped IDX fixtures under tests/data from mlxtend's 5k MNIST subset.

mlxtend ships 5,000 genuine MNIST digits (500 per class) as ``mnist_5k.csv.gz``:
784 pixel columns (0-255) followed by the label.  The full MNIST archives are not
reachable from every build environment, so this subset is split per class into
400 train / 100 test digits and written in the original IDX layout.

    python scripts/make_mnist_idx.py [path/to/mnist_5k.csv.gz] [outdir]
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 400
SPLIT_SEED = 0


def _locate_csv():
    try:
        from importlib.resources import files

        return files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
    except ModuleNotFoundError:
        sys.exit("pass the path to mnist_5k.csv.gz (pip install mlxtend to locate it)")


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">iiii", 2051, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">ii", 2049, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def main(argv):
    src = Path(argv[1]) if len(argv) > 1 else _locate_csv()
    out = Path(argv[2]) if len(argv) > 2 else Path(__file__).resolve().parents[1] / "tests" / "data"
    out.mkdir(parents=True, exist_ok=True)

    with gzip.open(src, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]

    rng = np.random.default_rng(SPLIT_SEED)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.extend(idx[:TRAIN_PER_CLASS])
        test_idx.extend(idx[TRAIN_PER_CLASS:])
    train_idx = rng.permutation(train_idx)
    test_idx = rng.permutation(test_idx)

    for name, idx in (("train", train_idx), ("test", test_idx)):
        write_idx_images(out / f"mnist5k-{name}-images-idx3-ubyte.gz", pixels[idx].reshape(-1, 28, 28))
        write_idx_labels(out / f"mnist5k-{name}-labels-idx1-ubyte.gz", labels[idx])
        print(f"{name}: {len(idx)} digits -> {out}")


if __name__ == "__main__":
    main(sys.argv)
