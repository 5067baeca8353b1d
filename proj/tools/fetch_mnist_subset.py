#!/usr/bin/env python3
"""Builds the MNIST subset used by the harness and acceptance suite.

The original IDX files come from the `mnist-data` npm package. A seeded
shuffle picks 10,000 training digits and 2,000 test digits, written as

    <out>/train-images-idx3-ubyte  <out>/train-labels-idx1-ubyte
    <out>/t10k-images-idx3-ubyte   <out>/t10k-labels-idx1-ubyte

Usage: fetch_mnist_subset.py [--out data/mnist] [--package mnist-data-1.2.6.tgz]
                             [--train 10000] [--test 2000]
"""
import argparse
import random
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

SEED = 20211104
PACKAGE = "mnist-data@1.2.6"


def read_idx(tar, name):
    raw = tar.extractfile(f"package/data/{name}").read()
    magic, count = struct.unpack(">II", raw[:8])
    if magic == 0x803:
        rows, cols = struct.unpack(">II", raw[8:16])
        size = rows * cols
        return [raw[16 + i * size:16 + (i + 1) * size] for i in range(count)]
    if magic == 0x801:
        return list(raw[8:8 + count])
    raise SystemExit(f"{name}: unexpected magic {magic:#x}")


def write_idx(pairs, img_path, lab_path):
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(pairs), 28, 28))
        for img, _ in pairs:
            f.write(img)
    with open(lab_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(pairs)))
        f.write(bytes(label for _, label in pairs))


def pick(images, labels, n, rng):
    idx = list(range(len(labels)))
    rng.shuffle(idx)
    return [(images[i], labels[i]) for i in idx[:n]]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--package", help="pre-downloaded mnist-data npm tarball")
    ap.add_argument("--train", type=int, default=10000)
    ap.add_argument("--test", type=int, default=2000)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package
        if tgz is None:
            subprocess.run(["npm", "pack", PACKAGE], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            tgz = next(Path(tmp).glob("mnist-data-*.tgz"))
        with tarfile.open(tgz) as tar:
            train_x = read_idx(tar, "train-images-idx3-ubyte")
            train_y = read_idx(tar, "train-labels-idx1-ubyte")
            test_x = read_idx(tar, "t10k-images-idx3-ubyte")
            test_y = read_idx(tar, "t10k-labels-idx1-ubyte")

    rng = random.Random(SEED)
    train = pick(train_x, train_y, args.train, rng)
    test = pick(test_x, test_y, args.test, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(train, out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
    write_idx(test, out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte")
    print(f"wrote {len(train)} training and {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
