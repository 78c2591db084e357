#!/usr/bin/env python3
"""Build a 5000-digit MNIST subset in IDX format.

The digits come from the `mnist_5k.csv.gz` file shipped inside the mlxtend
wheel (500 real MNIST digits per class). Per class, the first 400 digits go
to the training split and the last 100 to the test split; each split is
interleaved round-robin over classes.

    python3 scripts/make_mnist5k.py [--wheel PATH] [--out data/mnist5k]
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import tempfile
import zipfile


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp()
    subprocess.check_call(
        ["pip", "download", "--no-deps", "--quiet", "-d", tmp, "mlxtend==0.24.0"]
    )
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(out, stem, rows):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(rows)))
    for pixels, label in rows:
        images.extend(pixels)
        labels.append(label)
    with open(os.path.join(out, f"{stem}-images-idx3-ubyte"), "wb") as f:
        f.write(images)
    with open(os.path.join(out, f"{stem}-labels-idx1-ubyte"), "wb") as f:
        f.write(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/mnist5k")
    args = ap.parse_args()

    wheel = zipfile.ZipFile(find_wheel(args.wheel))
    text = gzip.decompress(wheel.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    by_class = {c: [] for c in range(10)}
    for line in text.splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        by_class[vals[-1]].append((bytes(vals[:-1]), vals[-1]))

    train, test = [], []
    for i in range(400):
        train.extend(by_class[c][i] for c in range(10))
    for i in range(400, 500):
        test.extend(by_class[c][i] for c in range(10))

    os.makedirs(args.out, exist_ok=True)
    write_idx(args.out, "train", train)
    write_idx(args.out, "test", test)


if __name__ == "__main__":
    main()
