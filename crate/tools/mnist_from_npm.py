#!/usr/bin/env python3
"""Convert the digit samples bundled in the npm `mnist` package into IDX files.

The package ships 10,000 MNIST digits as per-class JSON arrays of 784 floats
in [0, 1] (three decimals). This script rescales them to bytes and writes the
standard four IDX files so `--data-dir` can point at the result:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist

Samples are interleaved by class and split deterministically: the last
`--test-per-class` samples of every class go to t10k, the rest to train.
"""

import argparse
import json
import os
import struct


def write_images(path, rows):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(r))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test-per-class", type=int, default=200)
    args = ap.parse_args()

    per_class = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        samples = [
            [min(255, max(0, round(v * 255))) for v in flat[i : i + 784]]
            for i in range(0, len(flat), 784)
        ]
        per_class.append(samples)

    train, test = [], []
    for digit, samples in enumerate(per_class):
        cut = len(samples) - args.test_per_class
        train.append([(s, digit) for s in samples[:cut]])
        test.append([(s, digit) for s in samples[cut:]])

    def interleave(groups):
        out = []
        longest = max(len(g) for g in groups)
        for i in range(longest):
            for g in groups:
                if i < len(g):
                    out.append(g[i])
        return out

    os.makedirs(args.out_dir, exist_ok=True)
    for name, groups in (("train", train), ("t10k", test)):
        items = interleave(groups)
        write_images(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte"), [s for s, _ in items])
        write_labels(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte"), [d for _, d in items])
        print(f"{name}: {len(items)} samples")


if __name__ == "__main__":
    main()
