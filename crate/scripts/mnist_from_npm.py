#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist

The package ships 10000 MNIST digits as JSON (pixels scaled to [0, 1] with
three decimals, which is enough to recover the original u8 values). The
digits are interleaved by class and split 8000/2000 into train/test.
"""
import json
import struct
import sys
from pathlib import Path


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    per_digit = []
    for d in range(10):
        data = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(data) % 784 == 0
        imgs = [
            [min(255, max(0, round(v * 255))) for v in data[i : i + 784]]
            for i in range(0, len(data), 784)
        ]
        per_digit.append(imgs)
    samples = []
    longest = max(len(p) for p in per_digit)
    for i in range(longest):
        for d in range(10):
            if i < len(per_digit[d]):
                samples.append((per_digit[d][i], d))
    n_train = len(samples) * 4 // 5
    train, test = samples[:n_train], samples[n_train:]
    dst.mkdir(parents=True, exist_ok=True)
    write_idx_images(dst / "train-images-idx3-ubyte", [s[0] for s in train])
    write_idx_labels(dst / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_idx_images(dst / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_idx_labels(dst / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
