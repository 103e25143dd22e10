"""Build IDX files for the MNIST '3', '8', '9' subset.

The source is the `mnist` npm package (v1.1.0), which bundles the first
10000 digits of the MNIST training set as per-class JSON arrays of
pixel/255 values rounded to three decimals. Rounding back to bytes
recovers the original 8-bit pixels exactly.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist389

The first 500 samples of each class become the training split and the
remaining samples of each class become the test split. Within a split the
classes are interleaved round-robin so the file order resembles MNIST.
"""

import json
import struct
import sys
from pathlib import Path

CLASSES = (3, 8, 9)
TRAIN_PER_CLASS = 500


def load_class(digits_dir, c):
    data = json.loads((digits_dir / f"{c}.json").read_text())["data"]
    assert len(data) % 784 == 0
    pixels = bytes(int(round(v * 255.0)) for v in data)
    return [pixels[i : i + 784] for i in range(0, len(pixels), 784)]


def interleave(groups):
    out = []
    longest = max(len(g) for _, g in groups)
    for i in range(longest):
        for label, g in groups:
            if i < len(g):
                out.append((label, g[i]))
    return out


def write_idx(out_dir, stem, samples):
    with open(out_dir / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), 28, 28))
        for _, img in samples:
            f.write(img)
    with open(out_dir / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for label, _ in samples))


def main():
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class = {c: load_class(digits_dir, c) for c in CLASSES}
    train = interleave([(c, per_class[c][:TRAIN_PER_CLASS]) for c in CLASSES])
    test = interleave([(c, per_class[c][TRAIN_PER_CLASS:]) for c in CLASSES])
    write_idx(out_dir, "train", train)
    write_idx(out_dir, "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
