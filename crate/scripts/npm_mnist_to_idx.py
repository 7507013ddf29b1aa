#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package to IDX.

Each class file holds flattened 28x28 images with pixels in [0, 1]. The
first 80% of every class goes to the train pair, the rest to the t10k pair.
"""
import json
import struct
import sys
from pathlib import Path

SIDE = 28


def write_idx(out_dir: Path, prefix: str, images, labels):
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            fh.write(bytes(img))
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(bytes(labels))


def main():
    if len(sys.argv) != 3:
        sys.exit("usage: npm_mnist_to_idx.py <package/src/digits> <out-dir>")
    src, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = ([], []), ([], [])
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(raw) // (SIDE * SIDE)
        cut = int(count * 0.8)
        for i in range(count):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            img = [max(0, min(255, round(v * 255))) for v in px]
            imgs, lbls = train if i < cut else test
            imgs.append(img)
            lbls.append(digit)
    write_idx(out_dir, "train", *train)
    write_idx(out_dir, "t10k", *test)
    print(f"train: {len(train[1])} images, t10k: {len(test[1])} images -> {out_dir}")


if __name__ == "__main__":
    main()
