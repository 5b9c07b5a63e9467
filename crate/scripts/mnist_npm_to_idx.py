#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-10k

Each JSON file holds a flat list of 28x28 images with pixels stored as
byte/255 rounded to three decimals, so `round(v * 255)` recovers the byte.
Images are interleaved by class (0,1,...,9,0,1,...) while every class still
has samples left, which keeps any prefix roughly balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

SIDE = 28


def main(src: Path, dst: Path) -> None:
    per_class = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(flat) // (SIDE * SIDE)
        imgs = [
            bytes(round(v * 255) for v in flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE])
            for i in range(n)
        ]
        per_class.append(imgs)

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                images.append(per_class[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    dst.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, SIDE, SIDE))
        for img in images:
            f.write(img)
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} examples to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(Path(sys.argv[1]), Path(sys.argv[2]))
