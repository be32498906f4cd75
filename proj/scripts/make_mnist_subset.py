#!/usr/bin/env python3
"""Build an MNIST IDX subset from the digits bundled in the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10000 MNIST
digits as JSON arrays of 784 pixel values in [0, 1] with three decimals. Pixel
bytes are recovered exactly by round(v * 255). Samples are interleaved with a
fixed seed so any prefix of the files is class-mixed.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 make_mnist_subset.py package/src/digits out_dir
"""
import json
import random
import struct
import sys
from pathlib import Path


def main(digits_dir: Path, out_dir: Path) -> None:
    samples = []
    for label in range(10):
        blob = json.loads((digits_dir / f"{label}.json").read_text())
        flat = blob["data"]
        if len(flat) % 784:
            raise SystemExit(f"{label}.json: length {len(flat)} not a multiple of 784")
        for i in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784])
            samples.append((label, pixels))
    random.Random(20170101).shuffle(samples)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mnist-subset-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), 28, 28))
        for _, pixels in samples:
            f.write(pixels)
    with open(out_dir / "mnist-subset-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {len(samples)} samples to {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(Path(sys.argv[1]), Path(sys.argv[2]))
