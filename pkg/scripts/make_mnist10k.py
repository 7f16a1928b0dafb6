"""Convert the 10,000 MNIST digits bundled in the npm ``mnist`` package to IDX.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist10k.py package/src/digits data/mnist10k

The package stores each digit as 784 pixel intensities k/255 rounded to
three decimals; the 256 distinct values map back to bytes without loss.
Samples are interleaved with a fixed permutation so the files are not
sorted by class.
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=20240101)
    args = parser.parse_args(argv)

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        pixels = np.rint(np.asarray(raw, dtype=np.float64) * 255.0)
        pixels = pixels.reshape(-1, 28, 28).astype(np.uint8)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with gzip.GzipFile(args.out_dir / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(args.out_dir / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
