#!/usr/bin/env python3
"""Convert the digit files of the npm `mnist` package into gzipped IDX files.

The package ships one JSON file per digit (src/digits/<d>.json) holding a flat
list of 28x28 images with pixels in [0, 1]. Examples are interleaved round-robin
over the digits so that any prefix of the output is close to class balanced.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/convert_mnist_npm.py package/src/digits data/mnist
"""

import argparse
import gzip
import json
import os
import struct
import tempfile

SIZE = 28 * 28


def read_digit(path):
    with open(path) as f:
        data = json.load(f)["data"]
    if len(data) % SIZE:
        raise SystemExit(f"{path}: {len(data)} values is not a whole number of 28x28 images")
    return [data[i:i + SIZE] for i in range(0, len(data), SIZE)]


def write_atomic(path, payload):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "wb") as raw:
        # mtime=0 keeps the gzip bytes reproducible
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(payload)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    per_digit = [read_digit(os.path.join(args.digits_dir, f"{d}.json")) for d in range(10)]
    images, labels = [], []
    for k in range(max(len(x) for x in per_digit)):
        for d in range(10):
            if k < len(per_digit[d]):
                images.append(per_digit[d][k])
                labels.append(d)

    pixels = bytearray()
    for img in images:
        pixels.extend(min(255, max(0, round(v * 255))) for v in img)
    os.makedirs(args.out_dir, exist_ok=True)
    n = len(images)
    write_atomic(os.path.join(args.out_dir, "images-idx3-ubyte.gz"),
                 struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    write_atomic(os.path.join(args.out_dir, "labels-idx1-ubyte.gz"),
                 struct.pack(">II", 0x801, n) + bytes(labels))
    counts = [labels.count(d) for d in range(10)]
    print(f"wrote {n} examples, per digit {counts}")


if __name__ == "__main__":
    main()
