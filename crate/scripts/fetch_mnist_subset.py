#!/usr/bin/env python3
"""Write the 5,000-image MNIST subset shipped inside the mlxtend wheel as IDX files.

Usage: scripts/fetch_mnist_subset.py [OUT_DIR]   (default: data/mnist-5k)

The subset holds 500 images per digit. Rows are written in the wheel's order.
"""
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main() -> None:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist-5k")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "mlxtend==0.24.0", "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        rows = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode().splitlines()

    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        values = [int(v) for v in row.split(",")]
        assert len(values) == 785
        pixels.extend(values[:784])
        labels.append(values[784])

    n = len(rows)
    (out / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    (out / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
