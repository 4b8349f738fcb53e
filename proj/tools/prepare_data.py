#!/usr/bin/env python3
"""Fetch the classification datasets into data/.

digits: the 8x8 handwritten digits shipped with scikit-learn, written as
        data/digits.csv (64 features in 0..16, label last).
mnist:  the ~10k image subset from the `mnist` npm package, written as IDX
        files data/mnist-images.idx3 and data/mnist-labels.idx1.
"""
import argparse
import gzip
import json
import pathlib
import random
import shutil
import struct
import subprocess
import tempfile


def prepare_digits(out: pathlib.Path) -> None:
    import sklearn.datasets
    src = pathlib.Path(sklearn.datasets.__file__).parent / "data" / "digits.csv.gz"
    with gzip.open(src, "rt") as f, open(out / "digits.csv", "w") as g:
        shutil.copyfileobj(f, g)


def mnist_package(explicit: str | None) -> pathlib.Path:
    if explicit:
        return pathlib.Path(explicit)
    tmp = pathlib.Path(tempfile.mkdtemp())
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, capture_output=True)
    tgz = next(tmp.glob("mnist-*.tgz"))
    subprocess.run(["tar", "xzf", tgz.name], cwd=tmp, check=True)
    return tmp / "package"


def prepare_mnist(out: pathlib.Path, package: pathlib.Path, seed: int) -> None:
    samples = []
    for label in range(10):
        data = json.loads((package / "src" / "digits" / f"{label}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            pix = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784])
            samples.append((pix, label))
    random.Random(seed).shuffle(samples)
    with open(out / "mnist-images.idx3", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pix, _ in samples:
            f.write(pix)
    with open(out / "mnist-labels.idx1", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--mnist-package", help="unpacked mnist npm package (default: npm pack)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepare_digits(out)
    prepare_mnist(out, mnist_package(args.mnist_package), args.seed)


if __name__ == "__main__":
    main()
