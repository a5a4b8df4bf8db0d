#!/usr/bin/env python3
"""Download MNIST and Fashion-MNIST in IDX format.

Files land under <root>/<dataset>/ as the four canonical ubyte files the
training harness expects:

    train-images-idx3-ubyte   train-labels-idx1-ubyte
    t10k-images-idx3-ubyte    t10k-labels-idx1-ubyte

The root defaults to $EPROP_DATA_DIR.
"""

import argparse
import gzip
import os
import struct
import sys
import urllib.request

MIRRORS = {
    "mnist": "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}

STEMS = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

MAGIC = {"idx3": 0x803, "idx1": 0x801}


def check_idx(path: str) -> None:
    with open(path, "rb") as f:
        header = f.read(4)
    if len(header) != 4:
        raise ValueError(f"{path}: truncated header")
    magic = struct.unpack(">i", header)[0]
    want = MAGIC["idx3" if "idx3" in path else "idx1"]
    if magic != want:
        raise ValueError(f"{path}: bad magic {magic:#x}, expected {want:#x}")


def fetch(dataset: str, root: str, force: bool) -> None:
    base = MIRRORS[dataset]
    out_dir = os.path.join(root, dataset)
    os.makedirs(out_dir, exist_ok=True)
    for stem in STEMS:
        out_path = os.path.join(out_dir, stem)
        if os.path.exists(out_path) and not force:
            print(f"  {out_path} exists, skipping")
            continue
        url = base + stem + ".gz"
        print(f"  {url}")
        with urllib.request.urlopen(url) as response:
            payload = gzip.decompress(response.read())
        tmp_path = out_path + ".part"
        with open(tmp_path, "wb") as f:
            f.write(payload)
        check_idx(tmp_path)
        os.replace(tmp_path, out_path)
        print(f"    -> {out_path} ({len(payload)} bytes)")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "datasets",
        nargs="*",
        metavar="dataset",
        help=f"datasets to fetch: {', '.join(MIRRORS)} (default: all)",
    )
    parser.add_argument(
        "--root",
        default=os.environ.get("EPROP_DATA_DIR", ""),
        help="data root directory (default: $EPROP_DATA_DIR)",
    )
    parser.add_argument("--force", action="store_true", help="re-download existing files")
    args = parser.parse_args()
    if not args.root:
        parser.error("no data root: pass --root or set EPROP_DATA_DIR")
    datasets = args.datasets or list(MIRRORS)
    for dataset in datasets:
        if dataset not in MIRRORS:
            parser.error(f"unknown dataset {dataset!r}; known: {', '.join(MIRRORS)}")
    for dataset in datasets:
        print(f"{dataset} -> {os.path.join(args.root, dataset)}")
        fetch(dataset, args.root, args.force)
    return 0


if __name__ == "__main__":
    sys.exit(main())
