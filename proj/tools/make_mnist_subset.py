#!/usr/bin/env python3
# Copyright 2026 The dgnopt Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Writes a 10k-digit MNIST subset as gzipped IDX files.

The digits come from the `mnist` npm package (1000 per class, pixel values in
[0, 1]).  Pass an unpacked package directory or let the script call `npm pack`.
"""
import argparse
import gzip
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def load_digits(package_dir):
    images, labels = [], []
    for digit in range(10):
        path = package_dir / "src" / "digits" / f"{digit}.json"
        data = json.loads(path.read_text())["data"]
        count = len(data) // 784
        for i in range(count):
            pixels = data[i * 784:(i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in pixels))
            labels.append(digit)
    return images, labels


def fetch_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tarball = next(pathlib.Path(workdir).glob("mnist-*.tgz"))
    with tarfile.open(tarball) as tar:
        tar.extractall(workdir)
    return pathlib.Path(workdir) / "package"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--package", type=pathlib.Path)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist10k"))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        package = args.package or fetch_package(tmp)
        images, labels = load_digits(package)

    order = list(range(len(labels)))
    random.Random(0).shuffle(order)
    args.out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(args.out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(args.out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(order)))
        f.write(bytes(labels[i] for i in order))
    print(f"wrote {len(order)} digits to {args.out}")


if __name__ == "__main__":
    main()
