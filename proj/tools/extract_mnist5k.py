#!/usr/bin/env python3
# ------------------------------------------------------------------------------
#
#   Copyright 2026 The ocarlab Authors
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------
"""Convert the 5000-sample MNIST subset shipped in the mlxtend wheel to IDX.

Usage: extract_mnist5k.py <mlxtend-*.whl> <out_dir>

Writes train-images-idx3-ubyte and train-labels-idx1-ubyte (uncompressed,
big-endian headers, uint8 payload) in label-sorted source order.
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def main():
    wheel, out_dir = sys.argv[1], sys.argv[2]
    raw = gzip.decompress(zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = pixels.shape[0]
    with open(f"{out_dir}/train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(pixels.tobytes())
    with open(f"{out_dir}/train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()
