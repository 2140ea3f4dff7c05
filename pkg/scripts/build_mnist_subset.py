"""Write the bundled 5000-sample MNIST subset as gzipped IDX files.

The full MNIST archives are not reachable from the build sandbox, so the
subset shipped inside the ``mlxtend`` wheel (500 digits per class, drawn
from the official training set) is re-encoded into the original IDX
container. Usage::

    pip download --no-deps -d /tmp/wheels mlxtend
    python scripts/build_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""

import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel, out_dir):
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()
    table = np.loadtxt(raw.splitlines(), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    assert pixels.shape[1] == 784 and pixels.min() >= 0 and pixels.max() <= 255

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = struct.pack(">IIII", 0x00000803, len(pixels), 28, 28) + pixels.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">II", 0x00000801, len(labels)) + labels.astype(np.uint8).tobytes()
    # mtime=0 keeps the archives byte-reproducible
    for name, payload in (("images-idx3-ubyte.gz", images), ("labels-idx1-ubyte.gz", label_bytes)):
        with open(out / name, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)
    print(f"wrote {len(labels)} samples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
