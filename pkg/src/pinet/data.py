"""Datasets: IDX and CSV loaders, synthetic generators and seeded splits.

Labels are always stored as a 2-D tensor: one-hot rows for classification,
real-valued targets for regression. IDX image pixels are scaled to [0, 1].
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .oracle import DensePoly, basis_size, eval_dense, monomials
from .tensor import Tensor

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
MAX_IDX_ELEMENTS = 1 << 31
SYNTHETIC_KINDS = ("xor", "circles", "polynomial-regression")


class DataFormatError(ValueError):
    """Malformed dataset file; the message says where."""


@dataclass
class Dataset:
    features: Tensor
    labels: Tensor
    task: str = "classification"
    split: str = "all"
    provenance: str = ""
    feature_names: tuple[str, ...] | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"task must be classification or regression, got {self.task!r}")
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must both be (n_samples, width) tensors")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} label rows"
            )
        if not np.all(np.isfinite(self.features.data)):
            raise ValueError("features contain non-finite values")
        if self.task == "classification":
            y = self.labels.data
            if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
                raise ValueError("classification labels must be one-hot rows")

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def output_dim(self) -> int:
        return self.labels.shape[1]

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels.data.argmax(axis=1)

    def take(self, index, split: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            features=Tensor(self.features.data[index]),
            labels=Tensor(self.labels.data[index]),
            split=self.split if split is None else split,
        )


def one_hot(ids, n_classes: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros((ids.size, n_classes))
    out[np.arange(ids.size), ids] = 1.0
    return out


# -- IDX -----------------------------------------------------------------------------


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> Tensor:
    """Decode IDX bytes: label vectors (0x801) or image stacks (0x803).

    Images come back as ``(n, rows * cols)`` with pixels divided by 255;
    label vectors come back as a ``(n,)`` tensor of the raw byte values.
    """
    if len(raw) < 4:
        raise DataFormatError(f"truncated IDX header at offset {len(raw)}: need 4 magic bytes")
    magic = struct.unpack_from(">I", raw, 0)[0]
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise DataFormatError(f"bad IDX magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"truncated IDX header at offset {len(raw)}: need {header} bytes")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    for i, n in enumerate(dims):
        if n == 0:
            raise DataFormatError(f"zero dimension size at offset {4 + 4 * i}")
    count = math.prod(dims)
    if count > MAX_IDX_ELEMENTS:
        raise DataFormatError(f"dimension overflow: {dims} holds {count} elements (offset 4)")
    if len(raw) - header < count:
        raise DataFormatError(
            f"truncated payload at offset {len(raw)}: expected {count} bytes after offset {header}"
        )
    if len(raw) - header > count:
        raise DataFormatError(f"{len(raw) - header - count} trailing bytes after offset {header + count}")
    payload = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).astype(np.float64)
    if magic == IDX_LABELS:
        return Tensor(payload)
    return Tensor(payload.reshape(dims[0], -1) / 255.0)


def load_idx(path) -> Tensor:
    """Load an IDX file (optionally gzip-compressed)."""
    return parse_idx(_read_maybe_gzip(path))


def load_idx_dataset(images_path, labels_path, classes: Sequence[int] | None = None) -> Dataset:
    """Pair an image file with a label file; ``classes`` keeps (and re-indexes) a subset of digits."""
    x = load_idx(images_path).data
    ids = load_idx(labels_path).data.astype(np.int64)
    if x.shape[0] != ids.shape[0]:
        raise DataFormatError(f"{x.shape[0]} images but {ids.shape[0]} labels")
    classes = list(range(int(ids.max()) + 1)) if classes is None else [int(c) for c in classes]
    keep = np.isin(ids, classes)
    remap = {c: i for i, c in enumerate(classes)}
    y = one_hot([remap[int(c)] for c in ids[keep]], len(classes))
    return Dataset(Tensor(x[keep]), Tensor(y), "classification", "all",
                   f"idx:{Path(images_path).name}+{Path(labels_path).name} classes={classes}",
                   label_names=tuple(str(c) for c in classes))


# -- CSV ------------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Which columns are labels and how to read them.

    For classification the single label column holds integer class ids,
    which are one-hot encoded over ``classes`` (default: sorted distinct ids).
    """

    label_columns: list[str] = field(default_factory=lambda: ["label"])
    task: str = "classification"
    feature_columns: list[str] | None = None
    classes: list[int] | None = None


def _cell(value: str, row: int, col: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise DataFormatError(f"non-numeric cell {value!r} at row {row}, column {col!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite cell {value!r} at row {row}, column {col!r}")
    return v


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Read a headed CSV; rows keep file order. Row numbers in errors count the header as row 1."""
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(c.strip() for c in rows[0]):
        raise DataFormatError(f"{path}: empty file, a header row is required")
    header = [c.strip() for c in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataFormatError(f"{path}: header but no data rows")
    for col in schema.label_columns + (schema.feature_columns or []):
        if col not in header:
            raise DataFormatError(f"{path}: missing column {col!r}")
    feats = schema.feature_columns or [c for c in header if c not in schema.label_columns]
    if not feats:
        raise DataFormatError(f"{path}: no feature columns")
    fi = [header.index(c) for c in feats]
    li = [header.index(c) for c in schema.label_columns]
    x = np.empty((len(body), len(fi)))
    y = np.empty((len(body), len(li)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataFormatError(f"row {r + 2} has {len(row)} cells, header has {len(header)}")
        x[r] = [_cell(row[i], r + 2, header[i]) for i in fi]
        y[r] = [_cell(row[i], r + 2, header[i]) for i in li]
    if schema.task == "classification":
        if len(li) != 1:
            raise DataFormatError("classification needs exactly one label column")
        ids = y[:, 0]
        if not np.all(ids == np.round(ids)):
            raise DataFormatError(f"label column {schema.label_columns[0]!r} holds non-integer class ids")
        classes = schema.classes if schema.classes is not None else sorted({int(v) for v in ids})
        remap = {c: i for i, c in enumerate(classes)}
        try:
            idx = [remap[int(v)] for v in ids]
        except KeyError as exc:
            raise DataFormatError(f"class id {exc.args[0]} not in declared classes {classes}") from None
        labels = one_hot(idx, len(classes))
        label_names = tuple(str(c) for c in classes)
    else:
        labels = y
        label_names = tuple(schema.label_columns)
    return Dataset(Tensor(x), Tensor(labels), schema.task, "all", f"csv:{Path(path).name}",
                   tuple(feats), label_names)


def write_csv(path, ds: Dataset) -> CsvSchema:
    """Write ``ds`` so that :func:`load_csv` with the returned schema reads it back exactly."""
    feats = list(ds.feature_names or [f"x{i}" for i in range(1, ds.input_dim + 1)])
    if ds.task == "classification":
        classes = [int(c) for c in ds.label_names] if ds.label_names else list(range(ds.output_dim))
        labels = ["label"]
        label_cells = [[str(classes[i])] for i in ds.class_ids]
        schema = CsvSchema(labels, "classification", feats, classes)
    else:
        labels = list(ds.label_names or [f"y{i}" for i in range(1, ds.output_dim + 1)])
        label_cells = [[repr(float(v)) for v in row] for row in ds.labels.data]
        schema = CsvSchema(labels, "regression", feats)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feats + labels)
        for xrow, lrow in zip(ds.features.data, label_cells):
            w.writerow([repr(float(v)) for v in xrow] + lrow)
    return schema


# -- synthetic tasks ---------------------------------------------------------------------


XOR_CORNERS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])


def synthetic_polynomial(input_dim: int, output_dim: int, degree: int, seed: int) -> DensePoly:
    """Seeded random polynomial with every coefficient drawn from U[-1, 1]."""
    rng = np.random.default_rng([seed, 1])
    return DensePoly(input_dim, output_dim, degree,
                     rng.uniform(-1.0, 1.0, size=(output_dim, basis_size(input_dim, degree))))


def polynomial_from_terms(input_dim: int, terms) -> DensePoly:
    """Single-output polynomial from ``[[exponents, coefficient], ...]``."""
    degree = max(sum(e) for e, _ in terms)
    basis = monomials(input_dim, degree)
    coeffs = np.zeros((1, len(basis)))
    for e, c in terms:
        e = tuple(int(v) for v in e)
        if len(e) != input_dim:
            raise ValueError(f"exponent vector {e} does not have {input_dim} entries")
        coeffs[0, basis.index(e)] += float(c)
    return DensePoly(input_dim, 1, degree, coeffs)


def make_synthetic(kind: str, n: int, seed: int = 0, params: dict | None = None) -> Dataset:
    """Generate a desk-scale task.

    * ``xor``: corners of [-1, 1]^2 in rotation, class = (signs differ);
      ``jitter`` adds N(0, jitter^2) noise to the coordinates.
    * ``circles``: alternating classes on circles of ``radii`` (default
      (1, 2)) at uniform random angles; ``jitter`` perturbs the radius.
    * ``polynomial-regression``: features U[-1, 1]^d, targets from
      ``terms`` if given, else a seeded random polynomial (``input_dim``,
      ``output_dim``, ``degree``), plus N(0, noise^2).
    """
    params = dict(params or {})
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    prov = f"synthetic:{kind} n={n} seed={seed} params={sorted(params.items())}"
    if kind == "xor":
        jitter = float(params.get("jitter", 0.0))
        corner = np.arange(n) % 4
        x = XOR_CORNERS[corner] + (rng.normal(0.0, jitter, size=(n, 2)) if jitter else 0.0)
        cls = (XOR_CORNERS[corner, 0] != XOR_CORNERS[corner, 1]).astype(np.int64)
        return Dataset(Tensor(x), Tensor(one_hot(cls, 2)), "classification", "all", prov)
    if kind == "circles":
        r0, r1 = (float(r) for r in params.get("radii", (1.0, 2.0)))
        jitter = float(params.get("jitter", 0.0))
        cls = np.arange(n) % 2
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = np.where(cls == 0, r0, r1) + (rng.normal(0.0, jitter, size=n) if jitter else 0.0)
        x = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        return Dataset(Tensor(x), Tensor(one_hot(cls, 2)), "classification", "all", prov)
    if kind == "polynomial-regression":
        noise = float(params.get("noise", 0.0))
        if "terms" in params:
            d = int(params.get("input_dim", len(params["terms"][0][0])))
            poly = polynomial_from_terms(d, params["terms"])
        else:
            d = int(params.get("input_dim", 2))
            poly = synthetic_polynomial(d, int(params.get("output_dim", 1)), int(params.get("degree", 2)), seed)
        x = rng.uniform(-1.0, 1.0, size=(n, d))
        y = eval_dense(poly, x).data
        if noise:
            y = y + rng.normal(0.0, noise, size=y.shape)
        return Dataset(Tensor(x), Tensor(y), "regression", "all", prov)
    raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded permutation split into (train, val, test); empty parts are ``None``."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    cuts = [perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]]
    return tuple(ds.take(idx, name) if idx.size else None for idx, name in zip(cuts, ("train", "val", "test")))
