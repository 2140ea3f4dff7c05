"""Dense float64 tensors and the handful of primitives the polynomial blocks use.

A :class:`Tensor` wraps a read-only, C-contiguous ``float64`` array. Every
binary operation checks shapes explicitly; the only broadcasting allowed is
:func:`add_bias` and :func:`mul_bias`, which combine a vector with every row of
a ``(batch, n)`` matrix.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class Tensor:
    """Immutable dense real array stored row-major."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path for arrays we just produced and own
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote rank 0 to rank 1
            arr = np.array(arr, order="C")
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        arr.setflags(write=False)
        t._data = arr
        return t

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Writable copy."""
        return self._data.copy()

    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def tolist(self):
        return self._data.tolist()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={np.array2string(self._data, threshold=8)})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape)))


def ones(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.ones(tuple(shape)))


def zeros_like(a: Tensor) -> Tensor:
    return zeros(a.shape)


def ones_like(a: Tensor) -> Tensor:
    return ones(a.shape)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    _same_shape("hadamard", a, b)
    return Tensor._wrap(a.data * b.data)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor._wrap(a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor._wrap(a.data - b.data)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._wrap(a.data * float(c))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add ``bias`` (shape ``(n,)``) to each row of ``x`` (shape ``(batch, n)``).

    This is the one sanctioned broadcast: over the leading batch dimension.
    """
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: cannot add {bias.shape} to rows of {x.shape}")
    return Tensor._wrap(x.data + bias.data)


def mul_bias(x: Tensor, v: Tensor) -> Tensor:
    """Multiply each row of ``x`` (shape ``(batch, n)``) elementwise by ``v`` (shape ``(n,)``)."""
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"mul_bias: cannot scale rows of {x.shape} by {v.shape}")
    return Tensor._wrap(x.data * v.data)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``b`` may be rank-1 (matrix-vector)."""
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: expected (m,n) @ (n,[p]), got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    return Tensor._wrap(a.data @ b.data)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return Tensor._wrap(a.data.T)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(n) for n in shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return Tensor._wrap(a.data.reshape(shape))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along the leading axis."""
    n = a.shape[0] if a.ndim else 0
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice_rows: bad range [{start}, {stop}) for leading extent {n}")
    return Tensor._wrap(a.data[start:stop])


def take_rows(a: Tensor, index: Iterable[int]) -> Tensor:
    idx = np.asarray(list(index) if not isinstance(index, np.ndarray) else index, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0 or idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"take_rows: index out of range for leading extent {a.shape[0]}")
    return Tensor._wrap(a.data[idx])


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of nothing")
    ref = parts[0]
    if not -ref.ndim <= axis < ref.ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ref.ndim}")
    ax = axis % ref.ndim
    for p in parts[1:]:
        if p.ndim != ref.ndim or any(p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: {p.shape} does not line up with {ref.shape} on axis {axis}")
    return Tensor._wrap(np.concatenate([p.data for p in parts], axis=ax))


def tanh(a: Tensor) -> Tensor:
    return Tensor._wrap(np.tanh(a.data))


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a rank-0 tensor."""
    return Tensor._wrap(np.asarray(a.data.sum()))


def khatri_rao(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise Kronecker product: ``(d1, k) x (d2, k) -> (d1*d2, k)``."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"khatri_rao needs matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"khatri_rao: column counts differ ({a.shape[1]} vs {b.shape[1]})")
    d1, k = a.shape
    d2 = b.shape[0]
    return Tensor._wrap((a.data[:, None, :] * b.data[None, :, :]).reshape(d1 * d2, k))


def mode_vec_product(w: Tensor, v: Tensor, mode: int) -> Tensor:
    """Contract mode ``mode`` (1-based) of ``w`` with vector ``v``.

    The result has ``w``'s shape with that mode removed. Contracting the only
    mode of a rank-1 tensor yields a rank-0 tensor.
    """
    if v.ndim != 1:
        raise ShapeError(f"mode_vec_product: v must be a vector, got shape {v.shape}")
    if not 1 <= mode <= w.ndim:
        raise ShapeError(f"mode_vec_product: mode {mode} out of range for rank {w.ndim}")
    if w.shape[mode - 1] != v.shape[0]:
        raise ShapeError(
            f"mode_vec_product: mode-{mode} extent {w.shape[mode - 1]} != len(v) {v.shape[0]}"
        )
    return Tensor._wrap(np.tensordot(w.data, v.data, axes=([mode - 1], [0])))


def relu(a: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(a.data, 0.0))


def instance_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each sample (last axis) to zero mean and unit variance."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return Tensor._wrap((x - mu) / np.sqrt(var + eps))
