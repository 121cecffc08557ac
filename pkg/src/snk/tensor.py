"""Immutable dense NCHW float32 tensor and channel manipulations."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from snk.errors import ChannelRangeError, ShapeError

__all__ = ["Shape", "Tensor", "concat_channels", "add_elementwise", "slice_channels"]


class Shape(NamedTuple):
    n: int
    c: int
    h: int
    w: int


class Tensor:
    """Rank-4 float32 array in N, C, H, W order.

    The backing buffer is marked read-only; operations always return new
    tensors.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 4:
            raise ShapeError(f"expected a rank-4 NCHW array, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all shape components must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed float32 C-contiguous array without copying."""
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            return cls(arr)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ShapeError(f"bad tensor shape {arr.shape}")
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t._data = arr
        return t

    @classmethod
    def from_flat(cls, shape, values) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        values = np.asarray(values, dtype=np.float32).ravel()
        if len(shape) != 4 or values.size != int(np.prod(shape)):
            raise ShapeError(f"{values.size} values do not fill shape {shape}")
        return cls(values.reshape(shape))

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls.wrap(np.zeros(shape, dtype=np.float32))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Shape:
        return Shape(*self._data.shape)

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self._data.shape)})"


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s."""
    (an, _, ah, aw), (bn, _, bh, bw) = a.shape, b.shape
    if (an, ah, aw) != (bn, bh, bw):
        raise ShapeError(f"cannot concatenate {tuple(a.shape)} and {tuple(b.shape)}: n/h/w differ")
    return Tensor.wrap(np.concatenate([a.data, b.data], axis=1))


def add_elementwise(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {tuple(a.shape)} and {tuple(b.shape)}")
    return Tensor.wrap(a.data + b.data)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    """Channels ``[lo, hi)`` of ``x``; empty ranges are rejected."""
    c = x.shape.c
    if not (0 <= lo < hi <= c):
        raise ChannelRangeError(f"channel range [{lo}, {hi}) invalid for {c} channels")
    return Tensor.wrap(np.ascontiguousarray(x.data[:, lo:hi]))
