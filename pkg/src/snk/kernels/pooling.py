from __future__ import annotations

import numpy as np

from snk.errors import ShapeError
from snk.tensor import Tensor


def _out_hw(h, w, k, s, p):
    if k < 1 or s < 1 or p < 0:
        raise ShapeError(f"bad pooling window k={k}, s={s}, p={p}")
    ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"pooling {k}x{k}/{s} pad {p} collapses {h}x{w} input")
    return ho, wo


def _window_reduce(a: np.ndarray, k, s, ho, wo, op):
    acc = None
    for ky in range(k):
        for kx in range(k):
            tap = a[:, :, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
            acc = tap.copy() if acc is None else op(acc, tap, out=acc)
    return acc


def max_pool(x: Tensor, k: int, s: int, p: int = 0) -> Tensor:
    n, c, h, w = x.shape
    ho, wo = _out_hw(h, w, k, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    return Tensor.wrap(_window_reduce(xp, k, s, ho, wo, np.maximum))


def avg_pool(x: Tensor, k: int, s: int, p: int = 0) -> Tensor:
    """Window mean over in-bounds positions only (padding is not counted)."""
    n, c, h, w = x.shape
    ho, wo = _out_hw(h, w, k, s, p)
    pads = ((0, 0), (0, 0), (p, p), (p, p))
    total = _window_reduce(np.pad(x.data, pads), k, s, ho, wo, np.add)
    count = _window_reduce(np.pad(np.ones((1, 1, h, w), np.float32), pads), k, s, ho, wo, np.add)
    return Tensor.wrap(np.ascontiguousarray(total / count, dtype=np.float32))


def global_avg_pool(x: Tensor) -> Tensor:
    return Tensor.wrap(x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(np.float32))
