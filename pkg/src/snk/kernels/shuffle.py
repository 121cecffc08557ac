from __future__ import annotations

import numpy as np

from snk.errors import DivisibilityError, ShapeError
from snk.tensor import Tensor


def channel_shuffle_perm(c: int, g: int) -> np.ndarray:
    """Source channel for each output channel after a ``g``-group shuffle.

    Viewing the ``c = g * n`` channels as a ``(g, n)`` grid, transposing to
    ``(n, g)`` and flattening gives ``perm[i] = (i % g) * n + i // g``.
    """
    if c < 1 or g < 1:
        raise ShapeError(f"channels and groups must be positive, got c={c}, g={g}")
    if c % g:
        raise DivisibilityError(f"{c} channels not divisible into {g} groups")
    return np.arange(c).reshape(g, c // g).T.ravel()


def channel_shuffle(x: Tensor, g: int) -> Tensor:
    n, c, h, w = x.shape
    if c % g:
        raise DivisibilityError(f"{c} channels not divisible into {g} groups")
    out = x.data.reshape(n, g, c // g, h, w).transpose(0, 2, 1, 3, 4)
    return Tensor.wrap(np.ascontiguousarray(out).reshape(n, c, h, w))
