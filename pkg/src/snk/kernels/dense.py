from __future__ import annotations

import numpy as np

from snk.errors import ShapeError
from snk.tensor import Tensor


def fully_connected(x: Tensor, w, b) -> np.ndarray:
    """Logits of shape ``(n, classes)`` from a pooled ``(n, c, 1, 1)`` tensor."""
    n, c, h, wd = x.shape
    if (h, wd) != (1, 1):
        raise ShapeError(f"fully connected layer needs 1x1 spatial input, got {h}x{wd}")
    w = np.asarray(w, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if w.ndim != 2 or w.shape[1] != c or b.shape != (w.shape[0],):
        raise ShapeError(f"weights {w.shape} / bias {b.shape} incompatible with {c} inputs")
    return x.data.reshape(n, c) @ w.T + b


def relu(x: Tensor) -> Tensor:
    return Tensor.wrap(np.maximum(x.data, np.float32(0)))
