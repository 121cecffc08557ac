"""Inference-mode batch normalization and its folding into a preceding conv."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from snk.errors import ShapeError
from snk.tensor import Tensor

DEFAULT_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.ndim != 1:
                raise ShapeError(f"BN {name} must be 1-D")
            object.__setattr__(self, name, arr)
        n = self.gamma.size
        if not (self.beta.size == self.mean.size == self.var.size == n):
            raise ShapeError("BN parameter lengths differ")
        if np.any(self.var.astype(np.float64) + self.eps <= 0):
            raise ValueError("running_var + eps must be positive")

    @classmethod
    def identity(cls, channels: int, eps: float = DEFAULT_EPS) -> "BnParams":
        return cls(
            np.ones(channels, np.float32),
            np.zeros(channels, np.float32),
            np.zeros(channels, np.float32),
            np.ones(channels, np.float32),
            eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.size

    def scale(self) -> np.ndarray:
        return self.gamma.astype(np.float64) / np.sqrt(self.var.astype(np.float64) + self.eps)


def batch_norm(x: Tensor, bn: BnParams) -> Tensor:
    """Normalize with running statistics (no folding)."""
    if x.shape.c != bn.channels:
        raise ShapeError(f"BN has {bn.channels} channels, input has {x.shape.c}")
    scale = bn.scale()[None, :, None, None]
    out = (x.data - bn.mean.astype(np.float64)[None, :, None, None]) * scale + bn.beta[None, :, None, None]
    return Tensor.wrap(out.astype(np.float32))


def fold_bn(w, bias, bn: BnParams) -> tuple[np.ndarray, np.ndarray]:
    """Absorb ``bn`` into conv weights ``w`` (out-channel first) and ``bias``.

    ``bias`` may be None for a bias-free conv.
    """
    w = np.asarray(w, dtype=np.float32)
    c_out = w.shape[0]
    if bn.channels != c_out:
        raise ShapeError(f"BN has {bn.channels} channels, conv produces {c_out}")
    b = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if b.shape != (c_out,):
        raise ShapeError(f"bias length {b.shape} != {c_out}")
    scale = bn.scale()
    w_folded = (w * scale.reshape((-1,) + (1,) * (w.ndim - 1))).astype(np.float32)
    b_folded = (bn.beta + (b - bn.mean) * scale).astype(np.float32)
    return w_folded, b_folded
