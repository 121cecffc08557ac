"""2-D convolution: a direct reference loop nest and an im2col/GEMM fast path."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from snk.errors import DivisibilityError, ShapeError
from snk.tensor import Tensor

# output pixels per GEMM tile; keeps a 3x3 patch matrix for a few hundred
# channels inside L2
TILE_COLUMNS = 4096


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    groups: int = 1
    depthwise: bool = False

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.groups) < 1:
            raise ShapeError(f"non-positive conv hyper-parameter in {self}")
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if self.pad < 0:
            raise ShapeError("negative padding")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DivisibilityError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )
        if self.depthwise and not (
            self.groups == self.in_channels == self.out_channels and self.kernel == 3
        ):
            raise ShapeError("depthwise conv needs groups == in == out channels and a 3x3 kernel")

    @classmethod
    def depthwise3x3(cls, channels: int, stride: int = 1) -> "ConvSpec":
        return cls(channels, channels, 3, stride, 1, channels, True)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        return ho, wo

    def mult_adds(self, h: int, w: int) -> int:
        """Multiply-accumulates for one image of size ``h x w``."""
        ho, wo = self.output_hw(h, w)
        per_pixel = self.out_channels * (self.in_channels // self.groups) * self.kernel * self.kernel
        return ho * wo * per_pixel


def _check(x: Tensor, w: np.ndarray, spec: ConvSpec, bias) -> tuple[np.ndarray, int, int]:
    n, c, h, wd = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"input has {c} channels, conv expects {spec.in_channels}")
    w = np.asarray(w, dtype=np.float32)
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {w.shape} != expected {spec.weight_shape}")
    if bias is not None and np.shape(bias) != (spec.out_channels,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({spec.out_channels},)")
    ho, wo = spec.output_hw(h, wd)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{h}x{wd} input too small for kernel {spec.kernel}, pad {spec.pad}")
    return w, ho, wo


@numba.njit(cache=True)
def _direct_conv(x, w, out, stride, pad, groups):
    n, c_in, h, wd = x.shape
    c_out, cg_in, k, _ = w.shape
    _, _, ho, wo = out.shape
    cg_out = c_out // groups
    for b in range(n):
        for oc in range(c_out):
            g = oc // cg_out
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cg_in):
                        for ky in range(k):
                            iy = oy * stride - pad + ky
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(k):
                                ix = ox * stride - pad + kx
                                if ix < 0 or ix >= wd:
                                    continue
                                acc += x[b, g * cg_in + ic, iy, ix] * w[oc, ic, ky, kx]
                    out[b, oc, oy, ox] = acc


def conv2d_naive(x: Tensor, w, spec: ConvSpec, bias=None) -> Tensor:
    """Direct convolution; the reference every other path is checked against.

    Accumulates in float64 and rounds once, so it is at least as accurate as
    the fast path. Depthwise specs run through the same loop nest.
    """
    w, ho, wo = _check(x, w, spec, bias)
    out = np.empty((x.shape.n, spec.out_channels, ho, wo), dtype=np.float64)
    _direct_conv(x.data.astype(np.float64), w.astype(np.float64), out, spec.stride, spec.pad, spec.groups)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return Tensor.wrap(out.astype(np.float32))


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _depthwise(xd: np.ndarray, w: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    xp = _pad(xd, spec.pad)
    s, k = spec.stride, spec.kernel
    out = np.zeros((xd.shape[0], spec.out_channels, ho, wo), dtype=np.float32)
    for ky in range(k):
        for kx in range(k):
            tap = w[:, 0, ky, kx][None, :, None, None]
            out += tap * xp[:, :, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
    return out


def _pointwise(xd: np.ndarray, w: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, g = xd.shape[0], spec.groups
    if spec.stride > 1:
        xd = xd[:, :, :: spec.stride, :: spec.stride]
    cols = np.ascontiguousarray(xd).reshape(n, g, spec.in_channels // g, ho * wo)
    wg = w.reshape(g, spec.out_channels // g, spec.in_channels // g)
    out = np.matmul(wg[None], cols)  # g independent GEMMs per image
    return out.reshape(n, spec.out_channels, ho, wo)


def _im2col_gemm(xd: np.ndarray, w: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, g, k, s = xd.shape[0], spec.groups, spec.kernel, spec.stride
    cg_in, cg_out = spec.in_channels // g, spec.out_channels // g
    windows = sliding_window_view(_pad(xd, spec.pad), (k, k), axis=(2, 3))[:, :, ::s, ::s]
    wmat = w.reshape(g, cg_out, cg_in * k * k)
    out = np.empty((n, spec.out_channels, ho, wo), dtype=np.float32)
    rows = max(1, TILE_COLUMNS // wo)
    for b in range(n):
        for gi in range(g):
            src = windows[b, gi * cg_in : (gi + 1) * cg_in]
            dst = out[b, gi * cg_out : (gi + 1) * cg_out]
            for r0 in range(0, ho, rows):
                r1 = min(ho, r0 + rows)
                patch = src[:, r0:r1].transpose(0, 3, 4, 1, 2).reshape(cg_in * k * k, (r1 - r0) * wo)
                dst[:, r0:r1] = (wmat[gi] @ patch).reshape(cg_out, r1 - r0, wo)
    return out


def conv2d_fast(x: Tensor, w, spec: ConvSpec, bias=None) -> Tensor:
    """Production convolution path.

    Depthwise layers use a direct shifted-accumulate kernel, 1x1 layers a
    batched per-group GEMM, everything else tiled im2col + GEMM.
    """
    w, ho, wo = _check(x, w, spec, bias)
    xd = x.data
    if spec.groups == spec.in_channels == spec.out_channels:
        out = _depthwise(xd, w, spec, ho, wo)
    elif spec.kernel == 1 and spec.pad == 0:
        out = _pointwise(xd, w, spec, ho, wo)
    else:
        out = _im2col_gemm(xd, w, spec, ho, wo)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float32)[None, :, None, None]
    return Tensor.wrap(np.ascontiguousarray(out, dtype=np.float32))
