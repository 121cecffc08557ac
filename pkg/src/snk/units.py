"""ShuffleNet units and the comparison building blocks they are measured against.

Weights for a unit are a flat ``{name: array}`` mapping. Conv weights are
stored bias-free together with their BN statistics (``<bn>.gamma`` etc.);
BN is folded into the conv on every forward call.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from snk.errors import DivisibilityError, ShapeError
from snk.kernels import (
    BnParams,
    ConvSpec,
    avg_pool,
    channel_shuffle,
    conv2d_fast,
    fold_bn,
    relu,
)
from snk.tensor import Tensor, add_elementwise, concat_channels

COMPARISON_KINDS = ("vgg_like", "resnet", "resnext", "xception_like")
RESNEXT_CARDINALITY = 16


@dataclass(frozen=True)
class ShuffleUnitSpec:
    in_channels: int
    out_channels: int
    groups: int
    stride: int
    bottleneck_channels: int
    first_pw_grouped: bool = True
    shuffle: bool = True

    def __post_init__(self):
        c, o, g, m = self.in_channels, self.out_channels, self.groups, self.bottleneck_channels
        if min(c, o, g, m) < 1:
            raise ShapeError(f"non-positive hyper-parameter in {self}")
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if self.stride == 1 and c != o:
            raise ShapeError(f"stride-1 unit needs in == out channels, got {c} -> {o}")
        if self.stride == 2 and o <= c:
            raise ShapeError(f"stride-2 unit concatenates its input, so out ({o}) must exceed in ({c})")
        if m % g:
            raise DivisibilityError(f"bottleneck {m} not divisible by groups {g}")
        if self.branch_channels % g:
            raise DivisibilityError(f"branch output {self.branch_channels} not divisible by groups {g}")
        if self.first_pw_grouped and c % g:
            raise DivisibilityError(f"input channels {c} not divisible by groups {g}")

    @property
    def branch_channels(self) -> int:
        return self.out_channels if self.stride == 1 else self.out_channels - self.in_channels

    @property
    def pw1_groups(self) -> int:
        return self.groups if self.first_pw_grouped else 1

    def convs(self) -> dict[str, ConvSpec]:
        m = self.bottleneck_channels
        return {
            "pw1": ConvSpec(self.in_channels, m, 1, 1, 0, self.pw1_groups),
            "dw": ConvSpec.depthwise3x3(m, self.stride),
            "pw2": ConvSpec(m, self.branch_channels, 1, 1, 0, self.groups),
        }


@dataclass(frozen=True)
class ComparisonUnitSpec:
    """One of the non-ShuffleNet blocks used for equal-complexity comparisons.

    ``bottleneck_channels`` is ignored by ``vgg_like``; ``cardinality`` is
    only used by ``resnext``. ``xception_like`` units are represented as
    ``ShuffleUnitSpec`` with one group, see :func:`xception_like_spec`.
    """

    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1
    bottleneck_channels: int = 0
    cardinality: int = 1

    def __post_init__(self):
        if self.kind not in ("vgg_like", "resnet", "resnext"):
            raise ValueError(f"unknown comparison unit kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if min(self.in_channels, self.out_channels, self.cardinality) < 1:
            raise ShapeError(f"non-positive hyper-parameter in {self}")
        if self.kind != "vgg_like":
            if self.bottleneck_channels < 1:
                raise ShapeError("bottleneck units need bottleneck_channels >= 1")
            if self.bottleneck_channels % self.cardinality:
                raise DivisibilityError(
                    f"bottleneck {self.bottleneck_channels} not divisible by cardinality {self.cardinality}"
                )

    @property
    def has_projection(self) -> bool:
        return self.kind != "vgg_like" and (self.stride != 1 or self.in_channels != self.out_channels)

    def convs(self) -> dict[str, ConvSpec]:
        c, o, s = self.in_channels, self.out_channels, self.stride
        if self.kind == "vgg_like":
            return {"conv1": ConvSpec(c, o, 3, s, 1), "conv2": ConvSpec(o, o, 3, 1, 1)}
        m = self.bottleneck_channels
        g = self.cardinality if self.kind == "resnext" else 1
        convs = {
            "conv1": ConvSpec(c, m, 1),
            "conv2": ConvSpec(m, m, 3, s, 1, g),
            "conv3": ConvSpec(m, o, 1),
        }
        if self.has_projection:
            convs["proj"] = ConvSpec(c, o, 1, s, 0)
        return convs


def xception_like_spec(in_channels, out_channels, stride, bottleneck_channels, first_pw_grouped=True):
    """A ShuffleNet unit with a single group: depthwise-separable bottleneck, no shuffle effect."""
    return ShuffleUnitSpec(in_channels, out_channels, 1, stride, bottleneck_channels, first_pw_grouped)


def weight_shapes(spec) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape for every array a unit owns."""
    shapes: dict[str, tuple[int, ...]] = {}
    for name, conv in spec.convs().items():
        shapes[name] = conv.weight_shape
        for stat in ("gamma", "beta", "mean", "var"):
            shapes[f"{name}.bn.{stat}"] = (conv.out_channels,)
    return shapes


def init_weights(spec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-normal conv weights (std ``sqrt(2 / fan_in)``) and identity BN."""
    out = {}
    for name, shape in weight_shapes(spec).items():
        if name.endswith((".gamma", ".var")):
            out[name] = np.ones(shape, np.float32)
        elif ".bn." in name:
            out[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            out[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
    return out


def zero_weights(spec) -> dict[str, np.ndarray]:
    w = {k: np.zeros(s, np.float32) for k, s in weight_shapes(spec).items()}
    for k in w:
        if k.endswith((".gamma", ".var")):
            w[k][:] = 1
    return w


def bn_of(weights: Mapping[str, np.ndarray], name: str) -> BnParams:
    return BnParams(
        weights[f"{name}.bn.gamma"],
        weights[f"{name}.bn.beta"],
        weights[f"{name}.bn.mean"],
        weights[f"{name}.bn.var"],
    )


def conv_bn(x: Tensor, weights, name: str, conv: ConvSpec, conv_fn=conv2d_fast) -> Tensor:
    w, b = fold_bn(weights[name], None, bn_of(weights, name))
    return conv_fn(x, w, conv, b)


def shuffle_unit_forward(spec: ShuffleUnitSpec, x: Tensor, weights, conv_fn=conv2d_fast) -> Tensor:
    if x.shape.c != spec.in_channels:
        raise ShapeError(f"unit expects {spec.in_channels} channels, input has {x.shape.c}")
    convs = spec.convs()
    y = relu(conv_bn(x, weights, "pw1", convs["pw1"], conv_fn))
    if spec.shuffle:
        y = channel_shuffle(y, spec.groups)
    y = conv_bn(y, weights, "dw", convs["dw"], conv_fn)  # no ReLU after depthwise
    y = conv_bn(y, weights, "pw2", convs["pw2"], conv_fn)
    if spec.stride == 1:
        return relu(add_elementwise(y, x))
    return relu(concat_channels(avg_pool(x, 3, 2, 1), y))


def comparison_unit_forward(spec, x: Tensor, weights, conv_fn=conv2d_fast) -> Tensor:
    if isinstance(spec, ShuffleUnitSpec):
        if spec.groups != 1:
            raise ValueError("xception_like units have a single group")
        return shuffle_unit_forward(spec, x, weights, conv_fn)
    if x.shape.c != spec.in_channels:
        raise ShapeError(f"unit expects {spec.in_channels} channels, input has {x.shape.c}")
    convs = spec.convs()
    if spec.kind == "vgg_like":
        y = relu(conv_bn(x, weights, "conv1", convs["conv1"], conv_fn))
        return relu(conv_bn(y, weights, "conv2", convs["conv2"], conv_fn))
    y = relu(conv_bn(x, weights, "conv1", convs["conv1"], conv_fn))
    y = relu(conv_bn(y, weights, "conv2", convs["conv2"], conv_fn))
    y = conv_bn(y, weights, "conv3", convs["conv3"], conv_fn)
    shortcut = conv_bn(x, weights, "proj", convs["proj"], conv_fn) if spec.has_projection else x
    return relu(add_elementwise(y, shortcut))


def unit_forward(spec, x: Tensor, weights, conv_fn=conv2d_fast) -> Tensor:
    if isinstance(spec, ShuffleUnitSpec):
        return shuffle_unit_forward(spec, x, weights, conv_fn)
    return comparison_unit_forward(spec, x, weights, conv_fn)


def unit_output_hw(spec, h: int, w: int) -> tuple[int, int]:
    if spec.stride == 1:
        return h, w
    return (h - 1) // 2 + 1, (w - 1) // 2 + 1
