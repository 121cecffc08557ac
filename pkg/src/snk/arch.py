"""Whole-network descriptions: ShuffleNet builders and complexity-matched baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from snk import units
from snk.errors import SearchError, ShapeError
from snk.kernels import ConvSpec, conv2d_fast, fully_connected, global_avg_pool, max_pool, relu
from snk.tensor import Tensor
from snk.units import ComparisonUnitSpec, ShuffleUnitSpec

log = logging.getLogger(__name__)

# stage output channels of the 1x networks, keyed by group count
STAGE_CHANNELS = {
    1: (144, 288, 576),
    2: (200, 400, 800),
    3: (240, 480, 960),
    4: (272, 544, 1088),
    8: (384, 768, 1536),
}
STEM_CHANNELS = 24
STAGE_REPEATS = (3, 7, 3)  # stride-1 units following each stage's stride-2 unit
NUM_CLASSES = 1000


@dataclass(frozen=True)
class StemSpec:
    """3x3 stride-2 conv + BN + ReLU on the RGB image."""

    in_channels: int = 3
    out_channels: int = STEM_CHANNELS
    kernel: int = 3
    stride: int = 2

    def convs(self) -> dict[str, ConvSpec]:
        return {"conv": ConvSpec(self.in_channels, self.out_channels, self.kernel, self.stride, self.kernel // 2)}


@dataclass(frozen=True)
class MaxPoolSpec:
    kernel: int = 3
    stride: int = 2
    pad: int = 1


@dataclass(frozen=True)
class GlobalPoolSpec:
    pass


@dataclass(frozen=True)
class FCSpec:
    in_features: int
    out_features: int = NUM_CLASSES


UNIT_TYPES = (ShuffleUnitSpec, ComparisonUnitSpec)


def layer_weight_shapes(config) -> dict[str, tuple[int, ...]]:
    if isinstance(config, (StemSpec, *UNIT_TYPES)):
        return units.weight_shapes(config)
    if isinstance(config, FCSpec):
        return {"weight": (config.out_features, config.in_features), "bias": (config.out_features,)}
    return {}


def init_layer_weights(config, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if isinstance(config, FCSpec):
        std = math.sqrt(2.0 / config.in_features)
        return {
            "weight": (rng.standard_normal((config.out_features, config.in_features)) * std).astype(np.float32),
            "bias": np.zeros(config.out_features, np.float32),
        }
    if layer_weight_shapes(config):
        return units.init_weights(config, rng)
    return {}


@dataclass(frozen=True, eq=False)
class Layer:
    config: object
    weights: Mapping[str, np.ndarray] | None = None

    @property
    def kind(self) -> str:
        c = self.config
        if isinstance(c, ComparisonUnitSpec):
            return c.kind
        return {
            StemSpec: "stem",
            MaxPoolSpec: "maxpool",
            ShuffleUnitSpec: "shuffle_unit",
            GlobalPoolSpec: "globalpool",
            FCSpec: "fc",
        }[type(c)]


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    layers: tuple[Layer, ...]
    groups: int = 1
    scale: float = 1.0
    shallow: bool = False
    seed: int = 0
    name: str = field(default="", compare=False)

    def architecture(self) -> tuple:
        """Hyper-parameters of every layer, without weights."""
        return tuple(layer.config for layer in self.layers)

    @property
    def materialized(self) -> bool:
        return all(l.weights is not None or not layer_weight_shapes(l.config) for l in self.layers)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        if (self.groups, self.scale, self.shallow, self.seed) != (other.groups, other.scale, other.shallow, other.seed):
            return False
        if self.architecture() != other.architecture():
            return False
        for a, b in zip(self.layers, other.layers):
            # a weightless layer may carry None or {} depending on how it was built
            if (not a.weights) and (not b.weights):
                continue
            if (a.weights is None) != (b.weights is None):
                return False
            if a.weights is not None:
                if a.weights.keys() != b.weights.keys():
                    return False
                if not all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights):
                    return False
        return True

    __hash__ = None

    def named_layers(self) -> list[tuple[str, Layer]]:
        out, stage, idx = [], 1, 0
        for layer in self.layers:
            cfg = layer.config
            if isinstance(cfg, StemSpec):
                name = "conv1"
            elif isinstance(cfg, UNIT_TYPES):
                if cfg.stride == 2:
                    stage, idx = stage + 1, 0
                idx += 1
                name = f"stage{stage}.unit{idx}"
            else:
                name = layer.kind
            out.append((name, layer))
        return out

    def units(self) -> list:
        return [l.config for l in self.layers if isinstance(l.config, UNIT_TYPES)]

    def stage_widths(self) -> tuple[int, ...]:
        return tuple(u.out_channels for u in self.units() if u.stride == 2)

    def stage_repeats(self) -> tuple[int, ...]:
        """Number of stride-1 units following each stride-2 unit."""
        reps: list[int] = []
        for u in self.units():
            if u.stride == 2:
                reps.append(0)
            elif reps:
                reps[-1] += 1
        return tuple(reps)

    def weighted_layer_count(self) -> int:
        """Stem + three convs per unit + FC (projection shortcuts not counted)."""
        n = 0
        for layer in self.layers:
            cfg = layer.config
            if isinstance(cfg, (StemSpec, FCSpec)):
                n += 1
            elif isinstance(cfg, ShuffleUnitSpec):
                n += 3
            elif isinstance(cfg, ComparisonUnitSpec):
                n += 2 if cfg.kind == "vgg_like" else 3
        return n

    def materialize(self, seed: int | None = None) -> "NetworkSpec":
        seed = self.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        layers = tuple(Layer(l.config, init_layer_weights(l.config, rng)) for l in self.layers)
        return NetworkSpec(layers, self.groups, self.scale, self.shallow, seed, self.name)

    def structure(self) -> "NetworkSpec":
        return NetworkSpec(tuple(Layer(l.config) for l in self.layers), self.groups, self.scale, self.shallow, self.seed, self.name)


def round_to_group(x: float, g: int) -> int:
    """Nearest positive multiple of ``g``; halfway cases round up."""
    return max(1, math.floor(x / g + 0.5)) * g


def _scaled(channels: float, scale: float, g: int, what: str) -> int:
    if math.floor(channels * scale + 0.5) < 1:
        raise ShapeError(f"{what}: {channels} channels at scale {scale} collapse to zero")
    return round_to_group(channels * scale, g)


def _stage_layers(stem_out: int, widths: Sequence[int], repeats: Sequence[int], make_unit) -> list[Layer]:
    layers = [Layer(StemSpec(out_channels=stem_out)), Layer(MaxPoolSpec())]
    c = stem_out
    for stage, (o, rep) in enumerate(zip(widths, repeats)):
        layers.append(Layer(make_unit(c, o, 2, stage == 0)))
        for _ in range(rep):
            layers.append(Layer(make_unit(o, o, 1, False)))
        c = o
    layers += [Layer(GlobalPoolSpec()), Layer(FCSpec(c))]
    return layers


def shallow_repeats(repeats: Sequence[int]) -> tuple[int, ...]:
    return tuple(r // 2 for r in repeats)


def build_shufflenet(
    groups: int = 3,
    scale: float = 1.0,
    shallow: bool = False,
    seed: int = 42,
    stage_channels: Sequence[int] | None = None,
    materialize: bool = True,
) -> NetworkSpec:
    """ShuffleNet ``scale``x with ``groups`` groups in its pointwise layers.

    Channel counts come from the 1x table for g in {1, 2, 3, 4, 8}; other
    group counts need explicit ``stage_channels``. Every scaled width,
    including the stem, is rounded to a multiple of ``groups`` so that all
    grouped layers stay valid.
    """
    if not (isinstance(scale, (int, float)) and math.isfinite(scale) and scale > 0):
        raise ValueError(f"scale must be a positive number, got {scale!r}")
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    if stage_channels is None:
        if groups not in STAGE_CHANNELS:
            raise ValueError(f"no reference channels for g={groups}; pass stage_channels explicitly")
        stage_channels = STAGE_CHANNELS[groups]
    if len(stage_channels) != 3:
        raise ValueError("expected three stage widths")
    g = groups
    stem = _scaled(STEM_CHANNELS, scale, g, "conv1")
    widths = [_scaled(ch, scale, g, f"stage{i + 2}") for i, ch in enumerate(stage_channels)]
    repeats = shallow_repeats(STAGE_REPEATS) if shallow else STAGE_REPEATS

    def make_unit(c, o, stride, first):
        return ShuffleUnitSpec(c, o, g, stride, round_to_group(o / 4, g), first_pw_grouped=not first)

    net = NetworkSpec(tuple(_stage_layers(stem, widths, repeats, make_unit)), g, float(scale), shallow, seed,
                      name=f"shufflenet_{scale:g}x_g{g}{'_shallow' if shallow else ''}")
    return net.materialize() if materialize else net


def _comparison_unit_factory(kind: str):
    if kind == "xception_like":
        def make(c, o, stride, first):
            return units.xception_like_spec(c, o, stride, round_to_group(o / 4, 1), first_pw_grouped=not first)
    elif kind == "vgg_like":
        def make(c, o, stride, first):
            return ComparisonUnitSpec("vgg_like", c, o, stride)
    elif kind == "resnet":
        def make(c, o, stride, first):
            return ComparisonUnitSpec("resnet", c, o, stride, round_to_group(o / 4, 1))
    elif kind == "resnext":
        card = units.RESNEXT_CARDINALITY

        def make(c, o, stride, first):
            return ComparisonUnitSpec("resnext", c, o, stride, round_to_group(o / 2, card), card)
    else:
        raise ValueError(f"unknown comparison kind {kind!r}; expected one of {units.COMPARISON_KINDS}")
    return make


def _widths_for(stage4: int) -> tuple[int, int, int]:
    return (max(1, math.floor(stage4 / 4 + 0.5)), max(1, math.floor(stage4 / 2 + 0.5)), stage4)


def build_comparison(
    kind: str,
    reference: NetworkSpec,
    tolerance: float = 0.02,
    resolution: tuple[int, int] = (224, 224),
    max_tolerance: float = 0.10,
) -> NetworkSpec:
    """Swap the reference's stage units for ``kind`` blocks at equal complexity.

    The stem, pooling, classifier and stage layout are kept; the stage
    widths ``(w/4, w/2, w)`` are searched over integer ``w`` so the total
    mult-adds land within ``tolerance`` of the reference. If no width does,
    the tolerance is widened in 1% steps up to ``max_tolerance``.
    """
    from snk.analysis import count_flops

    make = _comparison_unit_factory(kind)
    stem = next(l.config for l in reference.layers if isinstance(l.config, StemSpec))
    repeats = reference.stage_repeats()
    target = count_flops(reference, resolution).total_mult_adds

    def candidate(widths):
        return NetworkSpec(
            tuple(_stage_layers(stem.out_channels, widths, repeats, make)),
            1, reference.scale, reference.shallow, reference.seed,
        )

    def error(widths):
        try:
            return abs(count_flops(candidate(widths), resolution).total_mult_adds - target) / target
        except ShapeError:
            return None

    def flops_below(w4):
        try:
            return count_flops(candidate(_widths_for(w4)), resolution).total_mult_adds < target
        except ShapeError:  # stride-2 concat units need stage2 wider than the stem
            return True

    lo, hi = 1, 2
    while flops_below(hi):
        lo, hi = hi, hi * 2
        if hi > 1 << 20:
            raise SearchError(f"no valid {kind} width reaches the budget")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if flops_below(mid):
            lo = mid
        else:
            hi = mid
    scored = [(e, _widths_for(w)) for w in (lo, hi) if (e := error(_widths_for(w))) is not None]
    err, widths = min(scored)
    if err > tolerance:
        # width rounding inside the units makes the curve step-shaped; walk each
        # stage width on its own around the best stage-4 width until nothing improves.
        # ResNeXt bottlenecks move in steps of 2 * cardinality channels.
        span = 2 * units.RESNEXT_CARDINALITY if kind == "resnext" else 8
        improved = True
        while improved and err > tolerance:
            improved = False
            for stage in (2, 1, 0):
                for d in range(-span, span + 1):
                    cand = list(widths)
                    cand[stage] += d
                    if min(cand) < 1 or not cand[0] <= cand[1] <= cand[2]:
                        continue
                    e = error(tuple(cand))
                    if e is not None and e < err - 1e-12:
                        err, widths, improved = e, tuple(cand), True
    tol = tolerance
    while err > tol + 1e-12:
        tol = round(tol + 0.01, 10)
        if tol > max_tolerance:
            raise SearchError(f"{kind}: closest widths {widths} miss the budget by {err:.1%}")
    if tol > tolerance:
        log.warning("%s: widened complexity tolerance to %.0f%% (error %.2f%%)", kind, tol * 100, err * 100)
    net = candidate(widths)
    net = NetworkSpec(net.layers, net.groups, net.scale, net.shallow, net.seed, name=f"{kind}@{reference.name}")
    return net.materialize() if reference.materialized else net


def run_layer(layer: Layer, x, conv_fn=conv2d_fast):
    cfg, w = layer.config, layer.weights
    if isinstance(cfg, StemSpec):
        return relu(units.conv_bn(x, w, "conv", cfg.convs()["conv"], conv_fn))
    if isinstance(cfg, MaxPoolSpec):
        return max_pool(x, cfg.kernel, cfg.stride, cfg.pad)
    if isinstance(cfg, UNIT_TYPES):
        return units.unit_forward(cfg, x, w, conv_fn)
    if isinstance(cfg, GlobalPoolSpec):
        return global_avg_pool(x)
    if isinstance(cfg, FCSpec):
        return fully_connected(x, w["weight"], w["bias"])
    raise TypeError(f"unknown layer config {cfg!r}")


def forward(net: NetworkSpec, x: Tensor, conv_fn=conv2d_fast):
    """Run the whole network; returns ``(n, classes)`` logits for a full model."""
    if not net.materialized:
        raise ValueError("network has no weights; call materialize() first")
    for layer in net.layers:
        x = run_layer(layer, x, conv_fn)
    return x
