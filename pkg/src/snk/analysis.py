"""Static cost model and structural channel-connectivity analysis.

Convention: one multiply-accumulate counts as one FLOP, and only conv and
fully connected layers contribute. BN, ReLU, shuffle and pooling are free.
Data movement for arithmetic intensity is one pass over inputs, outputs
and weights in float32, with no cache modelling.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from snk.arch import FCSpec, GlobalPoolSpec, MaxPoolSpec, NetworkSpec, StemSpec, UNIT_TYPES
from snk.errors import DivisibilityError, ShapeError
from snk.kernels import ConvSpec, channel_shuffle_perm
from snk.units import ShuffleUnitSpec, unit_output_hw

BYTES_PER_VALUE = 4
CSV_COLUMNS = ("layer", "kind", "out_shape", "mult_adds", "params", "bytes", "intensity")
ONE_BY_ONE_KINDS = ("pw", "gpw")


@dataclass(frozen=True)
class CostRow:
    layer: str
    kind: str
    out_shape: tuple[int, int, int]
    mult_adds: int
    params: int
    bytes: int

    @property
    def intensity(self) -> float:
        return self.mult_adds / self.bytes if self.bytes else 0.0


@dataclass
class CostReport:
    input_hw: tuple[int, int]
    rows: list[CostRow] = field(default_factory=list)
    model: str = ""

    @property
    def total_mult_adds(self) -> int:
        return sum(r.mult_adds for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.rows)

    @property
    def total_intensity(self) -> float:
        return self.total_mult_adds / self.total_bytes if self.total_bytes else 0.0

    def rows_of_kind(self, *kinds: str) -> list[CostRow]:
        return [r for r in self.rows if r.kind in kinds]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "input": list(self.input_hw),
            "rows": [
                {
                    "layer": r.layer,
                    "kind": r.kind,
                    "out_shape": list(r.out_shape),
                    "mult_adds": r.mult_adds,
                    "params": r.params,
                    "bytes": r.bytes,
                    "intensity": round(r.intensity, 4),
                }
                for r in self.rows
            ],
            "totals": {
                "mult_adds": self.total_mult_adds,
                "params": self.total_params,
                "bytes": self.total_bytes,
                "intensity": round(self.total_intensity, 4),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for r in self.rows:
            out.writerow([r.layer, r.kind, "x".join(map(str, r.out_shape)), r.mult_adds, r.params, r.bytes,
                          f"{r.intensity:.4f}"])
        out.writerow(["total", "", "", self.total_mult_adds, self.total_params, self.total_bytes,
                      f"{self.total_intensity:.4f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'layer':<22}{'kind':<8}{'out_shape':>16}{'mult_adds':>14}{'params':>11}{'intensity':>11}"]
        for r in self.rows:
            shape = "x".join(map(str, r.out_shape))
            lines.append(f"{r.layer:<22}{r.kind:<8}{shape:>16}{r.mult_adds:>14,}{r.params:>11,}{r.intensity:>11.4f}")
        lines.append(f"{'total':<22}{'':<8}{'':>16}{self.total_mult_adds:>14,}{self.total_params:>11,}"
                     f"{self.total_intensity:>11.4f}")
        lines.append(f"complexity: {self.total_mult_adds / 1e6:.2f} MFLOPs at {self.input_hw[0]}x{self.input_hw[1]}")
        return "\n".join(lines)


def conv_kind(conv: ConvSpec) -> str:
    if conv.groups > 1 and conv.groups == conv.in_channels == conv.out_channels and conv.kernel > 1:
        return "dw"
    if conv.kernel == 1:
        return "gpw" if conv.groups > 1 else "pw"
    return "gconv" if conv.groups > 1 else "conv"


def _conv_row(name, conv: ConvSpec, h, w) -> tuple[CostRow, int, int]:
    ho, wo = conv.output_hw(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{name}: {h}x{w} input too small")
    params = int(np.prod(conv.weight_shape))
    moved = conv.in_channels * h * w + conv.out_channels * ho * wo + params
    row = CostRow(name, conv_kind(conv), (conv.out_channels, ho, wo), conv.mult_adds(h, w), params,
                  BYTES_PER_VALUE * moved)
    return row, ho, wo


def _pool_row(name, c, h, w, ho, wo) -> CostRow:
    return CostRow(name, "pool", (c, ho, wo), 0, 0, BYTES_PER_VALUE * c * (h * w + ho * wo))


def _unit_rows(name, unit, h, w) -> list[CostRow]:
    convs = unit.convs()
    rows = []
    if isinstance(unit, ShuffleUnitSpec):
        r1, h1, w1 = _conv_row(f"{name}.pw1", convs["pw1"], h, w)
        r2, h2, w2 = _conv_row(f"{name}.dw", convs["dw"], h1, w1)
        r3, _, _ = _conv_row(f"{name}.pw2", convs["pw2"], h2, w2)
        rows += [r1, r2, r3]
        if unit.stride == 2:
            rows.append(_pool_row(f"{name}.shortcut", unit.in_channels, h, w, h2, w2))
        return rows
    hh, ww = h, w
    for key in ("conv1", "conv2", "conv3"):
        if key in convs:
            row, hh, ww = _conv_row(f"{name}.{key}", convs[key], hh, ww)
            rows.append(row)
    if "proj" in convs:
        rows.append(_conv_row(f"{name}.proj", convs["proj"], h, w)[0])
    return rows


def _input_channels(cfg) -> int:
    if isinstance(cfg, (StemSpec, *UNIT_TYPES)):
        return cfg.in_channels
    if isinstance(cfg, FCSpec):
        return cfg.in_features
    raise ShapeError(f"cannot infer input channels from leading {type(cfg).__name__}")


def count_flops(spec: NetworkSpec, input_hw: Sequence[int] = (224, 224)) -> CostReport:
    """Per-layer mult-adds, parameters and traffic for one image of ``input_hw``."""
    h, w = (int(v) for v in input_hw)
    if h < 1 or w < 1:
        raise ShapeError(f"resolution {h}x{w} is empty")
    report = CostReport((h, w), model=spec.name)
    c = _input_channels(spec.layers[0].config)
    for name, layer in spec.named_layers():
        cfg = layer.config
        if isinstance(cfg, StemSpec):
            row, h, w = _conv_row(name, cfg.convs()["conv"], h, w)
            report.rows.append(row)
            c = cfg.out_channels
        elif isinstance(cfg, MaxPoolSpec):
            ho, wo = (h + 2 * cfg.pad - cfg.kernel) // cfg.stride + 1, (w + 2 * cfg.pad - cfg.kernel) // cfg.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"{name}: {h}x{w} input too small")
            report.rows.append(_pool_row(name, c, h, w, ho, wo))
            h, w = ho, wo
        elif isinstance(cfg, UNIT_TYPES):
            if cfg.in_channels != c:
                raise ShapeError(f"{name} expects {cfg.in_channels} channels, previous layer gives {c}")
            report.rows += _unit_rows(name, cfg, h, w)
            h, w = unit_output_hw(cfg, h, w)
            c = cfg.out_channels
        elif isinstance(cfg, GlobalPoolSpec):
            report.rows.append(_pool_row(name, c, h, w, 1, 1))
            h = w = 1
        elif isinstance(cfg, FCSpec):
            if cfg.in_features != c * h * w:
                raise ShapeError(f"fc expects {cfg.in_features} inputs, gets {c * h * w}")
            params = cfg.in_features * cfg.out_features + cfg.out_features
            macs = cfg.in_features * cfg.out_features
            moved = cfg.in_features + cfg.out_features + params
            report.rows.append(CostRow(name, "fc", (cfg.out_features, 1, 1), macs, params, BYTES_PER_VALUE * moved))
            c, h, w = cfg.out_features, 1, 1
        else:
            raise TypeError(f"unknown layer config {cfg!r}")
    return report


UNIT_FORMULA_KINDS = ("resnet", "resnext", "shufflenet")


def _exact_div(num: int, den: int, what: str) -> int:
    if num % den:
        raise DivisibilityError(f"{what}: {num} not divisible by {den}")
    return num // den


def unit_flops(kind: str, c: int, h: int, w: int, m: int, g: int = 1) -> int:
    """Closed-form mult-adds of a stride-1 bottleneck unit.

    resnet ``hw(2cm + 9m^2)``, resnext ``hw(2cm + 9m^2/g)``, shufflenet
    ``hw(2cm/g + 9m)``.
    """
    if min(c, h, w, m, g) < 1:
        raise ValueError("unit parameters must be >= 1")
    if kind == "resnet":
        per_pixel = 2 * c * m + 9 * m * m
    elif kind == "resnext":
        per_pixel = 2 * c * m + _exact_div(9 * m * m, g, "9m^2/g")
    elif kind == "shufflenet":
        per_pixel = _exact_div(2 * c * m, g, "2cm/g") + 9 * m
    else:
        raise ValueError(f"unknown unit kind {kind!r}; expected one of {UNIT_FORMULA_KINDS}")
    return h * w * per_pixel


def pointwise_share(kind: str, c: int, m: int, g: int = 1) -> float:
    """Fraction of a stride-1 unit's mult-adds spent in its two 1x1 layers."""
    total = unit_flops(kind, c, 1, 1, m, g)
    pointwise = 2 * c * m // g if kind == "shufflenet" else 2 * c * m
    return pointwise / total


def unit_flops_stride2(c: int, o: int, h: int, w: int, m: int, g: int, first_pw_grouped: bool = True) -> int:
    """Mult-adds of a stride-2 unit whose branch widens ``c`` to ``o`` by concatenation."""
    if o <= c:
        raise ValueError(f"stride-2 unit needs out ({o}) > in ({c})")
    ho, wo = (h - 1) // 2 + 1, (w - 1) // 2 + 1
    g1 = g if first_pw_grouped else 1
    pw1 = h * w * _exact_div(c * m, g1, "c*m/g")
    dw = 9 * m * ho * wo
    pw2 = ho * wo * _exact_div(m * (o - c), g, "m*(o-c)/g")
    return pw1 + dw + pw2


# -- connectivity ---------------------------------------------------------

@dataclass(frozen=True)
class GroupedPointwise:
    in_channels: int
    out_channels: int
    groups: int = 1

    def adjacency(self) -> np.ndarray:
        g = self.groups
        if self.in_channels % g or self.out_channels % g:
            raise DivisibilityError(f"{self} channels not divisible by groups")
        block = np.ones((self.out_channels // g, self.in_channels // g), dtype=bool)
        return np.kron(np.eye(g, dtype=bool), block)


@dataclass(frozen=True)
class Shuffle:
    channels: int
    groups: int


@dataclass(frozen=True)
class DependencyMask:
    """``reach[o, i]`` is True when output channel ``o`` can depend on input ``i``."""

    reach: np.ndarray

    @property
    def shape(self):
        return self.reach.shape

    def is_full(self) -> bool:
        return bool(self.reach.all())

    def is_block_diagonal(self, groups: int) -> bool:
        o, i = self.reach.shape
        if o % groups or i % groups:
            return False
        expected = np.kron(np.eye(groups, dtype=bool), np.ones((o // groups, i // groups), dtype=bool))
        return bool(np.array_equal(self.reach, expected))

    def describe(self) -> str:
        if self.is_full():
            return "full"
        for g in range(2, min(self.reach.shape) + 1):
            if self.is_block_diagonal(g):
                return f"block-diagonal({g})"
        return f"partial({int(self.reach.sum())}/{self.reach.size})"


def connectivity_mask(stack: Iterable) -> DependencyMask:
    """Propagate channel reachability through 1x1 grouped convs and shuffles."""
    reach = None
    for layer in stack:
        width = layer.in_channels if isinstance(layer, GroupedPointwise) else layer.channels
        if reach is None:
            reach = np.eye(width, dtype=bool)
        elif reach.shape[0] != width:
            raise ShapeError(f"{layer} expects {width} channels, previous layer gives {reach.shape[0]}")
        if isinstance(layer, GroupedPointwise):
            reach = (layer.adjacency().astype(np.int64) @ reach.astype(np.int64)) > 0
        elif isinstance(layer, Shuffle):
            reach = reach[channel_shuffle_perm(layer.channels, layer.groups)]
        else:
            raise TypeError(f"unsupported layer in connectivity stack: {layer!r}")
    if reach is None:
        raise ValueError("empty layer stack")
    return DependencyMask(reach)


def unit_pointwise_stack(unit: ShuffleUnitSpec, with_shuffle: bool | None = None) -> list:
    """The unit's two 1x1 layers, with the shuffle between them if the unit uses one."""
    shuffle = unit.shuffle if with_shuffle is None else with_shuffle
    m = unit.bottleneck_channels
    stack = [GroupedPointwise(unit.in_channels, m, unit.pw1_groups)]
    if shuffle:
        stack.append(Shuffle(m, unit.groups))
    stack.append(GroupedPointwise(m, unit.branch_channels, unit.groups))
    return stack
