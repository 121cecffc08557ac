"""Property suites behind ``snk verify``: oracle equivalences and golden cases."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from snk.analysis import (
    GroupedPointwise,
    Shuffle,
    connectivity_mask,
    count_flops,
    unit_flops,
)
from snk.arch import Layer, NetworkSpec, build_shufflenet
from snk.kernels import (
    BnParams,
    ConvSpec,
    batch_norm,
    channel_shuffle,
    channel_shuffle_perm,
    conv2d_fast,
    conv2d_naive,
    fold_bn,
)
from snk.tensor import Tensor
from snk.units import ComparisonUnitSpec, ShuffleUnitSpec

CONV_REL_TOL = 1e-4
BN_ABS_TOL = 1e-5
TABLE1_MFLOPS = {1: 143, 2: 140, 3: 137, 4: 133, 8: 137}
FAULTS = ("shuffle-off-by-one",)


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    first_failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.passed > 0

    def record(self, ok: bool, describe: Callable[[], str]) -> None:
        if ok:
            self.passed += 1
            return
        self.failed += 1
        if self.first_failure is None:
            self.first_failure = describe()


def _faulty_perm(c, g):
    return np.roll(channel_shuffle_perm(c, g), 1)


# -- conv ------------------------------------------------------------------

def dyadic(rng: np.random.Generator, shape, denom: int) -> np.ndarray:
    """Random multiples of ``1/denom`` in [-1, 1].

    Products and sums of these stay exactly representable in float32 for
    the layer sizes used here, so any fast/naive disagreement is a logic
    error rather than accumulation order.
    """
    return (rng.integers(-denom, denom + 1, size=shape) / denom).astype(np.float32)


def random_conv_spec(rng: np.random.Generator, groups: int, kernel: int, stride: int, depthwise: bool) -> ConvSpec:
    if depthwise:
        return ConvSpec.depthwise3x3(groups * int(rng.integers(1, 4)), stride)
    cin = groups * int(rng.integers(1, 5))
    cout = groups * int(rng.integers(1, 5))
    pad = int(rng.integers(0, 2)) if kernel == 3 else 0
    return ConvSpec(cin, cout, kernel, stride, pad, groups)


def conv_case_matrix(rng: np.random.Generator, min_cases: int = 500):
    """Yield ``(spec, x, w)`` cycling through every (g, k, s, depthwise) combination."""
    combos = [(g, k, s, False) for g in (1, 2, 3, 4, 8) for k in (1, 3) for s in (1, 2)]
    combos += [(g, 3, s, True) for g in (1, 2, 3, 4, 8) for s in (1, 2)]
    n = 0
    while n < min_cases:
        for g, k, s, dw in combos:
            spec = random_conv_spec(rng, g, k, s, dw)
            h, w = (int(v) for v in rng.integers(3, 17, size=2))
            x = dyadic(rng, (int(rng.integers(1, 3)), spec.in_channels, h, w), 16)
            wt = dyadic(rng, spec.weight_shape, 8)
            yield spec, x, wt
            n += 1


def conv_rel_error(spec: ConvSpec, x: np.ndarray, w: np.ndarray) -> float:
    fast = conv2d_fast(Tensor(x), w, spec).data.astype(np.float64)
    ref = conv2d_naive(Tensor(x), w, spec).data.astype(np.float64)
    return float(np.max(np.abs(fast - ref) / (np.abs(ref) + 1e-6)))


def _shrink_conv_case(spec, x, w):
    """Crop the spatial extent while the case keeps failing."""
    while min(x.shape[2:]) > spec.kernel:
        smaller = x[:, :, :-1, :-1]
        if conv_rel_error(spec, smaller, w) <= CONV_REL_TOL:
            break
        x = smaller
    return x


def suite_conv(rng, cases: int = 500, fault=None) -> SuiteResult:
    res = SuiteResult("conv")
    for spec, x, w in conv_case_matrix(rng, cases):
        err = conv_rel_error(spec, x, w)
        if err > CONV_REL_TOL and res.first_failure is None:
            x = _shrink_conv_case(spec, x, w)
        res.record(err <= CONV_REL_TOL, lambda: f"{spec} input {x.shape}: rel err {err:.3g}")
    return res


# -- shuffle ---------------------------------------------------------------

def suite_shuffle(rng, cases: int = 0, fault=None, max_channels: int = 64) -> SuiteResult:
    perm_fn = _faulty_perm if fault == "shuffle-off-by-one" else channel_shuffle_perm
    res = SuiteResult("shuffle")
    res.record(list(perm_fn(4, 2)) == [0, 2, 1, 3], lambda: f"perm(4, 2) = {perm_fn(4, 2).tolist()}")
    res.record(list(perm_fn(6, 3)) == [0, 2, 4, 1, 3, 5], lambda: f"perm(6, 3) = {perm_fn(6, 3).tolist()}")
    for c in range(1, max_channels + 1):
        ident = np.arange(c)
        for g in (d for d in range(1, c + 1) if c % d == 0):
            p = perm_fn(c, g)
            res.record(np.array_equal(np.sort(p), ident), lambda: f"perm({c}, {g}) is not a bijection")
            if g == 1:
                res.record(np.array_equal(p, ident), lambda: f"perm({c}, 1) is not the identity")
            back = perm_fn(c, c // g)
            res.record(np.array_equal(p[back], ident), lambda: f"shuffle({c}, {g}) then ({c}, {c // g}) is not identity")
    # tensor path agrees with the permutation
    for c, g in ((12, 3), (16, 4), (24, 8)):
        x = Tensor(rng.standard_normal((1, c, 3, 2)))
        y = channel_shuffle(x, g)
        res.record(np.array_equal(y.data, x.data[:, perm_fn(c, g)]), lambda: f"channel_shuffle(c={c}, g={g}) disagrees with perm")
    return res


# -- bn folding ------------------------------------------------------------

def random_bn(rng, c) -> BnParams:
    return BnParams(
        rng.uniform(0.5, 2.0, c), rng.normal(0, 1, c), rng.normal(0, 1, c), rng.uniform(0.5, 2.0, c), 1e-5
    )


def bn_fold_error(rng, spec: ConvSpec) -> float:
    x = Tensor(rng.uniform(-1, 1, (1, spec.in_channels, 9, 9)))
    fan_in = spec.weight_shape[1] * spec.kernel**2
    w = (rng.standard_normal(spec.weight_shape) / np.sqrt(fan_in)).astype(np.float32)
    bn = random_bn(rng, spec.out_channels)
    unfolded = batch_norm(conv2d_naive(x, w, spec), bn)
    wf, bf = fold_bn(w, None, bn)
    folded = conv2d_naive(x, wf, spec, bf)
    return float(np.max(np.abs(folded.data - unfolded.data)))


def suite_bn(rng, cases: int = 100, fault=None) -> SuiteResult:
    res = SuiteResult("bn")
    w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    wf, bf = fold_bn(w, None, BnParams.identity(4, eps=0.0))
    res.record(np.array_equal(wf, w) and not bf.any(), lambda: "identity BN changed the conv")
    bn = BnParams(np.full(4, 2.0), np.ones(4), np.zeros(4), np.ones(4), 0.0)
    wf, bf = fold_bn(w, np.zeros(4), bn)
    res.record(np.allclose(wf, 2 * w, rtol=0, atol=0) and np.allclose(bf, 1.0), lambda: "gamma=2, beta=1 fold wrong")
    for _ in range(cases):
        g = int(rng.choice([1, 2, 4]))
        spec = random_conv_spec(rng, g, int(rng.choice([1, 3])), int(rng.choice([1, 2])), bool(rng.random() < 0.2))
        err = bn_fold_error(rng, spec)
        res.record(err <= BN_ABS_TOL, lambda: f"{spec}: folded vs unfolded max abs err {err:.3g}")
    return res


# -- connectivity ----------------------------------------------------------

def connectivity_cases():
    """(channels, groups) pairs where a single shuffle can fully mix two grouped layers."""
    return [(c, g) for c in (4, 8, 16, 36) for g in (2, 4) if c % g == 0 and c // g >= g]


def suite_connectivity(rng, cases: int = 0, fault=None) -> SuiteResult:
    res = SuiteResult("connectivity")
    for c, g in connectivity_cases():
        plain = connectivity_mask([GroupedPointwise(c, c, g), GroupedPointwise(c, c, g)])
        res.record(plain.is_block_diagonal(g), lambda: f"c={c} g={g} without shuffle: {plain.describe()}")
        shuffled = connectivity_mask([GroupedPointwise(c, c, g), Shuffle(c, g), GroupedPointwise(c, c, g)])
        res.record(shuffled.is_full(), lambda: f"c={c} g={g} with shuffle: {shuffled.describe()}")
    dense = connectivity_mask([GroupedPointwise(8, 8, 1)])
    res.record(dense.is_full(), lambda: "dense 1x1 is not fully connected")
    mixed = connectivity_mask([GroupedPointwise(8, 8, 4), GroupedPointwise(8, 8, 1), GroupedPointwise(8, 8, 4)])
    res.record(mixed.is_full(), lambda: "stack with a dense layer is not fully connected")
    return res


# -- flops -----------------------------------------------------------------

def single_unit_net(unit) -> NetworkSpec:
    return NetworkSpec((Layer(unit),))


def random_unit_params(rng):
    g = int(rng.choice([1, 2, 3, 4, 8]))
    c = g * int(rng.integers(1, 64))
    m = g * int(rng.integers(1, 32))
    h, w = (int(v) for v in rng.integers(1, 57, size=2))
    return c, m, h, w, g


def closed_form_matches(c, m, h, w, g) -> dict[str, tuple[int, int]]:
    """kind -> (closed form, counted) for the three stride-1 unit types."""
    units = {
        "resnet": ComparisonUnitSpec("resnet", c, c, 1, m, 1),
        "resnext": ComparisonUnitSpec("resnext", c, c, 1, m, g),
        "shufflenet": ShuffleUnitSpec(c, c, g, 1, m),
    }
    return {
        kind: (unit_flops(kind, c, h, w, m, g), count_flops(single_unit_net(u), (h, w)).total_mult_adds)
        for kind, u in units.items()
    }


def suite_flops(rng, cases: int = 100, fault=None) -> SuiteResult:
    res = SuiteResult("flops")
    for _ in range(cases):
        params = random_unit_params(rng)
        for kind, (closed, counted) in closed_form_matches(*params).items():
            res.record(closed == counted, lambda: f"{kind} (c,m,h,w,g)={params}: formula {closed} vs counted {counted}")
    for g, expected in TABLE1_MFLOPS.items():
        got = count_flops(build_shufflenet(g, materialize=False)).total_mult_adds / 1e6
        res.record(abs(got - expected) / expected <= 0.02, lambda: f"g={g}: {got:.2f} MFLOPs vs {expected}")
    return res


SUITES = {
    "conv": suite_conv,
    "shuffle": suite_shuffle,
    "bn": suite_bn,
    "connectivity": suite_connectivity,
    "flops": suite_flops,
}


def run_suites(names=None, seed: int = 42, fault: str | None = None, cases: int | None = None) -> list[SuiteResult]:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    results = []
    for name in names:
        rng = np.random.default_rng(seed)
        kwargs = {"fault": fault}
        if cases is not None:
            kwargs["cases"] = cases
        results.append(SUITES[name](rng, **kwargs))
    return results
