import csv
import io
import json

import numpy as np
import pytest

from snk.analysis import (
    CSV_COLUMNS,
    GroupedPointwise,
    Shuffle,
    connectivity_mask,
    count_flops,
    pointwise_share,
    unit_flops,
    unit_flops_stride2,
    unit_pointwise_stack,
)
from snk.arch import STAGE_CHANNELS, build_shufflenet
from snk.errors import DivisibilityError, ShapeError
from snk.units import ShuffleUnitSpec
from snk.verify import single_unit_net


def hand_count(g, widths, stem=24, res=224, repeats=(3, 7, 3)):
    """Independent mult-add tally of a ShuffleNet written out layer by layer."""
    h = res // 2
    total = 3 * 3 * 3 * stem * h * h  # conv1
    h //= 2  # max pool
    c = stem
    for stage, (o, r) in enumerate(zip(widths, repeats)):
        m = o // 4
        ho = h // 2
        g1 = 1 if stage == 0 else g
        total += h * h * c * m // g1 + ho * ho * 9 * m + ho * ho * m * (o - c) // g
        h, c = ho, o
        total += r * h * h * (2 * o * m // g + 9 * m)
    return total + c * 1000


# Frozen from hand_count above; the published complexities are 143/140/137/133/137 MFLOPs.
TABLE1_FROZEN = {1: 143_078_976, 2: 140_836_512, 3: 137_460_672, 4: 134_339_776, 8: 138_365_952}


@pytest.mark.parametrize("g", sorted(STAGE_CHANNELS))
def test_table1_matches_hand_count(g):
    net = build_shufflenet(g, materialize=False)
    assert count_flops(net).total_mult_adds == hand_count(g, STAGE_CHANNELS[g]) == TABLE1_FROZEN[g]


def test_unit_flops_examples():
    assert unit_flops("resnet", 240, 28, 28, 60) == 28 * 28 * (2 * 240 * 60 + 9 * 60 * 60)
    assert unit_flops("resnet", 240, 28, 28, 60) == 47_980_800
    assert unit_flops("shufflenet", 240, 28, 28, 60, 3) == 7_949_760
    assert unit_flops("resnext", 256, 1, 1, 128, 16) == 2 * 256 * 128 + 9 * 128 * 128 // 16


def test_unit_flops_errors():
    with pytest.raises(DivisibilityError):
        unit_flops("shufflenet", 10, 1, 1, 5, 3)
    with pytest.raises(DivisibilityError):
        unit_flops("resnext", 10, 1, 1, 5, 4)
    with pytest.raises(ValueError):
        unit_flops("densenet", 10, 1, 1, 5)
    with pytest.raises(ValueError):
        unit_flops("resnet", 0, 1, 1, 5)


def test_resnext_pointwise_share():
    assert pointwise_share("resnext", 256, 128, 32) == pytest.approx(65536 / 70144)
    assert 0.9338 < pointwise_share("resnext", 256, 128, 32) < 0.9348


def test_stride2_closed_form_matches_counter():
    # first unit of stage 2 for g=3: dense pw1 on the 24-channel stem output
    assert unit_flops_stride2(24, 240, 56, 56, 60, 3, first_pw_grouped=False) == 8_326_080
    unit = ShuffleUnitSpec(240, 480, 3, 2, 120)
    report = count_flops(single_unit_net(unit), (28, 28))
    assert report.total_mult_adds == unit_flops_stride2(240, 480, 28, 28, 120, 3) == 9_619_680
    with pytest.raises(ValueError):
        unit_flops_stride2(240, 240, 28, 28, 60, 3)


def test_unit_rows_named_by_role():
    report = count_flops(single_unit_net(ShuffleUnitSpec(240, 480, 3, 2, 120)), (28, 28))
    assert [(r.layer.split(".")[-1], r.kind) for r in report.rows] == [
        ("pw1", "gpw"), ("dw", "dw"), ("pw2", "gpw"), ("shortcut", "pool")]
    assert report.rows[-1].mult_adds == 0


def test_totals_are_row_sums():
    report = count_flops(build_shufflenet(3, 0.5, materialize=False))
    assert report.total_mult_adds == sum(r.mult_adds for r in report.rows)
    assert report.total_bytes == sum(r.bytes for r in report.rows)
    for r in report.rows:
        assert r.bytes > 0 and r.mult_adds >= 0


def test_resolution_doubling_quadruples_conv_cost():
    net = build_shufflenet(3, materialize=False)
    small, big = count_flops(net, (224, 224)), count_flops(net, (448, 448))
    fc = 960 * 1000
    assert big.total_mult_adds - fc == 4 * (small.total_mult_adds - fc)


def test_csv_layout():
    report = count_flops(build_shufflenet(3, 0.5, materialize=False))
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[-1][0] == "total"
    assert int(rows[-1][3]) == report.total_mult_adds
    assert len(rows) == len(report.rows) + 2
    for row in rows[1:]:
        assert len(row[-1].split(".")[1]) == 4


def test_json_round_trip():
    report = count_flops(build_shufflenet(2, 1.0, materialize=False), (480, 640))
    data = json.loads(report.to_json())
    assert data["input"] == [480, 640]
    assert len(data["rows"]) == len(report.rows)
    assert data["totals"]["mult_adds"] == report.total_mult_adds


def test_count_flops_small_input_reaches_1x1():
    report = count_flops(build_shufflenet(3, materialize=False), (8, 8))
    assert report.rows[-3].out_shape == (960, 1, 1)
    with pytest.raises(ShapeError):
        count_flops(build_shufflenet(3, materialize=False), (0, 8))


# -- connectivity -------------------------------------------------------------

def test_grouped_stack_without_shuffle_is_block_diagonal():
    mask = connectivity_mask([GroupedPointwise(12, 12, 3), GroupedPointwise(12, 12, 3)])
    assert mask.is_block_diagonal(3)
    assert mask.describe() == "block-diagonal(3)"


def test_shuffle_makes_full_dependency():
    mask = connectivity_mask([GroupedPointwise(12, 12, 3), Shuffle(12, 3), GroupedPointwise(12, 12, 3)])
    assert mask.is_full()
    assert mask.describe() == "full"


def test_shuffle_with_too_few_channels_per_group_is_partial():
    # 6 channels in 3 groups leaves 2 per group, fewer than g, so coverage is incomplete
    mask = connectivity_mask([GroupedPointwise(6, 6, 3), Shuffle(6, 3), GroupedPointwise(6, 6, 3)])
    assert not mask.is_full()


def test_unit_stack_connectivity():
    unit = ShuffleUnitSpec(240, 240, 3, 1, 60)
    assert connectivity_mask(unit_pointwise_stack(unit)).is_full()
    assert connectivity_mask(unit_pointwise_stack(unit, with_shuffle=False)).is_block_diagonal(3)


def test_connectivity_shape_mismatch():
    with pytest.raises(ShapeError):
        connectivity_mask([GroupedPointwise(12, 6, 3), GroupedPointwise(12, 12, 3)])


def test_intensity_invariant_holds_from_half_width():
    for g in STAGE_CHANNELS:
        for s in (0.5, 1.0, 1.5, 2.0):
            report = count_flops(build_shufflenet(g, s, materialize=False))
            dw = max(r.intensity for r in report.rows_of_kind("dw"))
            assert min(r.intensity for r in report.rows_of_kind("pw", "gpw")) > dw
