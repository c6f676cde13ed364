from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtramac.dsp48 import A_WIDTH, B_WIDTH, PRODUCT_WIDTH, DspPorts, PortOverflowError, wide_mul, wide_mul_array
from xtramac.formats import DATATYPES, ConfigurationError
from xtramac.packing import (
    BROADCAST, CROSS, extract, extract_array, isolation_samples, lane_isolation_failures, max_magnitude,
    pack, parallelism_bound, plan,
)


# -- dsp48 -------------------------------------------------------------------------

@given(a=st.integers(0, (1 << A_WIDTH) - 1), b=st.integers(0, (1 << B_WIDTH) - 1))
def test_wide_mul_is_integer_multiply(a, b):
    p = wide_mul(DspPorts(a, b))
    assert p == a * b and p < 1 << PRODUCT_WIDTH
    assert wide_mul_array([a], [b])[0] == a * b


def test_wide_mul_examples():
    assert wide_mul(DspPorts(0, 12345)) == 0
    assert wide_mul(DspPorts(1, 12345)) == 12345
    assert wide_mul(DspPorts(1 << 26, 1 << 17)) == 1 << 43
    full = wide_mul(DspPorts((1 << 27) - 1, (1 << 18) - 1))
    assert full < 1 << 45


@pytest.mark.parametrize("a,b", [(1 << 27, 0), (0, 1 << 18), (-1, 0)])
def test_port_overflow(a, b):
    with pytest.raises(PortOverflowError):
        DspPorts(a, b)
    with pytest.raises(PortOverflowError):
        wide_mul_array([a], [b])


# -- packing -----------------------------------------------------------------------

def test_parallelism_bound_examples():
    assert parallelism_bound(9) == 2
    assert parallelism_bound(45) == 0
    assert parallelism_bound(5) == 3
    with pytest.raises(ValueError):
        parallelism_bound(0)


def test_known_plans():
    p = plan("fp4xfp4")
    assert (p.pattern, p.a_offsets, p.b_offsets, p.lane_width, p.stride, p.lanes) == (CROSS, (0, 5), (0, 10), 4, 5, 4)
    p = plan("bf16xbf16")
    assert (p.pattern, p.lanes_a, p.lanes_b) == (BROADCAST, 2, 1)
    assert plan("int8xint8").lanes == 2
    assert plan("fp16xfp16").lanes == 1
    assert plan("fp8xfp8").lanes == 4
    assert plan("fp4xbf16").lanes == 3


def test_pack_examples():
    p = plan("fp4xfp4")
    ports = pack(p, (3, 2), (3, 1))
    assert (ports.a, ports.b) == (3 + (2 << 5), 3 + (1 << 10))
    assert extract(p, wide_mul(ports)) == [(3, 2)[i] * (3, 1)[j] for i, j in p.lane_map]
    assert pack(p, (0, 0), (0, 0)) == DspPorts(0, 0)
    assert extract(p, 0) == [0] * 4
    single = plan("fp16xfp16")
    assert pack(single, (1500,), (1800,)) == DspPorts(1500, 1800)
    assert extract(single, 0xFFFFFFFFF) == [0xFFFFFFFFF & ((1 << single.stride) - 1)]
    with pytest.raises(ValueError):
        pack(p, (4, 0), (0, 0))
    with pytest.raises(ValueError):
        pack(p, (1,), (0, 0))


@pytest.mark.parametrize("dt", list(DATATYPES), ids=str)
def test_plan_invariants(dt):
    p = plan(dt)
    assert p.certified, p.violations()
    assert p.stride >= p.lane_width + p.guard
    assert max(p.a_offsets) + p.width_a <= A_WIDTH
    assert max(p.b_offsets) + p.width_b <= B_WIDTH
    assert p.occupancy <= PRODUCT_WIDTH
    assert p.lanes <= p.port_capacity
    if p.pattern == BROADCAST:
        assert p.lanes <= (A_WIDTH - p.width_a) // p.stride + 1
    assert plan(dt) == p
    d = json.loads(p.to_json())
    assert d["lanes"] == p.lanes and d["certified"] and d["parallelism_bound"] == p.bound
    assert "A[26:0]" in p.diagram()


@pytest.mark.parametrize("dt", list(DATATYPES), ids=str)
def test_lane_isolation(dt):
    p = plan(dt)
    a, b = isolation_samples(p, n_random=200_000)
    assert lane_isolation_failures(p, a, b) == 0


def test_exhaustive_fp4_cross_product():
    p = plan("fp4xfp4")
    a, b = isolation_samples(p)
    assert len(a) == 4 ** 4
    assert lane_isolation_failures(p, a, b) == 0


def test_guard_zero_and_larger_guard():
    for g in (0, 1, 2, 3):
        p = plan("fp8xfp8", guard=g)
        assert p.certified and p.stride == p.lane_width + g
        a, b = isolation_samples(p, n_random=20_000)
        assert lane_isolation_failures(p, a, b) == 0
    assert plan("fp8xfp8", guard=3).lanes <= plan("fp8xfp8").lanes


def test_max_lanes_caps_plan():
    assert plan("fp4xfp4", max_lanes=2).lanes == 2
    assert plan("fp4xfp4", max_lanes=1).lanes == 1
    with pytest.raises(ConfigurationError):
        plan("fp4xfp4", guard=-1)


def test_max_magnitude():
    assert max_magnitude(DATATYPES["int8xint8"].type_a) == 128
    assert max_magnitude(DATATYPES["bf16xbf16"].type_a) == 255


def test_extract_array_matches_scalar(rng):
    p = plan("fp8xfp8")
    prods = rng.integers(0, 1 << 44, 100)
    assert [list(r) for r in extract_array(p, prods)] == [extract(p, int(x)) for x in prods]
