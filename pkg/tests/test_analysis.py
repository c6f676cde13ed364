from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtramac import analysis
from xtramac.analysis import (
    DENSITY_TABLE, FP_SHIFTER, INT_ADDER, ResourceProfile, adder_cost, compute_density, density_profile_key,
    density_row, report, round1, spatial_average, spatial_reports, temporal_report, upcast_report,
    utilization, xtramac_report,
)
from xtramac.formats import DATATYPES, ConfigurationError
from xtramac.packing import plan


def test_quoted_baselines():
    assert temporal_report("bf16xbf16").percent == pytest.approx(8.89, abs=0.01)
    assert temporal_report("int8xint8").percent == pytest.approx(71.11, abs=0.01)
    assert spatial_average(["int8xint8", "bf16xbf16"]) * 100 == pytest.approx(26.67, abs=0.01)
    int8, bf16 = spatial_reports(["int8xint8", "bf16xbf16"])
    assert int8.percent == pytest.approx(35.56, abs=0.01)
    assert bf16.percent == pytest.approx(17.78, abs=0.01)
    assert upcast_report("bf16xbf16").percent == pytest.approx(35.56, abs=0.01)


def test_utilization_formula():
    assert utilization("int8xint8", 2, 1) == pytest.approx(32 / 45)
    assert utilization("bf16xbf16", 1, 4) == pytest.approx(16 / 180)
    with pytest.raises(ConfigurationError):
        utilization("int8xint8", 1, 0)


@pytest.mark.parametrize("dt", list(DATATYPES), ids=str)
def test_xtramac_utilization_in_range(dt):
    r = xtramac_report(dt)
    assert 0 < r.utilization <= 1
    single = utilization(dt, 1, 1)
    if plan(dt).lanes >= 2:
        assert r.utilization >= single


@pytest.mark.parametrize("dt", [d for d in DATATYPES if DATATYPES[d].type_a != DATATYPES[d].type_b], ids=str)
def test_upcast_below_xtramac_for_mixed_pairs(dt):
    assert upcast_report(dt).utilization < xtramac_report(dt).utilization


def test_report_dispatch():
    assert report("temporal", "bf16xbf16").percent == pytest.approx(8.89, abs=0.01)
    assert report("Spatial-Replication", "int8xint8", companions=["bf16xbf16"]).percent == pytest.approx(35.56, abs=0.01)
    assert report("xtramac", "fp4xfp4").lanes == 4
    assert report("vendor", "bf16xbf16").arch == analysis.UPCAST
    with pytest.raises(ConfigurationError):
        report("systolic", "bf16xbf16")
    with pytest.raises(ConfigurationError):
        spatial_reports([])
    d = report("temporal", "int8xint8").to_dict()
    assert d["percent"] == 71.11 and d["lanes"] == 2


def test_round1_is_half_up():
    assert round1(1.45) == 1.5 and round1(1.35) == 1.4 and round1(2.0) == 2.0
    assert round1(0.25) == 0.3


@pytest.mark.parametrize("key", list(DENSITY_TABLE))
def test_density_table_reproduced(key):
    row = density_row(key)
    assert row["rounded"] == row["printed"]
    assert all(1.4 <= v <= 2.0 for v in row["rounded"].values())
    assert all(0 < v < 1 for v in row["reduction"].values())


def test_density_zero_denominator():
    with pytest.raises(ZeroDivisionError):
        compute_density(ResourceProfile(1, 1, 1), ResourceProfile(1, 0, 1))


def test_density_profile_key():
    assert density_profile_key("int4xbf16") == "int2-8xbf16"
    assert density_profile_key("fp8xfp16") == "fp8xfp16"
    with pytest.raises(ConfigurationError):
        density_profile_key("bf16xbf16")


def test_adder_cost_examples():
    assert adder_cost(INT_ADDER, 32) == 32
    assert adder_cost(FP_SHIFTER, 8) == 24
    assert adder_cost(FP_SHIFTER, 16) / adder_cost(FP_SHIFTER, 8) == pytest.approx(64 / 24)
    assert [adder_cost(FP_SHIFTER, w) for w in (4, 8, 16, 32)] == [8, 24, 64, 160]
    for bad in ((INT_ADDER, 1), (FP_SHIFTER, 0)):
        with pytest.raises(ConfigurationError):
            adder_cost(*bad)
    with pytest.raises(ConfigurationError):
        adder_cost(INT_ADDER, 8, alpha=0)
    with pytest.raises(ConfigurationError):
        adder_cost("carry-save", 8)


@given(w=st.integers(2, 1 << 12), alpha=st.floats(0.01, 100), beta=st.floats(0.01, 100))
def test_adder_cost_scaling(w, alpha, beta):
    assert adder_cost(INT_ADDER, 2 * w, alpha=alpha) == pytest.approx(2 * adder_cost(INT_ADDER, w, alpha=alpha))
    assert adder_cost(FP_SHIFTER, 2 * w, beta=beta) > 2 * adder_cost(FP_SHIFTER, w, beta=beta)
