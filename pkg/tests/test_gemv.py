from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xtramac.formats import ConfigurationError, parse_datatype
from xtramac.gemv import (
    BASELINE, XTRAMAC, GemvConfig, LlmModelDesc, bundled_models, bundled_platforms, decode_latency, decode_speedup,
    instance_ceiling, load_gemv_config, load_model, load_platform, mac_units, macs_per_channel, model_uses,
    oracle_gemv, roofline_gemv, simulate_gemv,
)

EIGHT_B = ["qwen3-8b-awq", "llama3.1-8b-w8a8", "llama3.1-8b-fp8", "qwen3-8b-fp8"]


def test_channel_arithmetic():
    cfg = GemvConfig()
    assert cfg.lanes_per_mac == 2 and cfg.weight_bits == 4
    assert macs_per_channel(cfg) == 64
    assert instance_ceiling(cfg) == 2048
    assert cfg.instance_count == 30 * 64
    assert load_gemv_config("u55c").instance_count == 1920


def test_config_validation():
    for bad in (dict(active_channels=33), dict(active_channels=0), dict(bw_efficiency=0),
                dict(bw_efficiency=1.5), dict(freq_hz=0), dict(instances=0)):
        with pytest.raises(ConfigurationError):
            GemvConfig(**bad)
    with pytest.raises(ConfigurationError):
        macs_per_channel(GemvConfig(channel_bits=4))
    assert macs_per_channel(GemvConfig(datatype="fp4xbf16")) == 42
    assert GemvConfig.from_dict(GemvConfig().to_dict()) == GemvConfig()


@pytest.mark.parametrize("m,k,ms", [(4096, 4096, 0.0246), (12288, 4096, 0.0743)])
def test_roofline_points(m, k, ms):
    r = roofline_gemv(load_gemv_config("u55c"), m, k)
    assert r.time_ms == pytest.approx(ms, rel=0.05)
    assert r.bound == "memory"


@settings(deadline=None)
@given(m=st.integers(1, 1 << 14), k=st.integers(1, 1 << 14), batch=st.integers(1, 4096),
       eff=st.floats(0.05, 0.5))
def test_roofline_properties(m, k, batch, eff):
    cfg = GemvConfig(bw_efficiency=eff)
    r = roofline_gemv(cfg, m, k, batch)
    assert r.time_s >= r.memory_time_s and r.time_s >= r.compute_time_s
    assert r.bound == ("compute" if r.compute_time_s > r.memory_time_s else "memory")
    doubled = roofline_gemv(replace(cfg, bw_efficiency=2 * eff), m, k, batch)
    assert doubled.memory_time_s * 2 == pytest.approx(r.memory_time_s, rel=1e-15)


def test_energy_uses_power():
    r = roofline_gemv(load_gemv_config("u55c"), 4096, 4096)
    assert r.energy_j == pytest.approx(85 * r.time_s)
    assert roofline_gemv(GemvConfig(), 1, 1).energy_j is None


def _bf16_activations(rng, k):
    # moderate magnitudes so sums stay finite and rounding is exercised
    sign = rng.integers(0, 2, k) << 15
    exp = rng.integers(120, 130, k) << 7
    return sign | exp | rng.integers(0, 128, k)


@pytest.mark.parametrize("dts", [["int4xbf16"], ["int8xbf16"], ["fp4xbf16"], ["fp8xbf16"],
                                 ["int4xbf16", "fp8xbf16", "fp4xbf16"], ["bf16xbf16"], ["int4xfp16"]])
@pytest.mark.parametrize("mode", ["batch", "cycle"])
def test_simulate_matches_oracle(dts, mode, rng):
    m, k = 23, 9 if mode == "cycle" else 40
    dtypes = [parse_datatype(d) for d in dts]
    act_fmt = dtypes[0].type_b
    tile_rows = 5
    row_dts = [dtypes[(r // tile_rows) % len(dtypes)] for r in range(m)]
    w = np.stack([rng.integers(0, 1 << d.type_a.width, k) for d in row_dts])
    x = _bf16_activations(rng, k) if act_fmt.name == "bf16" else rng.integers(0x3000, 0x4400, k)
    cfg = GemvConfig(datatype=dts[0])
    res = simulate_gemv(cfg, m, k, w, x, tile_dtypes=dts, tile_rows=tile_rows, mode=mode)
    assert np.array_equal(res.output, oracle_gemv(w, x, row_dts))
    assert res.row_datatypes == [d.name for d in row_dts]
    if mode == "cycle":
        assert res.report.cycles > k * 4


def test_cycle_and_batch_agree(rng):
    w = rng.integers(0, 16, (12, 7))
    x = _bf16_activations(rng, 7)
    cfg = GemvConfig()
    a = simulate_gemv(cfg, 12, 7, w, x, mode="batch")
    b = simulate_gemv(cfg, 12, 7, w, x, mode="cycle")
    assert np.array_equal(a.output, b.output)
    assert b.report.cycles == len(range(0, 12, 2)) + 7 * 4


def test_simulate_errors(rng):
    cfg = GemvConfig()
    with pytest.raises(ConfigurationError):
        simulate_gemv(cfg, 2, 2, np.zeros((2, 2)), np.zeros(2), tile_dtypes=["int4xbf16", "int4xfp16"], tile_rows=1)
    with pytest.raises(ConfigurationError):
        simulate_gemv(cfg, 2, 2, np.zeros((2, 2)), np.zeros(2), mode="warp")
    with pytest.raises(ConfigurationError):
        simulate_gemv(cfg, 2, 3, np.zeros((2, 3)), np.zeros(2))
    assert simulate_gemv(cfg, 0, 0, [], []).output.size == 0


def test_bundled_data():
    assert set(EIGHT_B) <= set(bundled_models()) and "gpt-oss-20b" in bundled_models()
    assert {"u55c", "v80"} <= set(bundled_platforms())
    assert model_uses(load_model("gpt-oss-20b")) == ["bf16xbf16", "fp4xbf16"]
    with pytest.raises(ConfigurationError):
        load_model("no-such-model")


def test_model_sizes_are_plausible():
    # dims-derived weight totals of the bundled 8B descriptors
    for name in EIGHT_B:
        model = load_model(name)
        params = model.layers * (model.attn_proj_params + model.expert_params)
        assert 6.5e9 < params < 7.5e9
    gpt = load_model("gpt-oss-20b")
    assert gpt.active_experts(1) == pytest.approx(gpt.experts.top_k)
    assert gpt.active_experts(10**6) == pytest.approx(gpt.experts.count)


@pytest.mark.parametrize("name", EIGHT_B)
def test_decode_band(name):
    model, v80 = load_model(name), load_platform("v80")
    r = decode_latency(model, 1, 512, v80)
    assert 4.4 <= r.time_ms <= 10.0
    assert r.bound == "memory"
    assert 1.5 <= decode_speedup(model, 32, 512, v80) <= 1.8


@pytest.mark.parametrize("name", EIGHT_B + ["gpt-oss-20b"])
def test_decode_monotone(name):
    model, v80 = load_model(name), load_platform("v80")
    times = [decode_latency(model, b, 512, v80).time_s for b in (1, 2, 4, 8, 16, 32, 64)]
    assert times == sorted(times)
    times = [decode_latency(model, 4, c, v80).time_s for c in (0, 128, 512, 4096)]
    assert times == sorted(times)


def test_mac_units_and_errors():
    v80 = load_platform("v80")
    assert mac_units(v80, "fp8xbf16", XTRAMAC) > mac_units(v80, "fp8xbf16", BASELINE)
    with pytest.raises(ConfigurationError):
        mac_units(v80, "fp8xbf16", "gpu")
    with pytest.raises(ConfigurationError):
        decode_latency(load_model("qwen3-8b-awq"), 0, 512, v80)
    d = decode_latency(load_model("qwen3-8b-awq"), 1, 512, v80).to_dict(per_layer=True)
    assert d["schema_version"] == 1 and len(d["per_layer"]) == d["layers"]


def test_model_validation():
    base = load_model("qwen3-8b-awq")
    with pytest.raises(ConfigurationError):
        replace(base, kv_heads=5)
    with pytest.raises(ConfigurationError):
        replace(base, mac_profile="nope")
    assert isinstance(base, LlmModelDesc)
