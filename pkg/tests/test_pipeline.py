from __future__ import annotations

import numpy as np
import pytest

from conftest import adversarial_stream
from xtramac.formats import DATATYPES, ConfigurationError
from xtramac.pipeline import (
    IssueSlot, MacConfig, MacPipeline, assemble_output, evaluate, lzc, pack_word, unpack_word,
)
from xtramac.verify import special_patterns, sweep_exhaustive, sweep_random

MIXED = ("int8xint8", "int4xbf16", "bf16xbf16", "fp8xbf16", "fp4xfp4", "fp16xfp16")


def test_assemble_output_examples():
    assert assemble_output([0x3F80, 0x4000], "bf16xbf16") == 0x40003F80
    assert assemble_output([0, 0], "bf16xbf16", 2) == 0
    assert assemble_output([0xDEADBEEF], "int8xint8", 1) == 0xDEADBEEF
    with pytest.raises(ValueError):
        assemble_output([1, 2, 3], "bf16xbf16", 2)


def test_pack_word_round_trip():
    assert unpack_word(pack_word([1, 2, 3], 4), 4, 3) == [1, 2, 3]
    with pytest.raises(ValueError):
        pack_word([16], 4)


def test_lzc():
    x = np.array([0, 1, 2, 255, 256])
    assert lzc(x, 9).tolist() == [9, 8, 7, 1, 0]


def test_config_validation():
    cfg = MacConfig(MIXED)
    assert cfg.lanes == 4 and cfg.latency == 4 and cfg.n_datatypes == len(MIXED)
    assert MacConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.index("bf16xbf16") == 2 and cfg.index(1) == 1
    for bad in (dict(datatypes=()), dict(datatypes=("bf16xbf16", "bf16xbf16")),
                dict(datatypes=("bf16xbf16",), stage_depths=(1, 0, 1, 1)),
                dict(datatypes=("bf16xbf16",), stage_depths=(1, 1, 1))):
        with pytest.raises(ConfigurationError):
            MacConfig(**bad)
    with pytest.raises(ConfigurationError):
        cfg.index("fp8xfp8")
    with pytest.raises(ConfigurationError):
        cfg.index(9)


@pytest.mark.parametrize("dt", [d for d in DATATYPES if max(DATATYPES[d].type_a.width, DATATYPES[d].type_b.width) > 8])
def test_random_bit_exact(dt):
    res = sweep_random(dt, n=100_000, seed=3)
    assert res.ok, res.examples


@pytest.mark.parametrize("dt", [d for d in DATATYPES if max(DATATYPES[d].type_a.width, DATATYPES[d].type_b.width) <= 8])
def test_exhaustive_pairs_bit_exact(dt):
    res = sweep_exhaustive(dt, n_c=64 if DATATYPES[dt].type_a.width < 8 else 8, seed=1)
    assert res.ok, res.examples
    assert res.cases >= (1 << DATATYPES[dt].type_a.width) * (1 << DATATYPES[dt].type_b.width) * res.c_values


def test_shared_config_matches_single_config():
    """Selecting a datatype out of many configured ones gives the same lanes as a dedicated unit."""
    full = MacConfig(tuple(DATATYPES))
    for dt in ("fp8xfp8", "int4xbf16", "fp16xfp16"):
        assert sweep_random(dt, full, n=20_000, seed=5).ok


def test_faithful_and_fast_agree(rng):
    faithful = MacConfig(MIXED)
    fast = MacConfig(MIXED, faithful=False)
    for k, dt in enumerate(faithful.datatypes):
        p = faithful.plans[k]
        aw = rng.integers(0, 1 << (dt.type_a.width * p.lanes_a), 5000)
        bw = rng.integers(0, 1 << (dt.type_b.width * p.lanes_b), 5000)
        c = rng.integers(0, 1 << dt.type_c.width, (5000, faithful.lanes))
        assert np.array_equal(evaluate(faithful, k, aw, bw, c), evaluate(fast, k, aw, bw, c))


def test_specials_bit_exact():
    from xtramac.oracle import oracle_mac_batch
    for name in MIXED:
        dt = DATATYPES[name]
        cfg = MacConfig((dt,))
        sa, sb, sc = (np.array(special_patterns(f)) for f in (dt.type_a, dt.type_b, dt.type_c))
        a, b, c = (x.ravel() for x in np.meshgrid(sa, sb, sc, indexing="ij"))
        got = evaluate(cfg, 0, a, b, np.stack([c] + [np.zeros_like(c)] * (cfg.lanes - 1), axis=1))
        lane0 = cfg.plans[0].lane_map.index((0, 0))
        assert np.array_equal(got[:, lane0], oracle_mac_batch(a, b, c, dt))


def _stream(cfg, n, seed, **kw):
    return adversarial_stream(cfg, n, np.random.default_rng(seed), **kw)


def test_stream_latency_throughput_and_values():
    cfg = MacConfig(MIXED)
    slots, expected = _stream(cfg, 3000, 11)
    pipe = MacPipeline(cfg)
    outs = pipe.run(slots)
    assert len(outs) == len(slots)
    assert {o.cycle - o.issue_cycle for o in outs} == {4}
    assert [o.cycle for o in outs] == list(range(4, 4 + len(slots)))
    assert [o.serial for o in outs] == list(range(len(slots)))
    for o in outs:
        assert o.dtype_select == slots[o.tag].dtype_select
        n = len(expected[o.tag])
        assert list(o.lanes[:n]) == expected[o.tag]
        assert o.word == assemble_output(o.lanes, cfg.datatypes[o.dtype_select], cfg.lanes)


def test_bubbles_propagate():
    cfg = MacConfig(MIXED)
    slots, expected = _stream(cfg, 1000, 12, bubble_rate=0.3)
    outs = MacPipeline(cfg).run(slots)
    assert len(outs) == sum(s is not None for s in slots)
    assert {o.cycle - o.issue_cycle for o in outs} == {4}
    for o in outs:
        assert list(o.lanes[: len(expected[o.tag])]) == expected[o.tag]
    invalid = IssueSlot(0, 0, 0, (), valid=False)
    assert MacPipeline(cfg).run([invalid] * 10) == []


@pytest.mark.parametrize("depths", [(2, 1, 1, 1), (1, 3, 1, 1), (1, 1, 2, 1), (1, 1, 1, 4), (2, 2, 2, 2)])
def test_stage_depth_changes_latency_only(depths):
    base = MacConfig(MIXED)
    deep = MacConfig(MIXED, stage_depths=depths)
    slots, _ = _stream(base, 500, 13, bubble_rate=0.1)
    a = MacPipeline(base).run(slots)
    b = MacPipeline(deep).run(slots)
    assert {o.cycle - o.issue_cycle for o in b} == {sum(depths)}
    assert [(o.serial, o.word, o.lanes) for o in a] == [(o.serial, o.word, o.lanes) for o in b]
    assert all(y.cycle - x.cycle == sum(depths) - 4 for x, y in zip(a, b))


def test_trace_lines():
    cfg = MacConfig(("bf16xbf16", "int8xint8"))
    lines = []
    pipe = MacPipeline(cfg, trace=lines.append)
    slot = pipe.make_slot("bf16xbf16", [0x3F80, 0x4000], [0x4000], [0x3F80, 0])
    outs = pipe.run([slot, None])
    assert len(outs) == 1 and outs[0].lanes[:2] == (0x4040, 0x4080)
    assert len(lines) == 2 + cfg.latency
    assert lines[0].split(",")[:3] == ["0", "1000", "bf16xbf16"]
    assert lines[4].endswith(",0")
    assert pipe.occupancy == "0000"


def test_reset_clears_state():
    cfg = MacConfig(("bf16xbf16",))
    pipe = MacPipeline(cfg)
    pipe.step(pipe.make_slot(0, [0x3F80, 0], [0x3F80], [0, 0]))
    pipe.reset()
    assert pipe.cycle == 0 and pipe.occupancy == "0000"
    assert pipe.run([]) == []
