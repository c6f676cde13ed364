from __future__ import annotations

import numpy as np
import pytest

from xtramac.formats import FORMATS, FloatFormat


def float_formats(include_internal: bool = False) -> list[FloatFormat]:
    return [f for f in FORMATS.values() if not f.is_int and (include_internal or not f.internal)]


def random_patterns(fmt, n, rng):
    return rng.integers(0, 1 << fmt.width, size=n, dtype=np.int64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def adversarial_stream(cfg, n, rng, special_rate=0.3, bubble_rate=0.0):
    """Random slots over every configured datatype, operands biased toward special patterns.

    Returns ``(slots, expected)`` where ``expected[t]`` holds the oracle lane
    results of slot ``t`` (None for bubbles).
    """
    from xtramac.oracle import oracle_mac_batch
    from xtramac.pipeline import IssueSlot
    from xtramac.verify import special_patterns, words

    ks = rng.integers(0, cfg.n_datatypes, n)
    valid = rng.random(n) >= bubble_rate
    slots: list = [None] * n
    expected: list = [None] * n
    for k in range(cfg.n_datatypes):
        idx = np.flatnonzero((ks == k) & valid)
        if not idx.size:
            continue
        dt, p = cfg.datatypes[k], cfg.plans[k]

        def draw(fmt, shape):
            out = rng.integers(0, 1 << fmt.width, size=shape)
            spec = np.asarray(special_patterns(fmt))
            return np.where(rng.random(shape) < special_rate, rng.choice(spec, size=shape), out)

        a = draw(dt.type_a, (idx.size, p.lanes_a))
        b = draw(dt.type_b, (idx.size, p.lanes_b))
        c = np.zeros((idx.size, cfg.lanes), dtype=np.int64)
        c[:, : p.lanes] = draw(dt.type_c, (idx.size, p.lanes))
        ia = [i for i, _ in p.lane_map]
        jb = [j for _, j in p.lane_map]
        want = oracle_mac_batch(a[:, ia], b[:, jb], c[:, : p.lanes], dt)
        aw, bw = words(a, b, dt)
        for r, t in enumerate(idx):
            slots[t] = IssueSlot(k, int(aw[r]), int(bw[r]), tuple(int(v) for v in c[r]), True, int(t))
            expected[t] = [int(v) for v in want[r]]
    return slots, expected
