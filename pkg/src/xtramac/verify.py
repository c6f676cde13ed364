"""Pipeline-versus-oracle sweeps.

Narrow datatypes (both operands at most 8 bits) are swept over every operand
pair, each pair meeting every value in a sampled ``C`` set. Wider datatypes
get uniformly random triples. Slots are filled so that the lanes of one
slot carry different operand pairs, which is also what exercises lane
isolation inside the pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .formats import MacDatatype, parse_datatype
from .oracle import float64_to_bits, oracle_accumulate, oracle_mac_batch, oracle_products
from .packing import PackingPlan
from .pipeline import (
    MacConfig,
    Stage2Regs,
    stage1_map,
    stage2_multiply_postcompute,
    stage3_accumulate,
    stage4_select,
)

EXHAUSTIVE_WIDTH = 8


@dataclass
class SweepResult:
    datatype: str
    mode: str
    cases: int
    mismatches: int
    seconds: float
    c_values: int = 0
    examples: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {"schema_version": 1, "datatype": self.datatype, "mode": self.mode, "cases": self.cases,
                "c_values": self.c_values, "mismatches": self.mismatches,
                "seconds": round(self.seconds, 3), "examples": self.examples}


def special_patterns(fmt) -> list[int]:
    """Signed zeros, extremes, specials and subnormal encodings of ``fmt``."""
    if fmt.is_int:
        mask = (1 << fmt.bits) - 1
        return sorted({0, 1, mask, fmt.max_value, fmt.min_value & mask})
    w, m = fmt.width, fmt.mant_bits
    sign = 1 << (w - 1)
    top = fmt.exp_field_max << m
    out = {0, sign, 1, sign | 1, fmt.max_finite(0), fmt.max_finite(1), 1 << m, sign | (1 << m),
           top, sign | top, top | 1, sign | top | ((1 << m) - 1)}
    return sorted(out)


def sample_c(dt: MacDatatype, n: int, rng: np.random.Generator, products=None) -> np.ndarray:
    """``n`` distinct accumulator patterns: specials, near-cancellers, then uniform."""
    fmt = dt.type_c
    span = 1 << fmt.width
    picks = list(special_patterns(fmt))
    if products is not None and not dt.is_int and len(products):
        prod = np.asarray(products, dtype=np.float64)
        prod = prod[np.isfinite(prod) & (prod != 0)]
        if prod.size:
            base = float64_to_bits(rng.choice(prod, size=n // 2), fmt) ^ (1 << (fmt.width - 1))
            picks.extend(((base + rng.integers(-4, 5, size=base.size)) % span).tolist())
    seen = np.unique(np.asarray(picks, dtype=np.int64) % span)
    n = min(n, span)
    while seen.size < n:
        seen = np.unique(np.concatenate([seen, rng.integers(0, span, size=n - seen.size)]))
    if seen.size > n:
        keep = np.unique(np.asarray(special_patterns(fmt), dtype=np.int64) % span)
        if keep.size >= n:
            return rng.permutation(rng.choice(keep, size=n, replace=False))
        rest = np.setdiff1d(seen, keep)
        seen = np.concatenate([keep, rng.choice(rest, size=n - keep.size, replace=False)])
    return rng.permutation(seen)


def exhaustive_slots(p: PackingPlan):
    """Per-lane operand grid covering every (a, b) pattern pair at least once.

    Returns ``(a_lanes, b_lanes)`` of shapes (slots, I) and (slots, J).
    """
    dt = p.datatype
    a_groups = _groups(1 << dt.type_a.width, p.lanes_a)
    b_groups = _groups(1 << dt.type_b.width, p.lanes_b)
    ia = np.repeat(np.arange(len(a_groups)), len(b_groups))
    ib = np.tile(np.arange(len(b_groups)), len(a_groups))
    return a_groups[ia], b_groups[ib]


def _groups(count: int, size: int) -> np.ndarray:
    n = -(-count // size)
    return (np.arange(n * size) % count).reshape(n, size)


def words(a_lanes, b_lanes, dt: MacDatatype):
    wa, wb = dt.type_a.width, dt.type_b.width
    a = np.zeros(len(a_lanes), dtype=np.int64)
    b = np.zeros(len(b_lanes), dtype=np.int64)
    for i in range(a_lanes.shape[1]):
        a |= a_lanes[:, i] << (i * wa)
    for j in range(b_lanes.shape[1]):
        b |= b_lanes[:, j] << (j * wb)
    return a, b


def _tile(s2: Stage2Regs, reps: int) -> Stage2Regs:
    t = lambda x: np.tile(x, (reps, 1))  # noqa: E731
    return Stage2Regs(s2.dtype, t(s2.sign), t(s2.ival), t(s2.sig), t(s2.exp), t(s2.overflow), t(s2.flags))


def _example(dt, a, b, c, got, want) -> dict:
    return {"a": int(a), "b": int(b), "c": int(c), "got": int(got), "want": int(want), "datatype": dt.name}


def sweep_exhaustive(dt: MacDatatype | str, cfg: MacConfig | None = None, *, n_c: int = 10**4,
                     seed: int = 0, chunk_lanes: int = 1 << 21, progress=None) -> SweepResult:
    """Every operand pair against every one of ``n_c`` sampled ``C`` patterns."""
    dt = parse_datatype(dt)
    cfg = cfg or MacConfig((dt,))
    k = cfg.index(dt)
    p = cfg.plans[k]
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    a_lanes, b_lanes = exhaustive_slots(p)
    ia = np.array([i for i, _ in p.lane_map])
    jb = np.array([j for _, j in p.lane_map])
    lane_a, lane_b = a_lanes[:, ia], b_lanes[:, jb]          # (slots, L)
    n_slots, lanes = lane_a.shape
    aw, bw = words(a_lanes, b_lanes, dt)
    c_set = sample_c(dt, n_c, rng, None if dt.is_int else oracle_products(lane_a.ravel(), lane_b.ravel(), dt))
    nc = c_set.size

    # operand-only stages run once; C enters at stage 3
    s2 = stage2_multiply_postcompute(stage1_map(k, aw, bw, cfg), cfg)
    if dt.is_int:
        prod_index = table = None
    else:
        prods = oracle_products(lane_a, lane_b, dt)
        keys, prod_index = np.unique(prods.view(np.int64), return_inverse=True)
        prod_index = prod_index.reshape(prods.shape)
        table = np.empty((keys.size, nc), dtype=np.int32)
        for lo in range(0, keys.size, max(1, chunk_lanes // nc)):
            hi = min(keys.size, lo + max(1, chunk_lanes // nc))
            vals = keys[lo:hi].view(np.float64)
            table[lo:hi] = oracle_accumulate(vals[:, None], c_set[None, :], dt)

    reps = max(1, chunk_lanes // (n_slots * lanes))
    tiled = _tile(s2, reps)
    lane_ids = np.arange(lanes)
    slot_ids = np.arange(n_slots)
    mismatches, examples = 0, []
    for base in range(0, nc, reps):
        r = min(reps, nc - base)
        shift = base + np.arange(r)[:, None, None]
        c_idx = (shift + slot_ids[None, :, None] + lane_ids[None, None, :]) % nc   # (r, slots, L)
        c_idx = c_idx.reshape(r * n_slots, lanes)
        c = np.zeros((r * n_slots, cfg.lanes), dtype=np.int64)
        c[:, :lanes] = c_set[c_idx]
        s2r = tiled if r == reps else _tile(s2, r)
        got = stage4_select(stage3_accumulate(s2r, c, cfg), cfg)[:, :lanes]
        if dt.is_int:
            want = oracle_mac_batch(np.tile(lane_a, (r, 1)), np.tile(lane_b, (r, 1)), c[:, :lanes], dt)
        else:
            want = table[np.tile(prod_index, (r, 1)), c_idx]
        bad = got != want
        nbad = int(bad.sum())
        if nbad:
            mismatches += nbad
            for s, l in zip(*np.nonzero(bad)):
                if len(examples) >= 8:
                    break
                examples.append(_example(dt, lane_a[s % n_slots, l], lane_b[s % n_slots, l], c[s, l],
                                         got[s, l], want[s, l]))
        if progress is not None:
            progress(min(base + r, nc), nc)
    return SweepResult(dt.name, "exhaustive", n_slots * lanes * nc, mismatches,
                       time.perf_counter() - start, nc, examples)


def sweep_random(dt: MacDatatype | str, cfg: MacConfig | None = None, *, n: int = 10**6,
                 seed: int = 0, chunk: int = 1 << 18) -> SweepResult:
    """``n`` random (a, b, c) triples, spread over the lanes of random slots."""
    dt = parse_datatype(dt)
    cfg = cfg or MacConfig((dt,))
    k = cfg.index(dt)
    p = cfg.plans[k]
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    ia = np.array([i for i, _ in p.lane_map])
    jb = np.array([j for _, j in p.lane_map])
    n_slots = -(-n // p.lanes)
    mismatches, examples, done = 0, [], 0
    for lo in range(0, n_slots, chunk):
        m = min(chunk, n_slots - lo)
        a_lanes = rng.integers(0, 1 << dt.type_a.width, size=(m, p.lanes_a))
        b_lanes = rng.integers(0, 1 << dt.type_b.width, size=(m, p.lanes_b))
        c = np.zeros((m, cfg.lanes), dtype=np.int64)
        c[:, : p.lanes] = rng.integers(0, 1 << dt.type_c.width, size=(m, p.lanes))
        # a quarter of the lanes get a C that nearly cancels the product
        if not dt.is_int:
            prod = oracle_mac_batch(a_lanes[:, ia], b_lanes[:, jb], 0, dt)
            near = (prod ^ (1 << (dt.type_c.width - 1))) + rng.integers(-3, 4, size=prod.shape)
            pick = rng.random(prod.shape) < 0.25
            c[:, : p.lanes] = np.where(pick, near % (1 << dt.type_c.width), c[:, : p.lanes])
        aw, bw = words(a_lanes, b_lanes, dt)
        got = evaluate_stages(cfg, k, aw, bw, c)[:, : p.lanes]
        want = oracle_mac_batch(a_lanes[:, ia], b_lanes[:, jb], c[:, : p.lanes], dt)
        count = min(m * p.lanes, n - done)
        flat_bad = (got != want).ravel()[:count]
        done += count
        if flat_bad.any():
            mismatches += int(flat_bad.sum())
            for idx in np.flatnonzero(flat_bad)[: 8 - len(examples)]:
                s, l = divmod(int(idx), p.lanes)
                examples.append(_example(dt, a_lanes[s, ia[l]], b_lanes[s, jb[l]], c[s, l], got[s, l], want[s, l]))
    return SweepResult(dt.name, "random", done, mismatches, time.perf_counter() - start, 0, examples)


def evaluate_stages(cfg: MacConfig, k: int, aw, bw, c) -> np.ndarray:
    s2 = stage2_multiply_postcompute(stage1_map(k, aw, bw, cfg), cfg)
    return stage4_select(stage3_accumulate(s2, c, cfg), cfg)


def sweep(dt: MacDatatype | str, cfg: MacConfig | None = None, *, n_c: int = 10**4,
          n_random: int = 10**6, seed: int = 0, progress=None) -> SweepResult:
    """Exhaustive sweep for narrow operand formats, random triples otherwise."""
    dt = parse_datatype(dt)
    if max(dt.type_a.width, dt.type_b.width) <= EXHAUSTIVE_WIDTH:
        return sweep_exhaustive(dt, cfg, n_c=n_c, seed=seed, progress=progress)
    return sweep_random(dt, cfg, n=n_random, seed=seed)
