"""Plain-text test-vector files.

::

    #xtramac-vectors v1
    # comments start with '#'
    fp8xfp8 38 40 3f80 4000

One record per MAC: datatype, then ``a``, ``b``, ``c`` and the expected
``p`` as lowercase hex padded to each format's width.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .formats import ConfigurationError, MacDatatype, hex_pattern, parse_datatype
from .oracle import oracle_mac, oracle_mac_batch
from .pipeline import IssueSlot, MacConfig, MacPipeline, evaluate
from .verify import EXHAUSTIVE_WIDTH, sample_c

HEADER = "#xtramac-vectors v1"


class VectorParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Vector:
    datatype: MacDatatype
    a: int
    b: int
    c: int
    p: int
    line_no: int = 0

    def format(self) -> str:
        dt = self.datatype
        return " ".join([dt.name, hex_pattern(self.a, dt.type_a), hex_pattern(self.b, dt.type_b),
                         hex_pattern(self.c, dt.type_c), hex_pattern(self.p, dt.type_p)])


def parse_line(line: str, line_no: int) -> Vector | None:
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    fields = text.split()
    if len(fields) != 5:
        raise VectorParseError(line_no, f"expected 5 fields, got {len(fields)}")
    try:
        dt = parse_datatype(fields[0])
    except ConfigurationError as exc:
        raise VectorParseError(line_no, str(exc)) from None
    vals = []
    for tok, fmt in zip(fields[1:], (dt.type_a, dt.type_b, dt.type_c, dt.type_p)):
        if len(tok) != fmt.hex_digits or tok != tok.lower():
            raise VectorParseError(line_no, f"{tok!r} is not {fmt.hex_digits} lowercase hex digits for {fmt.name}")
        try:
            vals.append(int(tok, 16))
        except ValueError:
            raise VectorParseError(line_no, f"{tok!r} is not hex") from None
        if vals[-1] >= 1 << fmt.width:
            raise VectorParseError(line_no, f"{tok!r} exceeds {fmt.width} bits")
    return Vector(dt, *vals, line_no=line_no)


def read_vectors(source: str | Path | TextIO) -> list[Vector]:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_vectors(fh)
    out = []
    first = True
    for no, line in enumerate(source, 1):
        if first and line.strip():
            first = False
            if line.strip() != HEADER:
                raise VectorParseError(no, f"missing header {HEADER!r}")
            continue
        v = parse_line(line, no)
        if v is not None:
            out.append(v)
    return out


def write_vectors(vectors: Iterable[Vector], sink: str | Path | TextIO, comment: str | None = None) -> int:
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            return write_vectors(vectors, fh, comment)
    sink.write(HEADER + "\n")
    if comment:
        sink.write(f"# {comment}\n")
    n = 0
    for v in vectors:
        sink.write(v.format() + "\n")
        n += 1
    return n


def exhaustive_size(dt: MacDatatype | str, c_count: int = 1) -> int:
    dt = parse_datatype(dt)
    return (1 << dt.type_a.width) * (1 << dt.type_b.width) * c_count


def generate(dt: MacDatatype | str, *, count: int | None = None, exhaustive: bool = False,
             c_count: int = 1, seed: int = 0, exact: bool = False) -> list[Vector]:
    """Oracle-labelled vectors; deterministic under ``seed``.

    Exhaustive mode covers every (a, b) pair ``c_count`` times, each time with
    a different value from a sampled accumulator set.
    """
    dt = parse_datatype(dt)
    rng = np.random.default_rng(seed)
    if exhaustive:
        if max(dt.type_a.width, dt.type_b.width) > EXHAUSTIVE_WIDTH:
            raise ConfigurationError(
                f"exhaustive {dt.name} needs {exhaustive_size(dt, c_count):,} records; "
                f"limited to operands of at most {EXHAUSTIVE_WIDTH} bits")
        a, b = np.meshgrid(np.arange(1 << dt.type_a.width), np.arange(1 << dt.type_b.width), indexing="ij")
        a, b = a.ravel(), b.ravel()
        c_set = sample_c(dt, max(c_count, 1) * 64, rng)
        reps = max(c_count, 1)
        idx = (np.arange(a.size)[None, :] + 64 * np.arange(reps)[:, None]) % c_set.size
        a, b, c = np.tile(a, reps), np.tile(b, reps), c_set[idx.ravel()]
    else:
        n = 0 if count is None else int(count)
        if n < 0:
            raise ConfigurationError("count must be non-negative")
        a = rng.integers(0, 1 << dt.type_a.width, size=n)
        b = rng.integers(0, 1 << dt.type_b.width, size=n)
        c = rng.integers(0, 1 << dt.type_c.width, size=n)
    if exact:
        p = np.array([oracle_mac(int(x), int(y), int(z), dt) for x, y, z in zip(a, b, c)], dtype=np.int64)
    else:
        p = oracle_mac_batch(a, b, c, dt) if a.size else np.zeros(0, dtype=np.int64)
    return [Vector(dt, int(x), int(y), int(z), int(w)) for x, y, z, w in zip(a, b, c, p)]


@dataclass
class CheckResult:
    total: int
    mismatches: list[tuple[Vector, int]]

    @property
    def failed(self) -> int:
        return len(self.mismatches)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_dict(self, limit: int = 20) -> dict:
        diffs = [{"line": v.line_no, "datatype": v.datatype.name, "a": hex_pattern(v.a, v.datatype.type_a),
                  "b": hex_pattern(v.b, v.datatype.type_b), "c": hex_pattern(v.c, v.datatype.type_c),
                  "expected": hex_pattern(v.p, v.datatype.type_p), "actual": hex_pattern(got, v.datatype.type_p)}
                 for v, got in sorted(self.mismatches, key=lambda m: m[0].line_no)[:limit]]
        return {"schema_version": 1, "total": self.total, "passed": self.total - self.failed,
                "failed": self.failed, "diffs": diffs}


def _by_datatype(vectors: list[Vector]) -> dict[MacDatatype, list[int]]:
    out: dict[MacDatatype, list[int]] = {}
    for i, v in enumerate(vectors):
        out.setdefault(v.datatype, []).append(i)
    return out


def _config_for(vectors: list[Vector], cfg: MacConfig | None) -> MacConfig:
    needed = list(dict.fromkeys(v.datatype for v in vectors))
    if cfg is None:
        return MacConfig(tuple(needed))
    missing = [d.name for d in needed if d not in cfg.datatypes]
    if missing:
        raise ConfigurationError(f"datatypes not in the configuration: {', '.join(missing)}")
    return cfg


def _slots(cfg: MacConfig, k: int, recs: list[Vector]):
    """Bundle records into slots: records fill lanes in order, surplus lanes get zeros."""
    p = cfg.plans[k]
    dt = cfg.datatypes[k]
    per = p.lanes_a if p.lanes_b == 1 else 1
    lane_of = [p.lane_map.index((i, 0)) for i in range(per)]
    for lo in range(0, len(recs), per):
        chunk = recs[lo: lo + per]
        a = sum(v.a << (i * dt.type_a.width) for i, v in enumerate(chunk))
        b = chunk[0].b
        c = [0] * cfg.lanes
        for i, v in enumerate(chunk):
            c[lane_of[i]] = v.c
        yield chunk, a, b, c, lane_of


def _broadcast_groups(recs: list[Vector]) -> list[list[Vector]]:
    groups: dict[int, list[Vector]] = {}
    for v in recs:
        groups.setdefault(v.b, []).append(v)
    return list(groups.values())


def check(vectors: list[Vector], mode: str = "pipeline", cfg: MacConfig | None = None) -> CheckResult:
    """Compare each record's expected ``p`` against the pipeline or the exact oracle."""
    if mode == "oracle":
        bad = [(v, got) for v in vectors if (got := oracle_mac(v.a, v.b, v.c, v.datatype)) != v.p]
        return CheckResult(len(vectors), bad)
    if mode != "pipeline":
        raise ConfigurationError(f"unknown check mode {mode!r}")
    if not vectors:
        return CheckResult(0, [])
    cfg = _config_for(vectors, cfg)
    bad = []
    for dt, idx in _by_datatype(vectors).items():
        k = cfg.index(dt)
        for group in _broadcast_groups([vectors[i] for i in idx]):
            slots = list(_slots(cfg, k, group))
            a = np.array([s[1] for s in slots], dtype=np.int64)
            b = np.array([s[2] for s in slots], dtype=np.int64)
            c = np.array([s[3] for s in slots], dtype=np.int64)
            got = evaluate(cfg, k, a, b, c)
            for row, (chunk, _, _, _, lane_of) in enumerate(slots):
                for i, v in enumerate(chunk):
                    value = int(got[row, lane_of[i]])
                    if value != v.p:
                        bad.append((v, value))
    return CheckResult(len(vectors), bad)


def run(vectors: list[Vector], cfg: MacConfig | None = None, trace=None) -> tuple[CheckResult, dict]:
    """Stream the records through one cycle-stepped pipeline, one slot per cycle."""
    if not vectors:
        return CheckResult(0, []), {"cycles": 0, "issued": 0, "latencies": []}
    cfg = _config_for(vectors, cfg)
    pipe = MacPipeline(cfg, trace=trace)
    issue = []
    for dt, idx in _by_datatype(vectors).items():
        k = cfg.index(dt)
        for group in _broadcast_groups([vectors[i] for i in idx]):
            issue.extend((k, s) for s in _slots(cfg, k, group))
    # interleave datatypes so the stream switches every cycle where it can
    issue.sort(key=lambda item: (item[1][0][0].line_no))
    slots = [IssueSlot(k, a, b, tuple(c), True, (chunk, lane_of)) for k, (chunk, a, b, c, lane_of) in issue]
    outs = pipe.run(slots)
    bad = []
    latencies = sorted({o.cycle - o.issue_cycle for o in outs})
    for o in outs:
        chunk, lane_of = o.tag
        for i, v in enumerate(chunk):
            if o.lanes[lane_of[i]] != v.p:
                bad.append((v, o.lanes[lane_of[i]]))
    return CheckResult(len(vectors), bad), {"cycles": pipe.cycle, "issued": len(slots), "latencies": latencies}
