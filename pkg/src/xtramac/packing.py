"""Multi-lane operand packing onto the 27 x 18 DSP multiplier.

A plan places ``I`` magnitudes on the A port at offsets ``s_i`` and ``J`` on
the B port at offsets ``t_j``. The wide product then holds every ``a_i*b_j``
at bit ``s_i + t_j``; each such field is ``stride`` bits wide and fields are
pairwise disjoint, so a shift-and-mask recovers each lane exactly. ``J == 1``
is the broadcast pattern (one shared B operand); ``J > 1`` uses the full
cross product.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp48 import A_WIDTH, B_WIDTH, PRODUCT_WIDTH, DspPorts, wide_mul_array
from .formats import ConfigurationError, Format, MacDatatype, parse_datatype

BROADCAST = "broadcast"
CROSS = "cross"
DEFAULT_MAX_LANES = 4


class InfeasibleDatatypeError(ConfigurationError):
    pass


def max_magnitude(fmt: Format) -> int:
    """Largest value the mapping stage can place on a port for ``fmt``."""
    if fmt.is_int:
        return 1 << (fmt.bits - 1)
    return (1 << fmt.sig_bits) - 1


def parallelism_bound(stride: int) -> int:
    if stride < 1:
        raise ValueError("stride must be positive")
    return min(A_WIDTH // stride, B_WIDTH // stride)


@dataclass(frozen=True)
class PackingPlan:
    datatype: MacDatatype
    pattern: str
    a_offsets: tuple[int, ...]
    b_offsets: tuple[int, ...]
    stride: int
    guard: int
    lane_width: int
    width_a: int
    width_b: int
    lane_map: tuple[tuple[int, int], ...]

    @property
    def lanes(self) -> int:
        return len(self.lane_map)

    @property
    def lanes_a(self) -> int:
        return len(self.a_offsets)

    @property
    def lanes_b(self) -> int:
        return len(self.b_offsets)

    @property
    def lane_offsets(self) -> tuple[int, ...]:
        return tuple(self.a_offsets[i] + self.b_offsets[j] for i, j in self.lane_map)

    @property
    def bound(self) -> int:
        return parallelism_bound(self.stride)

    @property
    def port_capacity(self) -> int:
        """Most lanes any layout can fit: operands on one port sit >= stride apart."""
        per_a = (A_WIDTH - self.width_a) // self.stride + 1
        per_b = (B_WIDTH - self.width_b) // self.stride + 1
        return per_a * per_b

    @property
    def occupancy(self) -> int:
        return max(self.lane_offsets) + self.stride

    def violations(self) -> list[str]:
        """Invariant violations; an empty list certifies the plan."""
        out = []
        if self.stride < self.lane_width + self.guard:
            out.append("stride below lane width + guard")
        if max(self.a_offsets) + self.width_a > A_WIDTH:
            out.append("A operands overflow the 27-bit port")
        if max(self.b_offsets) + self.width_b > B_WIDTH:
            out.append("B operands overflow the 18-bit port")
        offs = sorted(self.lane_offsets)
        if any(hi - lo < self.stride for lo, hi in zip(offs, offs[1:])):
            out.append("lane product fields overlap")
        if self.occupancy > PRODUCT_WIDTH:
            out.append("product fields exceed 45 bits")
        if self.lanes > self.port_capacity:
            out.append("lanes exceed the port capacity")
        if sorted(self.lane_map) != sorted(itertools.product(range(self.lanes_a), range(self.lanes_b))):
            out.append("lane map does not cover the operand cross product")
        return out

    @property
    def certified(self) -> bool:
        return not self.violations()

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "datatype": self.datatype.name,
            "pattern": self.pattern,
            "a_offsets": list(self.a_offsets),
            "b_offsets": list(self.b_offsets),
            "stride": self.stride,
            "guard": self.guard,
            "lane_width": self.lane_width,
            "lanes": self.lanes,
            "lane_map": [list(p) for p in self.lane_map],
            "lane_offsets": list(self.lane_offsets),
            "parallelism_bound": self.bound,
            "certified": self.certified,
            "violations": self.violations(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def diagram(self) -> str:
        """Text layout of the A, B and product fields, MSB on the left."""
        def row(width, fields):
            cells = ["."] * width
            for label, lo, n in fields:
                for bit in range(lo, min(lo + n, width)):
                    cells[width - 1 - bit] = label
            return "".join(cells)

        a = row(A_WIDTH, [(str(i), s, self.width_a) for i, s in enumerate(self.a_offsets)])
        b = row(B_WIDTH, [(str(j), t, self.width_b) for j, t in enumerate(self.b_offsets)])
        p = row(PRODUCT_WIDTH, [(_lane_label(k), off, self.lane_width)
                                for k, off in enumerate(self.lane_offsets)])
        return "\n".join([
            f"{self.datatype.name}: {self.pattern} {self.lanes_a}x{self.lanes_b}, "
            f"{self.lanes} lanes, S={self.stride} G={self.guard} W_lane={self.lane_width}",
            f"A[26:0]  {' ' * (PRODUCT_WIDTH - A_WIDTH)}{a}",
            f"B[17:0]  {' ' * (PRODUCT_WIDTH - B_WIDTH)}{b}",
            f"P[44:0]  {p}",
        ])


def _lane_label(k: int) -> str:
    return "abcdefghijklmnopqrstuvwxyz"[k % 26]


def _spaced(limit: int, count: int, gap: int):
    """Increasing offset tuples starting at 0, consecutive gaps >= ``gap``, max <= limit."""
    def rec(prefix):
        if len(prefix) == count:
            yield tuple(prefix)
            return
        for nxt in range(prefix[-1] + gap, limit + 1):
            yield from rec(prefix + [nxt])
    if limit < 0:
        return
    yield from rec([0])


def _candidates(width_a, width_b, stride, max_lanes):
    for i in range(1, max_lanes + 1):
        for j in range(1, max_lanes // i + 1):
            for sa in _spaced(A_WIDTH - width_a, i, stride):
                for tb in _spaced(B_WIDTH - width_b, j, stride):
                    pos = sorted(s + t for s in sa for t in tb)
                    if pos[-1] + stride > PRODUCT_WIDTH:
                        continue
                    if all(hi - lo >= stride for lo, hi in zip(pos, pos[1:])):
                        yield sa, tb


@lru_cache(maxsize=None)
def plan(dt: MacDatatype | str, guard: int = 1, max_lanes: int = DEFAULT_MAX_LANES) -> PackingPlan:
    """Search every offset assignment and return the certified plan with most lanes.

    Ties go to the smaller offset sum, then broadcast over cross product,
    then lexicographically smaller offsets.
    """
    dt = parse_datatype(dt)
    if guard < 0 or max_lanes < 1:
        raise ConfigurationError("guard must be >= 0 and max_lanes >= 1")
    ma, mb = max_magnitude(dt.type_a), max_magnitude(dt.type_b)
    width_a, width_b = ma.bit_length(), mb.bit_length()
    lane_width = (ma * mb).bit_length()
    stride = lane_width + guard
    best = None
    for sa, tb in _candidates(width_a, width_b, stride, max_lanes):
        key = (-(len(sa) * len(tb)), sum(sa) + sum(tb), len(tb) > 1, sa, tb)
        if best is None or key < best[0]:
            best = (key, sa, tb)
    if best is None:
        raise InfeasibleDatatypeError(f"{dt.name}: no plan with at least one lane")
    _, sa, tb = best
    lane_map = tuple(sorted(itertools.product(range(len(sa)), range(len(tb))),
                            key=lambda ij: sa[ij[0]] + tb[ij[1]]))
    result = PackingPlan(dt, CROSS if len(tb) > 1 else BROADCAST, sa, tb, stride, guard,
                         lane_width, width_a, width_b, lane_map)
    assert result.certified, result.violations()
    return result


def _check_lanes(values, count, limit, port):
    if len(values) != count:
        raise ValueError(f"{port} port expects {count} lane values, got {len(values)}")
    for v in values:
        if not 0 <= v <= limit:
            raise ValueError(f"{port} lane magnitude {v} outside [0, {limit}]")


def pack(p: PackingPlan, a_lanes, b_lanes) -> DspPorts:
    _check_lanes(a_lanes, p.lanes_a, max_magnitude(p.datatype.type_a), "A")
    _check_lanes(b_lanes, p.lanes_b, max_magnitude(p.datatype.type_b), "B")
    a = sum(int(v) << s for v, s in zip(a_lanes, p.a_offsets))
    b = sum(int(v) << t for v, t in zip(b_lanes, p.b_offsets))
    return DspPorts(a, b)


def extract(p: PackingPlan, p_dsp: int) -> list[int]:
    mask = (1 << p.stride) - 1
    return [(p_dsp >> off) & mask for off in p.lane_offsets]


def pack_array(p: PackingPlan, a_lanes, b_lanes):
    """Vectorized :func:`pack`: ``a_lanes`` is (n, I), ``b_lanes`` is (n, J)."""
    a_lanes = np.asarray(a_lanes, dtype=np.int64)
    b_lanes = np.asarray(b_lanes, dtype=np.int64)
    a = np.zeros(a_lanes.shape[0], dtype=np.int64)
    b = np.zeros(b_lanes.shape[0], dtype=np.int64)
    for i, s in enumerate(p.a_offsets):
        a |= a_lanes[:, i] << s
    for j, t in enumerate(p.b_offsets):
        b |= b_lanes[:, j] << t
    return a, b


def extract_array(p: PackingPlan, p_dsp) -> np.ndarray:
    p_dsp = np.asarray(p_dsp, dtype=np.int64)
    mask = (1 << p.stride) - 1
    return np.stack([(p_dsp >> off) & mask for off in p.lane_offsets], axis=-1)


def lane_isolation_failures(p: PackingPlan, a_lanes, b_lanes) -> int:
    """Count samples where extract(wide_mul(pack)) differs from the per-lane products."""
    a_lanes = np.asarray(a_lanes, dtype=np.int64)
    b_lanes = np.asarray(b_lanes, dtype=np.int64)
    a, b = pack_array(p, a_lanes, b_lanes)
    got = extract_array(p, wide_mul_array(a, b))
    want = np.stack([a_lanes[:, i] * b_lanes[:, j] for i, j in p.lane_map], axis=-1)
    return int(np.any(got != want, axis=1).sum())


def isolation_samples(p: PackingPlan, *, exhaustive_bits: int = 4, n_random: int = 10**6,
                      rng: np.random.Generator | None = None):
    """Operand tuples for an isolation check: exhaustive when both operands are narrow."""
    ma, mb = max_magnitude(p.datatype.type_a), max_magnitude(p.datatype.type_b)
    if p.width_a <= exhaustive_bits and p.width_b <= exhaustive_bits:
        ranges = [np.arange(ma + 1)] * p.lanes_a + [np.arange(mb + 1)] * p.lanes_b
        grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, len(ranges))
        return grid[:, :p.lanes_a], grid[:, p.lanes_a:]
    rng = rng or np.random.default_rng(0)
    a = rng.integers(0, ma + 1, size=(n_random, p.lanes_a))
    b = rng.integers(0, mb + 1, size=(n_random, p.lanes_b))
    # extremes first so the worst-case carry patterns are always present
    a[0], b[0] = ma, mb
    return a, b
