"""Cycle-accurate model of the four-stage runtime-switchable MAC pipeline.

Stage 1 decodes the raw operand words under every configured datatype, packs
the selected mantissas/magnitudes onto the DSP ports and records per-lane
sign, exponent and special-value flags of the operands. Stage 2 runs the wide multiply,
extracts the lane products and normalizes/rounds them into the accumulator
precision. Stage 3 adds the delayed ``C`` lanes with an integer adder bank
and a floating-point adder bank side by side; the special-value flags of
``C`` join the forwarded ones there. Stage 4 resolves special
values from the flags and assembles the output word.

The stage functions are vectorized over a leading batch axis so the same
code serves the per-cycle :meth:`MacPipeline.step` and bulk
:meth:`MacPipeline.evaluate`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .dsp48 import wide_mul_array
from .formats import (
    BF16,
    ConfigurationError,
    FloatFormat,
    MacDatatype,
    ValueClass,
    decode_array,
    pack_fields,
    parse_datatype,
)
from .packing import DEFAULT_MAX_LANES, PackingPlan, max_magnitude, pack_array, extract_array, plan

# per-lane flag bits: operand flags raised in stage 1, C flags joined in stage 3
NAN_A, NAN_B, INF_A, INF_B, ZERO_A, ZERO_B, NAN_C, INF_C, SIGN_C = (1 << k for k in range(9))

_NORMAL, _ZERO, _INF, _NAN = (int(c) for c in (ValueClass.NORMAL, ValueClass.ZERO,
                                               ValueClass.INF, ValueClass.NAN))


@dataclass(frozen=True)
class MacConfig:
    datatypes: tuple[MacDatatype, ...]
    stage_depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    guard: int = 1
    max_lanes: int = DEFAULT_MAX_LANES
    faithful: bool = True
    plans: tuple[PackingPlan, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dts = tuple(parse_datatype(d) for d in self.datatypes)
        if not dts:
            raise ConfigurationError("at least one datatype is required")
        if len(set(dts)) != len(dts):
            raise ConfigurationError("datatypes must be distinct")
        depths = tuple(int(d) for d in self.stage_depths)
        if len(depths) != 4 or min(depths) < 1:
            raise ConfigurationError("stage_depths needs four positive register counts")
        object.__setattr__(self, "datatypes", dts)
        object.__setattr__(self, "stage_depths", depths)
        object.__setattr__(self, "plans", tuple(plan(d, self.guard, self.max_lanes) for d in dts))

    @property
    def n_datatypes(self) -> int:
        return len(self.datatypes)

    @property
    def lanes(self) -> int:
        """P: the widest parallelism over the configured datatypes."""
        return max(p.lanes for p in self.plans)

    @property
    def latency(self) -> int:
        return sum(self.stage_depths)

    @property
    def fp_fallback(self) -> FloatFormat:
        """Format the FP adder bank assumes while an integer datatype is selected."""
        for dt in self.datatypes:
            if not dt.is_int:
                return dt.type_p
        return BF16

    def index(self, dt) -> int:
        if isinstance(dt, (int, np.integer)):
            if not 0 <= dt < self.n_datatypes:
                raise ConfigurationError(f"datatype index {dt} out of range")
            return int(dt)
        dt = parse_datatype(dt)
        try:
            return self.datatypes.index(dt)
        except ValueError:
            raise ConfigurationError(f"{dt.name} is not configured") from None

    def to_dict(self) -> dict:
        return {"datatypes": [d.name for d in self.datatypes], "stage_depths": list(self.stage_depths),
                "guard": self.guard, "max_lanes": self.max_lanes, "faithful": self.faithful}

    @classmethod
    def from_dict(cls, d: dict) -> "MacConfig":
        return cls(tuple(d["datatypes"]), tuple(d.get("stage_depths", (1, 1, 1, 1))),
                   d.get("guard", 1), d.get("max_lanes", DEFAULT_MAX_LANES), d.get("faithful", True))


# -- operand words ---------------------------------------------------------------

def pack_word(values: Sequence[int], width: int) -> int:
    """Concatenate lane patterns little-endian (lane 0 in the LSBs)."""
    word = 0
    for k, v in enumerate(values):
        if not 0 <= v < (1 << width):
            raise ValueError(f"lane value {v:#x} exceeds {width} bits")
        word |= int(v) << (k * width)
    return word


def unpack_word(word: int, width: int, count: int) -> list[int]:
    mask = (1 << width) - 1
    return [(word >> (k * width)) & mask for k in range(count)]


def _split(words, width, count) -> np.ndarray:
    words = np.asarray(words, dtype=np.int64)
    mask = (1 << width) - 1
    return np.stack([(words >> (k * width)) & mask for k in range(count)], axis=-1)


@dataclass
class IssueSlot:
    dtype_select: int
    a_word: int = 0
    b_word: int = 0
    c_lanes: tuple[int, ...] = ()
    valid: bool = True
    tag: object = None


@dataclass
class MacOutput:
    serial: int
    dtype_select: int
    word: int
    lanes: tuple[int, ...]
    issue_cycle: int
    cycle: int
    tag: object = None
    valid: bool = True


# -- stage payloads --------------------------------------------------------------

@dataclass
class Stage1Regs:
    dtype: int
    a_port: np.ndarray
    b_port: np.ndarray
    sign: np.ndarray       # (n, L) product sign s_a ^ s_b
    exp_a: np.ndarray      # (n, L) biased exponents as forwarded metadata
    exp_b: np.ndarray
    flags: np.ndarray      # (n, L) special-value flag bits


@dataclass
class Stage2Regs:
    dtype: int
    sign: np.ndarray
    ival: np.ndarray       # signed integer product (integer bank)
    sig: np.ndarray        # normalized significand in accumulator precision (FP bank)
    exp: np.ndarray        # unbiased exponent
    overflow: np.ndarray
    flags: np.ndarray


@dataclass
class Stage3Regs:
    dtype: int
    ival: np.ndarray
    sign: np.ndarray
    sig: np.ndarray
    exp: np.ndarray
    prod_sign: np.ndarray
    prod_overflow: np.ndarray
    sum_overflow: np.ndarray
    flags: np.ndarray


# -- helpers -----------------------------------------------------------------------

def bit_length(x: np.ndarray, width: int) -> np.ndarray:
    """Priority-encoder bit length for values below ``2**width``."""
    y = np.asarray(x, dtype=np.int64)
    n = np.zeros(y.shape, dtype=np.int64)
    step = 1
    while step * 2 < width:
        step *= 2
    while step:
        hit = (y >> step) != 0
        n += hit * step
        y = np.where(hit, y >> step, y)
        step //= 2
    return n + (y != 0)


def lzc(x: np.ndarray, width: int) -> np.ndarray:
    return width - bit_length(x, width)


def _rn_even(m: np.ndarray, shift: int) -> np.ndarray:
    if shift <= 0:
        return m << -shift
    q = m >> shift
    rem = m & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    return q + ((rem > half) | ((rem == half) & ((q & 1) == 1)))


def _operand_bias(fmt, dt: MacDatatype) -> int:
    if not fmt.is_int:
        return fmt.bias
    return 0 if dt.is_int else dt.type_p.bias


# -- stage 1 -----------------------------------------------------------------------

def _map_datatype(dt: MacDatatype, p: PackingPlan, a_words, b_words):
    ta, tb = dt.type_a, dt.type_b
    a_cls, a_sign, a_exp, a_mant = decode_array(_split(a_words, ta.width, p.lanes_a), ta)
    b_cls, b_sign, b_exp, b_mant = decode_array(_split(b_words, tb.width, p.lanes_b), tb)
    a_mag = np.where(a_cls == _NORMAL, a_mant, 0)
    b_mag = np.where(b_cls == _NORMAL, b_mant, 0)
    a_port, b_port = pack_array(p, a_mag, b_mag)
    ia = [i for i, _ in p.lane_map]
    jb = [j for _, j in p.lane_map]
    bias_a, bias_b = _operand_bias(ta, dt), _operand_bias(tb, dt)
    exp_a = np.where(a_cls == _NORMAL, a_exp + bias_a, 0)[:, ia]
    exp_b = np.where(b_cls == _NORMAL, b_exp + bias_b, 0)[:, jb]
    ca, cb = a_cls[:, ia], b_cls[:, jb]
    flags = (
        (ca == _NAN) * NAN_A | (cb == _NAN) * NAN_B | (ca == _INF) * INF_A | (cb == _INF) * INF_B
        | (ca == _ZERO) * ZERO_A | (cb == _ZERO) * ZERO_B
    )
    sign = a_sign[:, ia] ^ b_sign[:, jb]
    return a_port, b_port, sign, exp_a, exp_b, flags.astype(np.int64)


def stage1_map(dtype: int, a_words, b_words, cfg: MacConfig) -> Stage1Regs:
    """Operand interpretation and bit-mapping.

    With ``cfg.faithful`` every configured mapping submodule runs on the raw
    words (masked to its own width) and must produce in-range ports; the
    datatype select then picks one result.
    """
    a_words = np.asarray(a_words, dtype=np.int64)
    b_words = np.asarray(b_words, dtype=np.int64)
    indices = range(cfg.n_datatypes) if cfg.faithful else (dtype,)
    selected = None
    for k in indices:
        dt, p = cfg.datatypes[k], cfg.plans[k]
        aw = a_words & ((1 << (dt.type_a.width * p.lanes_a)) - 1)
        bw = b_words & ((1 << (dt.type_b.width * p.lanes_b)) - 1)
        out = _map_datatype(dt, p, aw, bw)
        assert out[0].size == 0 or (out[0].max() < (1 << 27) and out[1].max() < (1 << 18))
        if k == dtype:
            selected = out
    return Stage1Regs(dtype, *selected)


# -- stage 2 -----------------------------------------------------------------------

def _fp_postcompute(raw, sign, exp_a, exp_b, dt: MacDatatype, p: PackingPlan, fmt: FloatFormat):
    """LZC normalization of each lane product and RN-even into ``fmt`` precision."""
    frame = p.width_a + p.width_b
    frac = (0 if dt.type_a.is_int else dt.type_a.mant_bits) + (0 if dt.type_b.is_int else dt.type_b.mant_bits)
    bias = _operand_bias(dt.type_a, dt) + _operand_bias(dt.type_b, dt)
    zero = raw == 0
    delta = lzc(raw, frame)
    m_norm = raw << delta
    exp = exp_a + exp_b - bias - frac + frame - 1 - delta
    q = _rn_even(m_norm, frame - fmt.sig_bits)
    carry = (q >> fmt.sig_bits) != 0
    q = np.where(carry, q >> 1, q)
    exp = exp + carry
    overflow = ~zero & (exp > fmt.emax)
    flush = zero | (exp < fmt.emin)
    return np.where(flush, 0, q), np.where(flush, 0, exp), overflow


def stage2_multiply_postcompute(s1: Stage1Regs, cfg: MacConfig) -> Stage2Regs:
    dt, p = cfg.datatypes[s1.dtype], cfg.plans[s1.dtype]
    raw = extract_array(p, wide_mul_array(s1.a_port, s1.b_port))
    ival = np.where(s1.sign == 1, -raw, raw)
    fmt = cfg.fp_fallback if dt.is_int else dt.type_p
    if dt.is_int and not cfg.faithful:
        sig = exp = np.zeros_like(raw)
        overflow = np.zeros(raw.shape, dtype=bool)
    else:
        sig, exp, overflow = _fp_postcompute(raw, s1.sign, s1.exp_a, s1.exp_b, dt, p, fmt)
    return Stage2Regs(s1.dtype, s1.sign, ival, sig, exp, overflow, s1.flags)


# -- stage 3 -----------------------------------------------------------------------

def fp_add(sx, mx, ex, sy, my, ey, fmt: FloatFormat):
    """RN-even floating-point adder with guard, round and sticky bits.

    Operands are normalized significands (implicit one included, 0 for
    zero) with unbiased exponents. Returns ``(sign, sig, exp, overflow)``;
    results below the normal range are flushed to signed zero.
    """
    sb = fmt.sig_bits
    zx, zy = mx == 0, my == 0
    x_big = (ex > ey) | ((ex == ey) & (mx >= my))
    s_l, m_l, e_l = np.where(x_big, sx, sy), np.where(x_big, mx, my), np.where(x_big, ex, ey)
    s_s, m_s, e_s = np.where(x_big, sy, sx), np.where(x_big, my, mx), np.where(x_big, ey, ex)
    dist = np.minimum(e_l - e_s, sb + 3)
    wide_l = m_l << 3
    wide_s = m_s << 3
    aligned = (wide_s >> dist) | ((wide_s & ((1 << dist) - 1)) != 0)
    total = np.where(s_l != s_s, wide_l - aligned, wide_l + aligned)
    carry = (total >> (sb + 3)) != 0
    total = np.where(carry, (total >> 1) | (total & 1), total)
    shift = np.where(carry, 0, lzc(total, sb + 3))
    total = total << shift
    exp = e_l + carry - shift
    q = total >> 3
    guard = (total >> 2) & 1
    rest = (total & 3) != 0
    q = q + (guard & (rest | (q & 1)))
    carry = (q >> sb) != 0
    q = np.where(carry, q >> 1, q)
    exp = exp + carry
    cancel = total == 0
    sign = np.where(cancel, 0, s_l)
    overflow = ~cancel & (exp > fmt.emax)
    flush = cancel | (exp < fmt.emin)
    sig = np.where(flush, 0, q)
    exp = np.where(flush, 0, exp)
    # zero operands pass the other through; two zeros keep a sign only if both carry it
    both = zx & zy
    sign = np.where(both, sx & sy, np.where(zx, sy, np.where(zy, sx, sign)))
    sig = np.where(zx, my, np.where(zy, mx, sig))
    exp = np.where(zx, ey, np.where(zy, ex, exp))
    overflow = overflow & ~zx & ~zy
    return sign, sig, exp, overflow


def stage3_accumulate(s2: Stage2Regs, c_lanes, cfg: MacConfig) -> Stage3Regs:
    """Decoupled integer and floating-point adder banks; the datatype picks one."""
    dt, p = cfg.datatypes[s2.dtype], cfg.plans[s2.dtype]
    c = np.asarray(c_lanes, dtype=np.int64).reshape(s2.sign.shape[0], -1)
    if c.shape[1] < p.lanes:
        c = np.pad(c, ((0, 0), (0, p.lanes - c.shape[1])))
    c = c[:, : p.lanes]
    c_cls, c_sign, _, _ = decode_array(c & ((1 << dt.type_c.width) - 1), dt.type_c)
    flags = s2.flags | (c_cls == _NAN) * NAN_C | (c_cls == _INF) * INF_C | (c_sign == 1) * SIGN_C
    run_int = dt.is_int or cfg.faithful
    run_fp = (not dt.is_int) or cfg.faithful
    ival = s2.ival
    if run_int:
        c32 = c & 0xFFFFFFFF
        c32 = c32 - ((c32 >> 31) << 32)
        ival = np.clip(s2.ival + c32, -(1 << 31), (1 << 31) - 1)
    sign, sig, exp = s2.sign, s2.sig, s2.exp
    sum_overflow = np.zeros(sig.shape, dtype=bool)
    if run_fp:
        fmt = cfg.fp_fallback if dt.is_int else dt.type_p
        c_cls, c_sign, c_exp, c_mant = decode_array(c & ((1 << fmt.width) - 1), fmt)
        c_mant = np.where(c_cls == _NORMAL, c_mant, 0)
        sign, sig, exp, sum_overflow = fp_add(s2.sign, s2.sig, s2.exp, c_sign, c_mant, c_exp, fmt)
    return Stage3Regs(s2.dtype, ival, sign, sig, exp, s2.sign, s2.overflow, sum_overflow, flags)


# -- stage 4 -----------------------------------------------------------------------

def stage4_select(s3: Stage3Regs, cfg: MacConfig) -> np.ndarray:
    """Resolve specials from the forwarded flags and encode each lane."""
    dt = cfg.datatypes[s3.dtype]
    if dt.is_int:
        return s3.ival & 0xFFFFFFFF
    fmt = dt.type_p
    f = s3.flags
    has = lambda bit: (f & bit) != 0  # noqa: E731
    nan_in = has(NAN_A) | has(NAN_B) | has(NAN_C)
    inf_times_zero = (has(INF_A) & has(ZERO_B)) | (has(ZERO_A) & has(INF_B))
    prod_inf = ((has(INF_A) | has(INF_B)) & ~inf_times_zero) | s3.prod_overflow
    c_sign = has(SIGN_C).astype(np.int64)
    prod_sign = s3.prod_sign
    nan = nan_in | inf_times_zero | (prod_inf & has(INF_C) & (prod_sign != c_sign))
    inf = prod_inf | has(INF_C) | s3.sum_overflow
    inf_sign = np.where(prod_inf, prod_sign, np.where(has(INF_C), c_sign, s3.sign))
    zero = s3.sig == 0
    out = np.where(zero, s3.sign << (fmt.width - 1), pack_fields(s3.sign, s3.exp, s3.sig, fmt))
    if fmt.encodes_infinity:
        out = np.where(inf, fmt.inf(0) | (inf_sign << (fmt.width - 1)), out)
    else:
        out = np.where(inf, fmt.qnan(), out)
    return np.where(nan, fmt.qnan(), out)


def assemble_output(lanes: Sequence[int], dt: MacDatatype | str, width_lanes: int | None = None) -> int:
    """Concatenate lane results little-endian into the output word.

    ``width_lanes`` is P; lanes beyond ``len(lanes)`` are zero-filled.
    """
    dt = parse_datatype(dt)
    if width_lanes is not None and len(lanes) > width_lanes:
        raise ValueError("more lanes than the configured parallelism")
    return pack_word(list(lanes), dt.type_p.width)


# -- the pipeline ------------------------------------------------------------------

@dataclass
class _Payload:
    serial: int
    issue_cycle: int
    tag: object
    regs: object


class MacPipeline:
    """Single pipeline instance stepping one cycle per :meth:`step` call.

    An operation issued at cycle ``t`` leaves the last register at cycle
    ``t + cfg.latency``; one slot is accepted every cycle.
    """

    def __init__(self, cfg: MacConfig, trace: Callable[[str], None] | None = None):
        self.cfg = cfg
        self.trace = trace
        self.reset()

    def reset(self) -> None:
        d1, d2, d3, _ = self.cfg.stage_depths
        self.cycle = 0
        self._serial = 0
        self._regs: list[_Payload | None] = [None] * self.cfg.latency
        self._stage_entry = {d1: 2, d1 + d2: 3, d1 + d2 + d3: 4}
        self._c_line: deque = deque([None] * (d1 + d2))
        self._dtype_line: deque = deque([None] * (d1 + d2 + d3))

    @property
    def occupancy(self) -> str:
        return "".join("1" if r is not None else "0" for r in self._regs)

    def make_slot(self, dt, a_lanes: Sequence[int], b_lanes: Sequence[int],
                  c_lanes: Sequence[int], tag=None) -> IssueSlot:
        """Build a slot from per-operand bit patterns (lane 0 first)."""
        k = self.cfg.index(dt)
        d = self.cfg.datatypes[k]
        return IssueSlot(k, pack_word(a_lanes, d.type_a.width), pack_word(b_lanes, d.type_b.width),
                         tuple(c_lanes), True, tag)

    def step(self, slot: IssueSlot | None = None) -> MacOutput | None:
        """Advance one clock; returns the operation completing this cycle, if any."""
        cfg = self.cfg
        done = self._regs[-1]
        c_entry = self._c_line.popleft()
        dtype_entry = self._dtype_line.popleft()
        for r in range(cfg.latency - 1, 0, -1):
            src = self._regs[r - 1]
            stage = self._stage_entry.get(r)
            if src is not None and stage is not None:
                src = _Payload(src.serial, src.issue_cycle, src.tag,
                               self._advance(stage, src, c_entry, dtype_entry))
            self._regs[r] = src
        if slot is not None and slot.valid:
            cfg.index(slot.dtype_select)
            c = np.zeros((1, cfg.lanes), dtype=np.int64)
            c[0, : len(slot.c_lanes)] = slot.c_lanes[: cfg.lanes]
            s1 = stage1_map(slot.dtype_select, [slot.a_word], [slot.b_word], cfg)
            payload = _Payload(self._serial, self.cycle, slot.tag, s1)
            self._c_line.append((self._serial, c))
            self._dtype_line.append((self._serial, slot.dtype_select))
            self._serial += 1
        else:
            payload = None
            self._c_line.append(None)
            self._dtype_line.append(None)
        self._regs[0] = payload
        out = None
        if done is not None:
            lanes = tuple(int(v) for v in done.regs[0])
            dt_index = done.regs[1]
            out = MacOutput(done.serial, dt_index, assemble_output(lanes, cfg.datatypes[dt_index], cfg.lanes),
                            lanes, done.issue_cycle, self.cycle, done.tag)
        if self.trace is not None:
            self._emit_trace(slot, out)
        self.cycle += 1
        return out

    def _advance(self, stage: int, src: _Payload, c_entry, dtype_entry):
        cfg = self.cfg
        if stage == 2:
            return stage2_multiply_postcompute(src.regs, cfg)
        if stage == 3:
            serial, c = c_entry
            assert serial == src.serial, "C operand misaligned with its products"
            return stage3_accumulate(src.regs, c, cfg)
        serial, dtype = dtype_entry
        assert serial == src.serial and dtype == src.regs.dtype, "datatype select misaligned"
        return (stage4_select(src.regs, cfg)[0], dtype)

    def _emit_trace(self, slot, out) -> None:
        dtype = "-" if slot is None or not slot.valid else self.cfg.datatypes[slot.dtype_select].name
        flags = 0
        if self._regs[0] is not None:
            flags = int(np.bitwise_or.reduce(self._regs[0].regs.flags.ravel()))
        emitted = "-" if out is None else f"{out.serial}"
        self.trace(f"{self.cycle},{self.occupancy},{dtype},{flags:#05x},{emitted}")

    def run(self, slots: Iterable[IssueSlot | None], flush: bool = True) -> list[MacOutput]:
        """Issue one slot per cycle, optionally draining the pipeline afterwards."""
        outputs = [o for o in (self.step(s) for s in slots) if o is not None]
        if flush:
            for _ in range(self.cfg.latency):
                o = self.step(None)
                if o is not None:
                    outputs.append(o)
        return outputs

    def evaluate(self, dt, a_words, b_words, c_lanes) -> np.ndarray:
        """Apply the four stages to a batch of slots of one datatype; returns (n, lanes) patterns."""
        k = self.cfg.index(dt)
        return evaluate(self.cfg, k, a_words, b_words, c_lanes)


def evaluate(cfg: MacConfig, dtype: int, a_words, b_words, c_lanes) -> np.ndarray:
    """Combinational equivalent of streaming a batch through the pipeline."""
    a_words = np.atleast_1d(np.asarray(a_words, dtype=np.int64))
    s1 = stage1_map(dtype, a_words, b_words, cfg)
    s2 = stage2_multiply_postcompute(s1, cfg)
    s3 = stage3_accumulate(s2, c_lanes, cfg)
    return stage4_select(s3, cfg)
