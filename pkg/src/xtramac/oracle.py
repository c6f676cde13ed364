"""Golden reference for every MAC pattern.

Two independent routes live here:

* :func:`oracle_mac` works on Python integers and :class:`fractions.Fraction`
  and is the ground truth. It is slow.
* :func:`oracle_mac_batch` evaluates whole numpy arrays with float64
  arithmetic. Products of the supported operands are exact in float64; sums
  are made exact with an error-free TwoSum and rounded to odd before the
  final RN-even step, which makes the double rounding innocuous. It exists
  so exhaustive sweeps finish in minutes, and is itself checked against
  :func:`oracle_mac`.

Both default to unfused semantics: the product is rounded into the
accumulator format first, then the sum is rounded again. ``fused=True``
rounds ``a*b + c`` once.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .formats import (
    DecodedValue,
    Exact,
    FloatFormat,
    Format,
    MacDatatype,
    ValueClass,
    decode,
    encode,
    parse_datatype,
)


class ZeroMantissaError(ValueError):
    """A zero product has no normalized form; the caller must emit Zero."""


@dataclass(frozen=True)
class ExactProduct:
    """Unrounded product: value = (-1)^sign * mantissa_product * 2^(exponent - frac_bits).

    ``frame_bits`` is the width of the double-width product frame
    (operand widths summed), used for leading-zero counting.
    """

    sign: int
    mantissa_product: int
    exponent: int
    frac_bits: int
    frame_bits: int
    cls: ValueClass

    def to_exact(self) -> Exact:
        if self.cls is ValueClass.NAN:
            return Exact.nan()
        if self.cls is ValueClass.INF:
            return Exact.inf(self.sign)
        return Exact(self.sign, self.mantissa_product, self.exponent - self.frac_bits)


def operand_width(fmt: Format) -> int:
    """Bits carried into the multiplier: magnitude bits for INT, significand for FP."""
    return fmt.magnitude_bits if fmt.is_int else fmt.sig_bits


def oracle_mul(a: DecodedValue, b: DecodedValue, dt: MacDatatype | str) -> ExactProduct:
    dt = parse_datatype(dt)
    sign = a.sign ^ b.sign
    frac = a.frac_bits + b.frac_bits
    frame = operand_width(dt.type_a) + operand_width(dt.type_b)

    def special(cls):
        return ExactProduct(0 if cls is ValueClass.NAN else sign, 0, 0, frac, frame, cls)

    if ValueClass.NAN in (a.cls, b.cls):
        return special(ValueClass.NAN)
    if ValueClass.INF in (a.cls, b.cls):
        if ValueClass.ZERO in (a.cls, b.cls):
            return special(ValueClass.NAN)
        return special(ValueClass.INF)
    if ValueClass.ZERO in (a.cls, b.cls):
        return special(ValueClass.ZERO)
    return ExactProduct(sign, a.mantissa * b.mantissa, a.exponent + b.exponent, frac, frame,
                        ValueClass.NORMAL)


def leading_zeros(x: int, width: int) -> int:
    return width - x.bit_length()


def oracle_normalize(p: ExactProduct, width: int | None = None) -> tuple[int, int]:
    """Shift the product so its leading one sits at bit ``width-1``.

    Returns ``(mantissa, exponent)`` where exponent is the unbiased exponent
    of the normalized value ``1.f * 2^exponent``. ``width`` defaults to the
    product frame; the leading-zero count is taken in that frame.
    """
    width = p.frame_bits if width is None else width
    if p.cls is not ValueClass.NORMAL or p.mantissa_product == 0:
        raise ZeroMantissaError("zero or special product")
    delta = leading_zeros(p.mantissa_product, width)
    if delta < 0:
        raise ValueError(f"product does not fit a {width}-bit frame")
    return p.mantissa_product << delta, p.exponent - p.frac_bits + width - 1 - delta


def _add_exact(x: Exact, y: Exact) -> Exact:
    if x.is_nan or y.is_nan:
        return Exact.nan()
    if x.is_inf or y.is_inf:
        if x.is_inf and y.is_inf and x.sign != y.sign:
            return Exact.nan()
        return x if x.is_inf else y
    if x.is_zero and y.is_zero:
        return Exact.zero(x.sign & y.sign)
    total = x.to_fraction() + y.to_fraction()
    return Exact.from_fraction(total, zero_sign=0)


def oracle_mac(a_bits: int, b_bits: int, c_bits: int, dt: MacDatatype | str,
               *, fused: bool = False) -> int:
    """Exact-arithmetic reference for ``P = A x B + C``; returns P's bit pattern."""
    dt = parse_datatype(dt)
    a, b = decode(a_bits, dt.type_a), decode(b_bits, dt.type_b)
    c = decode(c_bits, dt.type_c)
    prod = oracle_mul(a, b, dt).to_exact()
    if dt.is_int:
        total = prod.to_fraction() + c.to_fraction()
        return encode(Exact.from_fraction(total), dt.type_p)
    if not fused:
        prod = decode(encode(prod, dt.type_p), dt.type_p).to_exact()
    return encode(_add_exact(prod, c.to_exact()), dt.type_p)


# -- batch route ---------------------------------------------------------------

@lru_cache(maxsize=None)
def float64_table(fmt: Format) -> np.ndarray:
    """float64 value of every pattern of a <=16-bit format, via the exact decoder."""
    if fmt.width > 16:
        raise ValueError("lookup tables are limited to 16-bit formats")
    table = np.array([decode(i, fmt).to_exact().to_float() for i in range(1 << fmt.width)])
    table.setflags(write=False)
    return table


def _operand_values(bits, fmt: Format) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    if fmt.is_int and fmt.width > 16:
        return (bits - ((bits >> (fmt.bits - 1) & 1) << fmt.bits)).astype(np.float64)
    return float64_table(fmt)[bits]


def quantize_float64(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """RN-even from float64 into ``fmt`` precision, then FTZ and overflow rules.

    Returns float64 values that are exactly representable in ``fmt``.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = x.view(np.uint64)
    drop = np.uint64(52 - fmt.mant_bits)
    lsb = (raw >> drop) & np.uint64(1)
    rounded = (raw + (np.uint64(1) << (drop - np.uint64(1))) - np.uint64(1) + lsb) >> drop << drop
    finite = np.isfinite(x)
    out = np.where(finite, rounded.view(np.float64), x)
    mag = np.abs(out)
    min_normal = 2.0 ** fmt.emin
    max_finite = (2.0 - 2.0 ** -fmt.mant_bits) * 2.0 ** fmt.emax
    out = np.where(finite & (mag < min_normal), np.copysign(0.0, x), out)
    if fmt.encodes_infinity:
        over = np.copysign(np.inf, x)
    elif fmt.has_nan:
        over = np.full_like(x, np.nan)
    else:
        over = np.copysign(max_finite, x)
    out = np.where(np.isinf(x) | (finite & (mag > max_finite)), over, out)
    return out


def _round_to_odd_sum(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``x + y`` rounded to odd in float64, via TwoSum."""
    s = x + y
    with np.errstate(invalid="ignore"):
        bp = s - x
        err = (x - (s - bp)) + (y - bp)
    fix = np.isfinite(s) & (err != 0) & ((s.view(np.uint64) & np.uint64(1)) == 0)
    toward = np.where(err > 0, np.inf, -np.inf)
    return np.where(fix, np.nextafter(s, toward), s)


def float64_to_bits(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """Encode float64 values already representable in ``fmt``."""
    x = np.asarray(x, dtype=np.float64)
    raw = x.view(np.uint64)
    sign = (raw >> np.uint64(63)).astype(np.int64)
    e64 = ((raw >> np.uint64(52)) & np.uint64(0x7FF)).astype(np.int64)
    m64 = (raw & np.uint64((1 << 52) - 1)) >> np.uint64(52 - fmt.mant_bits)
    bits = (sign << (fmt.width - 1)) | ((e64 - 1023 + fmt.bias) << fmt.mant_bits) | m64.astype(np.int64)
    bits = np.where(x == 0, sign << (fmt.width - 1), bits)
    if fmt.encodes_infinity:
        bits = np.where(np.isinf(x), (sign << (fmt.width - 1)) | (fmt.exp_field_max << fmt.mant_bits), bits)
    if fmt.has_nan:
        bits = np.where(np.isnan(x), fmt.qnan(), bits)
    return bits.astype(np.int64)


def oracle_products(a_bits, b_bits, dt: MacDatatype | str, *, fused: bool = False) -> np.ndarray:
    """float64 products, rounded into the accumulator format unless ``fused``."""
    dt = parse_datatype(dt)
    a = _operand_values(a_bits, dt.type_a)
    b = _operand_values(b_bits, dt.type_b)
    with np.errstate(invalid="ignore"):
        prod = a * b
        return prod if fused else quantize_float64(prod, dt.type_p)


def oracle_accumulate(prod, c_bits, dt: MacDatatype | str) -> np.ndarray:
    """Round ``prod + c`` into the accumulator format and return bit patterns."""
    dt = parse_datatype(dt)
    c = _operand_values(c_bits, dt.type_c)
    with np.errstate(invalid="ignore"):
        total = quantize_float64(_round_to_odd_sum(np.asarray(prod, dtype=np.float64), c), dt.type_p)
    return float64_to_bits(total, dt.type_p)


def oracle_mac_batch(a_bits, b_bits, c_bits, dt: MacDatatype | str, *, fused: bool = False) -> np.ndarray:
    """Vectorized reference; same contract as :func:`oracle_mac`."""
    dt = parse_datatype(dt)
    a_bits, b_bits, c_bits = np.broadcast_arrays(
        np.asarray(a_bits, dtype=np.int64), np.asarray(b_bits, dtype=np.int64),
        np.asarray(c_bits, dtype=np.int64))
    if dt.is_int:
        p = dt.type_p
        prod = _int_values(a_bits, dt.type_a) * _int_values(b_bits, dt.type_b)
        total = np.clip(prod + _int_values(c_bits, p), p.min_value, p.max_value)
        return total & ((1 << p.bits) - 1)
    return oracle_accumulate(oracle_products(a_bits, b_bits, dt, fused=fused), c_bits, dt)


def _int_values(bits: np.ndarray, fmt) -> np.ndarray:
    top = (bits >> (fmt.bits - 1)) & 1
    return bits - (top << fmt.bits)
