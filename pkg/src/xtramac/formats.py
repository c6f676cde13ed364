"""Numeric formats: minifloat/integer descriptors, DAZ decode, RN-even/FTZ encode.

Every float format is described by its exponent and stored-mantissa widths.
Special values follow one rule for all formats: an all-ones exponent field is
special (Inf when the format encodes infinity and the mantissa is zero, NaN
otherwise). Subnormal encodings are read as signed zero and never produced.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np


class ConfigurationError(ValueError):
    """Raised for malformed formats, datatypes or operand widths."""


class ValueClass(enum.IntEnum):
    NORMAL = 0
    ZERO = 1
    INF = 2
    NAN = 3
    SUBNORMAL = 4


@dataclass(frozen=True)
class FloatFormat:
    name: str
    exp_bits: int
    mant_bits: int
    bias: int = None  # type: ignore[assignment]
    encodes_infinity: bool = True
    all_ones_exp_is_special: bool = True
    internal: bool = False

    def __post_init__(self):
        if self.bias is None:
            object.__setattr__(self, "bias", (1 << (self.exp_bits - 1)) - 1)
        if self.exp_bits < 1 or self.mant_bits < 1:
            raise ConfigurationError(f"{self.name}: field widths must be positive")
        if self.bias != (1 << (self.exp_bits - 1)) - 1:
            raise ConfigurationError(f"{self.name}: bias must be 2^(exp_bits-1)-1")
        if not self.internal and self.width not in (4, 8, 16):
            raise ConfigurationError(f"{self.name}: width {self.width} not in {{4, 8, 16}}")
        if self.encodes_infinity and not self.all_ones_exp_is_special:
            raise ConfigurationError(f"{self.name}: infinity needs a special exponent")

    is_int = False

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def exp_field_max(self) -> int:
        return (1 << self.exp_bits) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        top = self.exp_field_max - 1 if self.all_ones_exp_is_special else self.exp_field_max
        return top - self.bias

    @property
    def sig_bits(self) -> int:
        """Significand width including the implicit one."""
        return self.mant_bits + 1

    @property
    def has_nan(self) -> bool:
        return self.all_ones_exp_is_special

    @property
    def hex_digits(self) -> int:
        return (self.width + 3) // 4

    def qnan(self) -> int:
        return (self.exp_field_max << self.mant_bits) | (1 << (self.mant_bits - 1))

    def inf(self, sign: int) -> int:
        return (sign << (self.width - 1)) | (self.exp_field_max << self.mant_bits)

    def max_finite(self, sign: int = 0) -> int:
        return (
            (sign << (self.width - 1))
            | ((self.emax + self.bias) << self.mant_bits)
            | ((1 << self.mant_bits) - 1)
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "float"
        return d


@dataclass(frozen=True)
class IntFormat:
    name: str
    bits: int
    signed: bool = True

    def __post_init__(self):
        if not 2 <= self.bits <= 32:
            raise ConfigurationError(f"{self.name}: integer width must be 2..32")
        if not self.signed:
            raise ConfigurationError(f"{self.name}: only two's complement integers are supported")

    is_int = True

    @property
    def width(self) -> int:
        return self.bits

    @property
    def min_value(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def max_value(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def magnitude_bits(self) -> int:
        """Bits needed for the largest magnitude, 2^(bits-1)."""
        return self.bits

    @property
    def hex_digits(self) -> int:
        return (self.width + 3) // 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "int"
        return d


Format = Union[FloatFormat, IntFormat]


@dataclass(frozen=True)
class DecodedValue:
    """Sign/exponent/mantissa triple: value = (-1)^sign * mantissa * 2^(exponent - frac_bits)."""

    cls: ValueClass
    sign: int
    exponent: int = 0
    mantissa: int = 0
    frac_bits: int = 0

    def to_exact(self) -> "Exact":
        if self.cls is ValueClass.NAN:
            return Exact.nan()
        if self.cls is ValueClass.INF:
            return Exact.inf(self.sign)
        return Exact(self.sign, self.mantissa, self.exponent - self.frac_bits)

    def to_fraction(self) -> Fraction:
        return self.to_exact().to_fraction()


@dataclass(frozen=True)
class Exact:
    """Exact value: (-1)^sign * significand * 2^exponent, or a special."""

    sign: int
    significand: int
    exponent: int = 0
    special: str | None = None  # None, "inf" or "nan"

    @classmethod
    def nan(cls) -> "Exact":
        return cls(0, 0, 0, "nan")

    @classmethod
    def inf(cls, sign: int) -> "Exact":
        return cls(sign, 0, 0, "inf")

    @classmethod
    def zero(cls, sign: int = 0) -> "Exact":
        return cls(sign, 0, 0)

    @classmethod
    def from_fraction(cls, value: Fraction, zero_sign: int = 0) -> "Exact":
        value = Fraction(value)
        if value == 0:
            return cls.zero(zero_sign)
        sign = int(value < 0)
        num, den = abs(value.numerator), value.denominator
        if den & (den - 1):
            raise ValueError("value is not dyadic; it has no finite binary expansion")
        return cls(sign, num, -(den.bit_length() - 1))

    @classmethod
    def from_float(cls, x: float) -> "Exact":
        if x != x:
            return cls.nan()
        if x in (float("inf"), float("-inf")):
            return cls.inf(int(x < 0))
        return cls.from_fraction(Fraction(x), zero_sign=int(np.signbit(x)))

    @property
    def is_nan(self) -> bool:
        return self.special == "nan"

    @property
    def is_inf(self) -> bool:
        return self.special == "inf"

    @property
    def is_zero(self) -> bool:
        return self.special is None and self.significand == 0

    def to_fraction(self) -> Fraction:
        if self.special:
            raise ValueError(f"{self.special} has no rational value")
        v = Fraction(self.significand) * Fraction(2) ** self.exponent
        return -v if self.sign else v

    def to_float(self) -> float:
        if self.is_nan:
            return float("nan")
        if self.is_inf:
            return float("-inf") if self.sign else float("inf")
        if self.significand == 0:
            return -0.0 if self.sign else 0.0
        return float(self.to_fraction())


# -- registry -----------------------------------------------------------------

FP4 = FloatFormat("fp4", 2, 1, encodes_infinity=False)
FP8 = FloatFormat("fp8", 4, 3, encodes_infinity=False)
FP8ALT = FloatFormat("fp8alt", 5, 2)
FP16 = FloatFormat("fp16", 5, 10)
BF16 = FloatFormat("bf16", 8, 7)
FP32 = FloatFormat("fp32", 8, 23, internal=True)

INT_FORMATS = {f"int{b}": IntFormat(f"int{b}", b) for b in range(2, 9)}
INT32 = IntFormat("int32", 32)
INT4 = INT_FORMATS["int4"]
INT8 = INT_FORMATS["int8"]

FORMATS: dict[str, Format] = {
    f.name: f for f in (FP4, FP8, FP8ALT, FP16, BF16, FP32, *INT_FORMATS.values(), INT32)
}

ALIASES = {"e2m1": "fp4", "e4m3": "fp8", "e5m2": "fp8alt", "e5m10": "fp16", "e8m7": "bf16",
           "e8m23": "fp32", "half": "fp16", "bfloat16": "bf16"}


def get_format(name: str | Format) -> Format:
    if isinstance(name, (FloatFormat, IntFormat)):
        return name
    key = ALIASES.get(name.lower(), name.lower())
    try:
        return FORMATS[key]
    except KeyError:
        raise ConfigurationError(f"unknown format {name!r}") from None


def format_from_dict(d: dict) -> Format:
    d = dict(d)
    kind = d.pop("kind", "float")
    if kind == "int":
        return IntFormat(**d)
    return FloatFormat(**d)


def registry_to_json(formats: dict[str, Format] | None = None) -> str:
    formats = FORMATS if formats is None else formats
    return json.dumps(
        {"schema_version": 1, "formats": [f.to_dict() for f in formats.values()]}, indent=2
    )


def registry_from_json(text: str) -> dict[str, Format]:
    data = json.loads(text)
    return {f.name: f for f in (format_from_dict(d) for d in data["formats"])}


def save_registry(path: str | Path, formats: dict[str, Format] | None = None) -> None:
    Path(path).write_text(registry_to_json(formats) + "\n")


def load_registry(path: str | Path) -> dict[str, Format]:
    return registry_from_json(Path(path).read_text())


@dataclass(frozen=True)
class MacDatatype:
    """A multiply-accumulate pattern P = A x B + C."""

    name: str
    type_a: Format
    type_b: Format
    type_c: Format
    type_p: Format = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.type_p is None:
            object.__setattr__(self, "type_p", self.type_c)
        if self.type_c != self.type_p:
            raise ConfigurationError(f"{self.name}: accumulator type must equal output type")
        if self.type_p.is_int != (self.type_a.is_int and self.type_b.is_int):
            raise ConfigurationError(f"{self.name}: INT x INT must accumulate in INT, all else in FP")
        for role, fmt in (("A", self.type_a), ("B", self.type_b), ("P", self.type_p)):
            if getattr(fmt, "internal", False):
                raise ConfigurationError(f"{self.name}: {fmt.name} is oracle-internal ({role})")
        for role, fmt in (("A", self.type_a), ("B", self.type_b)):
            if fmt.is_int and fmt.bits > 8:
                raise ConfigurationError(f"{self.name}: integer multiplicands are 2-8 bits ({role})")
        if self.type_p.is_int and self.type_p.bits != 32:
            raise ConfigurationError(f"{self.name}: integer accumulation is 32-bit")

    @property
    def is_int(self) -> bool:
        return self.type_p.is_int

    def to_dict(self) -> dict:
        return {"name": self.name, "a": self.type_a.name, "b": self.type_b.name,
                "c": self.type_c.name, "p": self.type_p.name}


def _default_accumulator(a: Format, b: Format) -> Format:
    if a.is_int and b.is_int:
        return INT32
    if FP16 in (a, b):
        return FP16
    return BF16


def parse_datatype(spec: str | MacDatatype) -> MacDatatype:
    """Parse ``<a>x<b>[+<c>]`` such as ``int4xbf16`` or ``fp8xfp8+bf16``."""
    if isinstance(spec, MacDatatype):
        return spec
    text = spec.lower().strip()
    if text in DATATYPES:
        return DATATYPES[text]
    body, _, acc = text.partition("+")
    left, sep, right = body.partition("x")
    if not sep or not left or not right:
        raise ConfigurationError(f"cannot parse datatype {spec!r}")
    a, b = get_format(left), get_format(right)
    p = get_format(acc) if acc else _default_accumulator(a, b)
    return MacDatatype(text, a, b, p)


_DT_SPECS = [
    "int8xint8", "int4xint4",
    "int4xbf16", "int8xbf16", "int4xfp16", "int8xfp16",
    "fp4xbf16", "fp4xfp16", "fp8xbf16", "fp8xfp16",
    "fp4xfp4", "fp8xfp8", "fp8altxfp8alt",
    "bf16xbf16", "fp16xfp16",
]
DATATYPES: dict[str, MacDatatype] = {}
for _s in _DT_SPECS:
    DATATYPES[_s] = parse_datatype(_s)
del _s


# -- scalar decode / encode -----------------------------------------------------

def _check_width(bits: int, fmt: Format) -> None:
    if not 0 <= bits < (1 << fmt.width):
        raise ConfigurationError(f"bit pattern {bits:#x} does not fit {fmt.name} ({fmt.width} bits)")


def classify(bits: int, fmt: Format) -> ValueClass:
    """Raw class of a pattern, reporting subnormals before DAZ applies."""
    _check_width(bits, fmt)
    if fmt.is_int:
        return ValueClass.ZERO if bits == 0 else ValueClass.NORMAL
    e = (bits >> fmt.mant_bits) & fmt.exp_field_max
    m = bits & ((1 << fmt.mant_bits) - 1)
    if e == 0:
        return ValueClass.ZERO if m == 0 else ValueClass.SUBNORMAL
    if e == fmt.exp_field_max and fmt.all_ones_exp_is_special:
        return ValueClass.INF if (fmt.encodes_infinity and m == 0) else ValueClass.NAN
    return ValueClass.NORMAL


def decode(bits: int, fmt: Format) -> DecodedValue:
    cls = classify(bits, fmt)
    if fmt.is_int:
        value = bits - (1 << fmt.bits) if bits >> (fmt.bits - 1) else bits
        return DecodedValue(cls, int(value < 0), 0, abs(value), 0)
    sign = bits >> (fmt.width - 1)
    if cls is ValueClass.SUBNORMAL:
        cls = ValueClass.ZERO
    if cls is not ValueClass.NORMAL:
        return DecodedValue(cls, sign, 0, 0, fmt.mant_bits)
    e = (bits >> fmt.mant_bits) & fmt.exp_field_max
    m = bits & ((1 << fmt.mant_bits) - 1)
    return DecodedValue(cls, sign, e - fmt.bias, (1 << fmt.mant_bits) | m, fmt.mant_bits)


def round_half_even(sig: int, shift: int) -> int:
    """``sig / 2**shift`` rounded to nearest, ties to even (shift may be <= 0)."""
    if shift <= 0:
        return sig << -shift
    q, rem = sig >> shift, sig & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def encode(v: Exact, fmt: Format) -> int:
    """Encode an exact value with RN-even, FTZ and overflow saturation."""
    if fmt.is_int:
        return _encode_int(v, fmt)
    if v.is_nan:
        if not fmt.has_nan:
            raise ConfigurationError(f"{fmt.name} has no NaN encoding")
        return fmt.qnan()
    if v.is_inf:
        return _overflow(v.sign, fmt)
    if v.significand == 0:
        return v.sign << (fmt.width - 1)
    length = v.significand.bit_length()
    e = v.exponent + length - 1
    q = round_half_even(v.significand, length - fmt.sig_bits)
    if q >> fmt.sig_bits:
        q >>= 1
        e += 1
    if e > fmt.emax:
        return _overflow(v.sign, fmt)
    if e < fmt.emin:
        return v.sign << (fmt.width - 1)
    return (v.sign << (fmt.width - 1)) | ((e + fmt.bias) << fmt.mant_bits) | (q & ((1 << fmt.mant_bits) - 1))


def _overflow(sign: int, fmt: FloatFormat) -> int:
    if fmt.encodes_infinity:
        return fmt.inf(sign)
    if fmt.has_nan:
        return fmt.qnan()
    return fmt.max_finite(sign)


def _encode_int(v: Exact, fmt: IntFormat) -> int:
    if v.special:
        raise ConfigurationError(f"{fmt.name} cannot encode {v.special}")
    value = v.to_fraction()
    if value.denominator != 1:
        raise ConfigurationError(f"{fmt.name} cannot encode non-integer {value}")
    value = min(max(int(value), fmt.min_value), fmt.max_value)
    return value & ((1 << fmt.bits) - 1)


def to_fraction(bits: int, fmt: Format) -> Fraction:
    return decode(bits, fmt).to_fraction()


def to_float(bits: int, fmt: Format) -> float:
    return decode(bits, fmt).to_exact().to_float()


def from_float(x: float, fmt: Format) -> int:
    """Quantize a Python float into ``fmt`` (RN-even, FTZ, saturating)."""
    if fmt.is_int:
        return encode(Exact.from_fraction(Fraction(round(x))), fmt)
    return encode(Exact.from_float(float(x)), fmt)


def is_subnormal_pattern(bits, fmt: FloatFormat):
    """Vectorized test for subnormal encodings (exponent 0, mantissa != 0)."""
    bits = np.asarray(bits, dtype=np.int64)
    e = (bits >> fmt.mant_bits) & fmt.exp_field_max
    return (e == 0) & ((bits & ((1 << fmt.mant_bits) - 1)) != 0)


# -- vectorized field access (pipeline datapath) --------------------------------

def decode_array(bits, fmt: Format):
    """Vectorized DAZ decode.

    Returns ``(cls, sign, exponent, mantissa)`` int64 arrays with the same
    semantics as :func:`decode`; ``exponent`` is unbiased.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if fmt.is_int:
        top = (bits >> (fmt.bits - 1)) & 1
        value = bits - (top << fmt.bits)
        sign = (value < 0).astype(np.int64)
        mag = np.abs(value)
        cls = np.where(mag == 0, int(ValueClass.ZERO), int(ValueClass.NORMAL)).astype(np.int64)
        return cls, sign, np.zeros_like(bits), mag
    sign = (bits >> (fmt.width - 1)) & 1
    e = (bits >> fmt.mant_bits) & fmt.exp_field_max
    m = bits & ((1 << fmt.mant_bits) - 1)
    cls = np.full(bits.shape, int(ValueClass.NORMAL), dtype=np.int64)
    cls[e == 0] = int(ValueClass.ZERO)
    if fmt.all_ones_exp_is_special:
        special = e == fmt.exp_field_max
        if fmt.encodes_infinity:
            cls[special & (m == 0)] = int(ValueClass.INF)
            cls[special & (m != 0)] = int(ValueClass.NAN)
        else:
            cls[special] = int(ValueClass.NAN)
    normal = cls == int(ValueClass.NORMAL)
    mant = np.where(normal, (1 << fmt.mant_bits) | m, 0)
    exp = np.where(normal, e - fmt.bias, 0)
    return cls, sign, exp, mant


def pack_fields(sign, exponent, sig, fmt: FloatFormat):
    """Pack normalized fields (``sig`` carries the implicit one) into patterns."""
    sign = np.asarray(sign, dtype=np.int64)
    exponent = np.asarray(exponent, dtype=np.int64)
    sig = np.asarray(sig, dtype=np.int64)
    return (
        (sign << (fmt.width - 1))
        | ((exponent + fmt.bias) << fmt.mant_bits)
        | (sig & ((1 << fmt.mant_bits) - 1))
    )


def hex_pattern(bits: int, fmt: Format) -> str:
    return format(bits, f"0{fmt.hex_digits}x")
