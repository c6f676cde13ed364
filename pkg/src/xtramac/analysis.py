"""Analytic models: multiplier bit-utilization, compute density, adder cost.

Utilization counts the operand bits a DSP multiplier actually consumes per
cycle, ``sum(w_a + w_b) / (45 * dsps)``. Effective widths are the full
two's-complement width for integers and the significand (stored mantissa
plus the implicit one) for floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable

from .dsp48 import PRODUCT_WIDTH
from .formats import ConfigurationError, Format, MacDatatype, parse_datatype
from .packing import plan

XTRAMAC = "xtramac"
UPCAST = "upcast"
SPATIAL = "spatial"
TEMPORAL = "temporal"
ARCHITECTURES = (XTRAMAC, UPCAST, SPATIAL, TEMPORAL)
_ARCH_ALIASES = {"spatialreplication": SPATIAL, "temporalsharing": TEMPORAL, "vendor": UPCAST}

# temporal sharing runs on INT8 processing elements: two INT8 lanes per DSP,
# and one BF16-class operation spread over four of them
TEMPORAL_INT_LANES = 2
TEMPORAL_FP_DSPS = 4
# integer lanes a vendor-style dedicated integer MAC packs per DSP
SPATIAL_INT_LANES = 2

RESOURCES = ("lut", "ff", "dsp")


def effective_width(fmt: Format) -> int:
    return fmt.bits if fmt.is_int else fmt.sig_bits


def canonical_arch(arch: str) -> str:
    key = arch.lower().replace("_", "").replace("-", "")
    key = _ARCH_ALIASES.get(key, key)
    if key not in ARCHITECTURES:
        raise ConfigurationError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    return key


def utilization(dt: MacDatatype | str, lanes: int, dsp_count: float) -> float:
    """``lanes * (w_a + w_b) / (45 * dsp_count)`` with effective operand widths."""
    dt = parse_datatype(dt)
    if dsp_count <= 0 or lanes < 0:
        raise ConfigurationError("dsp_count must be positive and lanes non-negative")
    bits = lanes * (effective_width(dt.type_a) + effective_width(dt.type_b))
    return bits / (PRODUCT_WIDTH * dsp_count)


@dataclass(frozen=True)
class UtilizationReport:
    arch: str
    datatype: str
    width_a: int
    width_b: int
    lanes: int
    dsp_count: float
    utilization: float

    @property
    def percent(self) -> float:
        return 100.0 * self.utilization

    def to_dict(self) -> dict:
        return {"arch": self.arch, "datatype": self.datatype, "width_a": self.width_a,
                "width_b": self.width_b, "lanes": self.lanes, "dsp_count": self.dsp_count,
                "utilization": self.utilization, "percent": round(self.percent, 2)}


def _report(arch, dt, lanes, dsps) -> UtilizationReport:
    return UtilizationReport(arch, dt.name, effective_width(dt.type_a), effective_width(dt.type_b),
                             lanes, dsps, utilization(dt, lanes, dsps))


def _promoted_dsps(fmt: Format) -> int:
    """DSPs a single multiplier of the promoted format needs (27x18 tiles)."""
    w = effective_width(fmt)
    return math.ceil(w / 27) * math.ceil(w / 18) if w > 18 else 1


def xtramac_report(dt, guard: int = 1, max_lanes: int | None = None) -> UtilizationReport:
    dt = parse_datatype(dt)
    p = plan(dt, guard) if max_lanes is None else plan(dt, guard, max_lanes)
    return _report(XTRAMAC, dt, p.lanes, 1)


def upcast_report(dt) -> UtilizationReport:
    """Both operands promoted to the accumulator format; one lane on its multiplier footprint."""
    dt = parse_datatype(dt)
    return _report(UPCAST, dt, 1, _promoted_dsps(dt.type_p))


def temporal_report(dt) -> UtilizationReport:
    dt = parse_datatype(dt)
    if dt.is_int:
        return _report(TEMPORAL, dt, TEMPORAL_INT_LANES, 1)
    return _report(TEMPORAL, dt, 1, TEMPORAL_FP_DSPS)


def _spatial_lanes(dt: MacDatatype) -> tuple[int, int]:
    if dt.is_int:
        return SPATIAL_INT_LANES, 1
    return 1, _promoted_dsps(dt.type_p)


def spatial_reports(datatypes: Iterable) -> list[UtilizationReport]:
    """One replicated datapath per datatype; the idle ones still count in the denominator."""
    dts = [parse_datatype(d) for d in datatypes]
    if not dts:
        raise ConfigurationError("spatial replication needs at least one datatype")
    total = sum(_spatial_lanes(d)[1] for d in dts)
    return [_report(SPATIAL, d, _spatial_lanes(d)[0], total) for d in dts]


def spatial_average(datatypes: Iterable) -> float:
    reports = spatial_reports(datatypes)
    return sum(r.utilization for r in reports) / len(reports)


def report(arch: str, dt, *, companions: Iterable = ()) -> UtilizationReport:
    """Utilization of ``dt`` under ``arch``; ``companions`` are the other replicated datatypes."""
    arch = canonical_arch(arch)
    dt = parse_datatype(dt)
    if arch == XTRAMAC:
        return xtramac_report(dt)
    if arch == UPCAST:
        return upcast_report(dt)
    if arch == TEMPORAL:
        return temporal_report(dt)
    others = [parse_datatype(c) for c in companions if parse_datatype(c) != dt]
    return spatial_reports([dt, *others])[0]


# -- compute density ---------------------------------------------------------------

@dataclass(frozen=True)
class ResourceProfile:
    """Per-operation resources: totals divided by the number of MAC lanes."""

    lut: float
    ff: float
    dsp: float

    def as_dict(self) -> dict[str, float]:
        return {"lut": self.lut, "ff": self.ff, "dsp": self.dsp}


def round1(x: float) -> float:
    """Round half away from zero to one decimal, as tables print it."""
    return float(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def compute_density(baseline: ResourceProfile, xtramac: ResourceProfile) -> dict[str, float]:
    """Baseline over XtraMAC usage per resource class (higher favours XtraMAC)."""
    out = {}
    for key in RESOURCES:
        den = getattr(xtramac, key)
        if den == 0:
            raise ZeroDivisionError(f"XtraMAC {key} usage is zero; density undefined")
        out[key] = getattr(baseline, key) / den
    return out


def reduction(baseline: ResourceProfile, xtramac: ResourceProfile) -> dict[str, float]:
    """Fractional per-resource savings, ``1 - xtramac / baseline``."""
    return {k: 1.0 - getattr(xtramac, k) / getattr(baseline, k) for k in RESOURCES}


# Per-lane resources of the vendor floating-point operator and XtraMAC for
# the mixed-precision configurations, and the printed density column.
DENSITY_TABLE = {
    "int2-8xbf16": (ResourceProfile(331, 222, 1), ResourceProfile(235, 124, 0.5), (1.4, 1.8, 2.0)),
    "int2-8xfp16": (ResourceProfile(387, 262, 1), ResourceProfile(270, 137, 0.5), (1.4, 1.9, 2.0)),
    "fp4xbf16": (ResourceProfile(301, 226, 1), ResourceProfile(196, 115, 0.5), (1.5, 2.0, 2.0)),
    "fp4xfp16": (ResourceProfile(357, 266, 1), ResourceProfile(251, 131, 0.5), (1.4, 2.0, 2.0)),
    "fp8xbf16": (ResourceProfile(301, 226, 1), ResourceProfile(219, 123, 0.5), (1.4, 1.8, 2.0)),
    "fp8xfp16": (ResourceProfile(357, 266, 1), ResourceProfile(253, 133, 0.5), (1.4, 2.0, 2.0)),
}

# Per-operation resources under INT8/BF16 runtime switching.
SWITCHING_TABLE = {
    "vendor": {"bf16": ResourceProfile(220.0, 310.5, 1), "int8": ResourceProfile(110.0, 155.3, 0.5)},
    "tataa": {"bf16": ResourceProfile(352.0, 467.0, 4), "int8": ResourceProfile(22.0, 29.2, 0.25)},
    "xtramac": {"bf16": ResourceProfile(142.0, 128.3, 0.25), "int8": ResourceProfile(142.0, 128.3, 0.25)},
}


def density_row(key: str) -> dict:
    """Computed densities for one configuration next to the printed ones."""
    base, xm, printed = DENSITY_TABLE[key]
    dens = compute_density(base, xm)
    return {"config": key, "density": dens, "rounded": {k: round1(v) for k, v in dens.items()},
            "printed": dict(zip(RESOURCES, printed)), "reduction": reduction(base, xm)}


def density_profile_key(dt: MacDatatype | str) -> str:
    """Row of :data:`DENSITY_TABLE` describing a datatype (integer widths share a row)."""
    dt = parse_datatype(dt)
    a = "int2-8" if dt.type_a.is_int else dt.type_a.name
    key = f"{a}x{dt.type_b.name}"
    if key not in DENSITY_TABLE:
        raise ConfigurationError(f"no resource profile for {dt.name}")
    return key


# -- adder cost --------------------------------------------------------------------

INT_ADDER = "int"
FP_SHIFTER = "fp_shifter"


def adder_cost(kind: str, width: int, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Cost units: ``alpha*w`` for an integer adder, ``beta*w*log2(w)`` for an alignment shifter."""
    if width < 2:
        raise ConfigurationError("width must be >= 2")
    if alpha <= 0 or beta <= 0:
        raise ConfigurationError("cost coefficients must be positive")
    if kind == INT_ADDER:
        return alpha * width
    if kind == FP_SHIFTER:
        return beta * width * math.log2(width)
    raise ConfigurationError(f"unknown adder kind {kind!r}; expected {INT_ADDER!r} or {FP_SHIFTER!r}")
