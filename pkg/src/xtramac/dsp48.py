"""DSP48E2 multiplier: an unsigned 27 x 18 bit combinational multiply."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A_WIDTH = 27
B_WIDTH = 18
PRODUCT_WIDTH = A_WIDTH + B_WIDTH


class PortOverflowError(ValueError):
    pass


@dataclass(frozen=True)
class DspPorts:
    a: int
    b: int

    def __post_init__(self):
        if not 0 <= self.a < (1 << A_WIDTH):
            raise PortOverflowError(f"A port value {self.a:#x} exceeds {A_WIDTH} bits")
        if not 0 <= self.b < (1 << B_WIDTH):
            raise PortOverflowError(f"B port value {self.b:#x} exceeds {B_WIDTH} bits")


def wide_mul(p: DspPorts) -> int:
    return p.a * p.b


def wide_mul_array(a, b) -> np.ndarray:
    """Vectorized multiply; ports are checked, the product fits int64."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size and (a.min() < 0 or a.max() >> A_WIDTH):
        raise PortOverflowError(f"A port exceeds {A_WIDTH} bits")
    if b.size and (b.min() < 0 or b.max() >> B_WIDTH):
        raise PortOverflowError(f"B port exceeds {B_WIDTH} bits")
    return a * b
