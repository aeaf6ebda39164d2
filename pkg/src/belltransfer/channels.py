"""Imperfect Bell channels parametrized by their departure angle."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateChannel
from .statevec import StateVector

DEGENERATE_ATOL = 1e-15
QUARTER_PI = math.pi / 4


class Parity(enum.Enum):
    CORRELATED = "correlated"  # a|00> + s b|11>
    ANTICORRELATED = "anticorrelated"  # a|01> + s b|10>


@dataclass(frozen=True)
class ChannelSpec:
    parity: Parity = Parity.CORRELATED
    departure: float = 0.0
    second_term_sign: int = 1
    name: str = ""

    def __post_init__(self):
        if self.second_term_sign not in (1, -1):
            raise ValueError(f"second_term_sign must be +1 or -1, got {self.second_term_sign}")
        if not math.isfinite(self.departure):
            raise ValueError("departure must be finite")
        object.__setattr__(self, "departure", float(self.departure))

    @property
    def a(self) -> float:
        return math.sin(QUARTER_PI + self.departure)

    @property
    def b(self) -> float:
        return math.cos(QUARTER_PI + self.departure)

    @property
    def signed_b(self) -> float:
        return self.second_term_sign * self.b

    @property
    def degenerate(self) -> bool:
        # |departure| >= pi/4 reaches (or wraps past) the product state
        return (
            abs(self.a) <= DEGENERATE_ATOL
            or abs(self.b) <= DEGENERATE_ATOL
            or abs(self.departure) >= QUARTER_PI
        )

    def coefficient(self, sender_bit: int) -> float:
        """Amplitude of the term whose first (sender) qubit equals ``sender_bit``."""
        return self.a if sender_bit == 0 else self.signed_b

    def receiver_bit(self, sender_bit: int) -> int:
        return sender_bit ^ (self.parity is Parity.ANTICORRELATED)

    def kets(self) -> tuple[str, str]:
        """Two-qubit labels of the ``a`` term and the ``b`` term."""
        return tuple(f"{s}{self.receiver_bit(s)}" for s in (0, 1))

    def with_departure(self, departure: float) -> ChannelSpec:
        return ChannelSpec(self.parity, departure, self.second_term_sign, self.name)

    def require_nondegenerate(self) -> None:
        if self.degenerate:
            label = self.name or self.parity.value
            raise DegenerateChannel(
                f"channel {label} is degenerate at departure {self.departure!r} "
                f"(a={self.a:.3g}, b={self.b:.3g})"
            )


def channel_template(k: int) -> list[ChannelSpec]:
    """Default channel layout: A correlated, B anticorrelated, C correlated with a minus sign.

    Beyond three channels the correlated/anticorrelated pattern repeats with ``+`` signs.
    """
    base = [
        ChannelSpec(Parity.CORRELATED, 0.0, 1, "A"),
        ChannelSpec(Parity.ANTICORRELATED, 0.0, 1, "B"),
        ChannelSpec(Parity.CORRELATED, 0.0, -1, "C"),
    ]
    if k < 1:
        raise ValueError("need at least one channel")
    out = base[:k]
    for i in range(3, k):
        parity = Parity.CORRELATED if i % 2 == 0 else Parity.ANTICORRELATED
        out.append(ChannelSpec(parity, 0.0, 1, chr(ord("A") + i)))
    return out


def channels_for(deltas: Sequence[float]) -> list[ChannelSpec]:
    return [c.with_departure(d) for c, d in zip(channel_template(len(deltas)), deltas)]


def make_channel(spec: ChannelSpec) -> StateVector:
    ket_a, ket_b = spec.kets()
    return StateVector.from_terms(2, {ket_a: spec.a, ket_b: spec.signed_b})


@dataclass(frozen=True, eq=False)
class CoefficientProducts:
    """Signed products ``m_1 .. m_(2**k)``, channel 0 choosing the most significant bit."""

    values: np.ndarray
    least_index: int
    least_value: float
    factors: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return self.values.size.bit_length() - 1


def coefficient_products(channels: Sequence[ChannelSpec]) -> CoefficientProducts:
    if not channels:
        raise ValueError("need at least one channel")
    for ch in channels:
        ch.require_nondegenerate()
    values, factors = [], []
    names = [ch.name or str(i) for i, ch in enumerate(channels)]
    for bits in itertools.product((0, 1), repeat=len(channels)):
        values.append(math.prod(ch.coefficient(b) for ch, b in zip(channels, bits)))
        factors.append(" ".join(("a" if b == 0 else "b") + n for b, n in zip(bits, names)))
    values = np.array(values)
    values.setflags(write=False)
    # argmin returns the first minimum, which is the tie-break rule
    least = int(np.argmin(np.abs(values)))
    return CoefficientProducts(values, least, float(values[least]), tuple(factors))


def analytic_success_probability(channels: Sequence[ChannelSpec]) -> float:
    """``2**k * min_i |m_i|**2``."""
    m = coefficient_products(channels)
    return float(2 ** len(channels) * m.least_value**2)
