"""Coupling programs for adiabatic and relay transfer.

Couplings are angular frequencies (rad/ns) and times are ns.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

from scipy.integrate import quad

ADIABATIC_THRESHOLD = 1.5 * math.pi


class AdiabaticityWarning(UserWarning):
    """Coupling area below the usual adiabatic-passage threshold."""


class Protocol(str, enum.Enum):
    ADIABATIC_TRANSFER = "adiabatic_transfer"
    ADIABATIC_HALF = "adiabatic_half"
    RELAY_TRANSFER = "relay_transfer"
    RELAY_HALF = "relay_half"

    @property
    def is_adiabatic(self) -> bool:
        return self in (Protocol.ADIABATIC_TRANSFER, Protocol.ADIABATIC_HALF)

    @property
    def is_half(self) -> bool:
        return self in (Protocol.ADIABATIC_HALF, Protocol.RELAY_HALF)


def adiabatic_couplings(gbar: float, t_f: float, t: float) -> tuple[float, float]:
    """``(gbar sin(pi t / 2 t_f), gbar cos(pi t / 2 t_f))`` for ``0 <= t <= t_f``."""
    if not 0.0 <= t <= t_f * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {t_f}]")
    phase = math.pi * t / (2.0 * t_f)
    return gbar * math.sin(phase), gbar * math.cos(phase)


def swap_time(g: float) -> float:
    """Full qubit-to-mode swap (half vacuum-Rabi period), ``pi / 2g``."""
    if g <= 0:
        raise ValueError("relay coupling must be positive")
    return math.pi / (2.0 * g)


def relay_couplings(g: float, t: float, half: bool = False, *, left: bool = False) -> tuple[float, float]:
    """Piecewise-constant relay program.

    Segment one couples Q1 for a full swap (``half=False``) or half a swap;
    segment two couples Q2 for a full swap.  Right-continuous at the segment
    boundary unless ``left`` is set.
    """
    tau = swap_time(g)
    first = tau / 2.0 if half else tau
    total = first + tau
    if not 0.0 <= t <= total * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {total}]")
    in_first = t <= first if left else t < first
    if t == 0.0:
        in_first = True
    return (g, 0.0) if in_first else (0.0, g)


@dataclass(frozen=True)
class Schedule:
    """Coupling program for one protocol.

    ``release`` (ns) applies to the adiabatic half protocol only: after
    ``t_f/2`` both couplings fall to zero at a fixed ratio with a ``cos^2``
    envelope, so the dark state stays put while the off-resonant modes
    give back their dressing photons before readout.  ``release=0`` stops
    abruptly at the midpoint.
    """

    protocol: Protocol
    gbar: float
    t_f: float
    relay_g: float = 0.0
    release: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.protocol.is_adiabatic:
            if self.gbar <= 0 or self.t_f <= 0:
                raise ValueError("adiabatic schedule needs positive gbar and t_f")
        elif self.relay_g <= 0:
            raise ValueError("relay schedule needs a positive relay coupling")
        if not self.release >= 0:
            raise ValueError("release time must be non-negative")
        if self.release and self.protocol is not Protocol.ADIABATIC_HALF:
            raise ValueError("a coupler release only applies to the adiabatic half protocol")

    @property
    def swap_time(self) -> float:
        return swap_time(self.relay_g)

    @property
    def duration(self) -> float:
        p = self.protocol
        if p is Protocol.ADIABATIC_TRANSFER:
            return self.t_f
        if p is Protocol.ADIABATIC_HALF:
            return self.t_f / 2.0 + self.release
        tau = self.swap_time
        return tau + (tau / 2.0 if p is Protocol.RELAY_HALF else tau)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior times where the couplings jump or kink."""
        if self.protocol.is_adiabatic:
            return (self.t_f / 2.0,) if self.release else ()
        tau = self.swap_time
        return (tau / 2.0 if self.protocol is Protocol.RELAY_HALF else tau,)

    def couplings(self, t: float, *, left: bool = False) -> tuple[float, float]:
        if self.protocol.is_adiabatic:
            if not 0.0 <= t <= self.duration * (1 + 1e-12):
                raise ValueError(f"t={t} outside [0, {self.duration}]")
            mid = self.t_f / 2.0
            if self.release and t > mid:
                g1, g2 = adiabatic_couplings(self.gbar, self.t_f, mid)
                s = min((t - mid) / self.release, 1.0)
                env = 0.5 * (1.0 + math.cos(math.pi * s))
                return g1 * env, g2 * env
            return adiabatic_couplings(self.gbar, self.t_f, min(t, self.t_f))
        return relay_couplings(self.relay_g, t, self.protocol is Protocol.RELAY_HALF, left=left)

    def max_g1(self) -> float:
        if self.protocol is Protocol.ADIABATIC_TRANSFER:
            return self.gbar
        if self.protocol is Protocol.ADIABATIC_HALF:
            return self.gbar / math.sqrt(2.0)
        return self.relay_g


def coupling_area(
    g1: Callable[[float], float], g2: Callable[[float], float], t0: float, t1: float
) -> float:
    """Numerical ``int sqrt(g1^2 + g2^2) dt`` over ``[t0, t1]``."""
    value, _ = quad(lambda t: math.hypot(g1(t), g2(t)), t0, t1, epsabs=0.0, epsrel=1e-12, limit=200)
    return value


def adiabaticity_integral(schedule: Schedule) -> float:
    """Area under the effective coupling over the schedule's duration.

    The sine/cosine program keeps ``sqrt(g1^2 + g2^2)`` fixed at ``gbar``,
    so the area is ``gbar`` times the program length; a release adds
    ``gbar * release / 2``.  Areas below ``3 pi / 2`` raise
    :class:`AdiabaticityWarning`.
    """
    if not schedule.protocol.is_adiabatic:
        raise ValueError(f"adiabaticity integral undefined for {schedule.protocol.value}")
    area = schedule.gbar * (schedule.duration - 0.5 * schedule.release)
    if area < ADIABATIC_THRESHOLD * (1 - 1e-12):
        warnings.warn(
            f"coupling area {area / math.pi:.3f} pi is below the 3 pi/2 adiabatic threshold",
            AdiabaticityWarning,
            stacklevel=2,
        )
    return area


def dark_state_return_times(gbar: float, n_max: int) -> list[float]:
    """Transfer times ``(2 pi / gbar) sqrt(n^2 - 1/16)`` for ``n = 1..n_max``."""
    if gbar <= 0 or n_max < 1:
        raise ValueError("need gbar > 0 and n_max >= 1")
    return [(2.0 * math.pi / gbar) * math.sqrt(n * n - 1.0 / 16.0) for n in range(1, n_max + 1)]
