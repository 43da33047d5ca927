"""Lumped-element channel model and the parasitic loading of Q1.

Units: inductance nH, capacitance nF, resistance ohm, time ns and angular
frequency rad/ns.  With these, ``omega*L`` and ``1/(omega*C)`` come out in
ohm and ``L/R`` in ns.

Loading network, seen from Q1 (series ``C_q - L_q`` branch)::

    node A --+-- L_T --+-- L_s --+-- R_L,eff --- gnd
             |         |         |
            L_g       L_g        +-- L_r -- C_r --- gnd
             |         |
            gnd       gnd
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .model import DeviceParams, mhz

NEPER_PER_DB = 1.0 / 8.6859  # ln(10)/20

# Calibration bracket for the bridge inductance, in units of L_g.  The
# mutual inductance diverges at L_T = -2 L_g.
_LT_BRACKET = (-1.9, 500.0)


@dataclass(frozen=True)
class ChannelModel:
    z0_ohm: float
    alpha_db_per_m: float
    inductance_nh_per_m: float
    length_m: float
    fsr: float  # rad/ns

    def __post_init__(self) -> None:
        for name in ("z0_ohm", "alpha_db_per_m", "inductance_nh_per_m", "length_m", "fsr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_device(cls, device: DeviceParams) -> ChannelModel:
        ch = device.channel
        return cls(ch.z0_ohm, ch.alpha_db_per_m, ch.inductance_nh_per_m, ch.length_m, ch.fsr)

    @property
    def alpha_np_per_m(self) -> float:
        return self.alpha_db_per_m * NEPER_PER_DB


@dataclass(frozen=True)
class ModeRLC:
    r_ohm: float
    l_nh: float
    c_nf: float
    omega: float  # rad/ns

    @property
    def lifetime_ns(self) -> float:
        """Energy lifetime ``L/R`` of the series resonator."""
        return self.l_nh / self.r_ohm


def mode_rlc(channel: ChannelModel, n: int) -> ModeRLC:
    """Series RLC equivalent of standing mode ``n`` (``omega_n = n * fsr``)."""
    if n < 1:
        raise ValueError("mode index must be >= 1")
    return mode_rlc_at(channel, n * channel.fsr)


def mode_rlc_at(channel: ChannelModel, omega: float) -> ModeRLC:
    """As :func:`mode_rlc` for an explicit resonance frequency (rad/ns)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    r = channel.z0_ohm * channel.alpha_np_per_m * channel.length_m
    l = 0.5 * channel.inductance_nh_per_m * channel.length_m
    return ModeRLC(r, l, 1.0 / (omega**2 * l), omega)


def effective_load(t1r_ns: float, t1r_int_ns: float, l_r_nh: float) -> tuple[float, float]:
    """``(T1r_ext, R_L,eff)`` with ``1/T1r_ext = 1/T1r - 1/T1r_int`` and ``R = L_r/T1r_ext``."""
    if t1r_ns <= 0 or t1r_int_ns <= 0 or l_r_nh <= 0:
        raise ValueError("lifetimes and inductance must be positive")
    if t1r_ns > t1r_int_ns * (1 + 1e-12):
        raise ValueError(
            f"T1r = {t1r_ns} ns exceeds the intrinsic {t1r_int_ns} ns: negative external loss"
        )
    ext_rate = 1.0 / t1r_ns - 1.0 / t1r_int_ns
    if ext_rate <= 0:
        return math.inf, 0.0
    return 1.0 / ext_rate, l_r_nh * ext_rate


def _par(a: float, b: float) -> float:
    return a * b / (a + b)


def coupler_splitting(l_t: float, l_g: float, l_s: float, l_r: float, c_r: float, c_q: float) -> float:
    """Vacuum-Rabi splitting ``2g`` (rad/ns) of the lossless two-loop circuit.

    The bridge acts as a mutual inductance ``M = L_g^2 / (2 L_g + L_T)``
    between the qubit loop and the mode loop ``L_r + L_s + L_g||(L_T + L_g)``.
    The qubit loop is taken resonant with the mode loop.
    """
    l11 = _par(l_g, l_t + l_g)
    m = l_g * l_g / (2.0 * l_g + l_t)
    l2 = l_r + l_s + l11
    w0 = 1.0 / math.sqrt(l2 * c_r)
    l1 = 1.0 / (w0**2 * c_q)
    k = m / math.sqrt(l1 * l2)
    if not 0 <= k < 1:
        return math.nan
    return w0 * ((1.0 - k) ** -0.5 - (1.0 + k) ** -0.5)


@lru_cache(maxsize=4096)
def calibrate_coupler(g: float, l_g: float, l_s: float, l_r: float, c_r: float, c_q: float) -> float:
    """Bridge inductance ``L_T`` (nH) that yields coupling ``g`` (rad/ns)."""
    if g <= 0:
        raise ValueError("coupling must be positive")
    lo, hi = (b * l_g for b in _LT_BRACKET)
    f = lambda lt: coupler_splitting(lt, l_g, l_s, l_r, c_r, c_q) - 2.0 * g
    f_lo, f_hi = f(lo), f(hi)
    if not (f_lo > 0 > f_hi):  # NaN fails too
        raise ValueError(f"coupling {g:.4g} rad/ns outside the bridge's calibrated range")
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-13)


@dataclass(frozen=True)
class LoadingNetwork:
    """Element values of the Q1 loading circuit (bridge setting supplied per query)."""

    c_q_nf: float
    l_q_nh: float
    l_g_nh: float
    l_s_nh: float
    l_r_nh: float
    c_r_nf: float
    r_load_ohm: float

    def __post_init__(self) -> None:
        for name in ("c_q_nf", "l_q_nh", "l_g_nh", "l_s_nh", "l_r_nh", "c_r_nf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r_load_ohm < 0:
            raise ValueError("load resistance must be non-negative")

    @classmethod
    def for_device(cls, device: DeviceParams, t1r_ns: float | None = None) -> LoadingNetwork:
        """Network for ``device`` with the switch set to give mode lifetime ``t1r_ns``.

        ``None`` means the switch is off (no external load).
        """
        ch = device.channel
        rlc = mode_rlc_at(ChannelModel.from_device(device), mhz(ch.mode_freq_ghz * 1e3))
        r = 0.0 if t1r_ns is None else effective_load(t1r_ns, ch.t1r_int_ns, rlc.l_nh)[1]
        return cls(
            c_q_nf=device.q1.c_q_ff * 1e-6,
            l_q_nh=device.q1.l_q_nh,
            l_g_nh=device.coupler.l_g_nh,
            l_s_nh=ch.stub_inductance_nh,
            l_r_nh=rlc.l_nh,
            c_r_nf=rlc.c_nf,
            r_load_ohm=r,
        )

    @property
    def omega_r(self) -> float:
        return 1.0 / math.sqrt(self.l_r_nh * self.c_r_nf)

    def bridge_inductance(self, g1: float) -> float:
        return calibrate_coupler(
            abs(g1), self.l_g_nh, self.l_s_nh, self.l_r_nh, self.c_r_nf, self.c_q_nf
        )

    def load_impedance(self, detuning: float, *, exact: bool = False) -> complex:
        """``R_L,eff || (L_r - C_r)`` at ``omega_r + detuning``.

        The narrowband form uses the odd reactance ``2 L_r detuning``.
        """
        if exact:
            w = self.omega_r + detuning
            x = w * self.l_r_nh - 1.0 / (w * self.c_r_nf)
        else:
            x = 2.0 * self.l_r_nh * detuning
        if self.r_load_ohm == 0.0 or x == 0.0:
            return 0j
        z = 1j * x
        return self.r_load_ohm * z / (self.r_load_ohm + z)

    def input_impedance(self, detuning: float, g1: float, *, exact: bool = False) -> complex:
        """Impedance ``Z(detuning)`` presented to the qubit branch at node A.

        Default (narrowband, weak load): the lossless bridge is an inductive
        current divider, so ``Re Z = (r1 r2)^2 Re Z_load`` with
        ``r1 = L_g/(L_g + L_s)`` and ``r2 = L_g/(L_g + L_T + L_g||L_s)``.  This
        is exactly even in the detuning.  ``exact=True`` evaluates the full
        network at ``omega_r + detuning``.
        """
        lt, lg, ls = self.bridge_inductance(g1), self.l_g_nh, self.l_s_nh
        zl = self.load_impedance(detuning, exact=exact)
        if not exact:
            r1 = lg / (lg + ls)
            r2 = lg / (lg + lt + _par(lg, ls))
            return (r1 * r2) ** 2 * zl.real + 0j
        jw = 1j * (self.omega_r + detuning)
        z1 = jw * ls + zl
        z2 = _par(jw * lg, z1)
        z3 = jw * lt + z2
        return _par(jw * lg, z3)

    def with_load(self, r_load_ohm: float) -> LoadingNetwork:
        return replace(self, r_load_ohm=r_load_ohm)


def loaded_q1_t1(network: LoadingNetwork, detuning: float, g1: float, *, exact: bool = False) -> float:
    """Q1 lifetime (ns) limited by the switch load: ``T1 = L_q / Re Z``.

    Returns ``inf`` when the network has no dissipation (``R = 0``), when
    ``g1 = 0`` or when the mode branch shorts the load (zero detuning).
    """
    if network.r_load_ohm == 0.0 or g1 == 0.0:
        return math.inf
    re = network.input_impedance(detuning, g1, exact=exact).real
    if re < -1e-15:
        raise ValueError(f"non-physical network: Re Z = {re:.3e} ohm")
    return math.inf if re <= 0 else network.l_q_nh / re


@dataclass(frozen=True)
class T1Table:
    """Tabulated ``T1(g1, detuning)`` for the integrator.

    Grids are in rad/ns, values in ns.  Interpolation is bilinear in the
    decay *rate* ``1/T1`` (which stays finite where ``T1`` is infinite), uses
    ``|detuning|`` and ``|g1|``, and clamps outside the grid.
    """

    g1_grid: np.ndarray
    detuning_grid: np.ndarray
    t1_ns: np.ndarray  # shape (len(g1_grid), len(detuning_grid))
    _rates: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        g = np.asarray(self.g1_grid, dtype=float)
        d = np.asarray(self.detuning_grid, dtype=float)
        t = np.asarray(self.t1_ns, dtype=float)
        if g.size == 0 or d.size == 0:
            raise ValueError("grids must be non-empty")
        if t.shape != (g.size, d.size):
            raise ValueError(f"table shape {t.shape} does not match grids ({g.size}, {d.size})")
        if np.any(np.diff(g) <= 0) or np.any(np.diff(d) <= 0):
            raise ValueError("grids must be strictly increasing")
        if np.any(~(t > 0)):
            raise ValueError("T1 values must be positive (inf allowed)")
        for name, val in (("g1_grid", g), ("detuning_grid", d), ("t1_ns", t)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_rates", 1.0 / t)

    @classmethod
    def build(
        cls, network: LoadingNetwork, g1_grid, detuning_grid, *, exact: bool = False
    ) -> T1Table:
        g1_grid = np.asarray(g1_grid, dtype=float)
        detuning_grid = np.asarray(detuning_grid, dtype=float)
        t1 = np.array(
            [[loaded_q1_t1(network, d, g, exact=exact) for d in detuning_grid] for g in g1_grid]
        )
        return cls(g1_grid, detuning_grid, t1)

    @staticmethod
    def _locate(grid: np.ndarray, x: float) -> tuple[int, float]:
        if grid.size == 1 or x <= grid[0]:
            return 0, 0.0
        if x >= grid[-1]:
            return grid.size - 2, 1.0
        i = int(np.searchsorted(grid, x, side="right") - 1)
        return i, (x - grid[i]) / (grid[i + 1] - grid[i])

    def rate(self, g1: float, detuning: float) -> float:
        """Interpolated loading rate (1/ns)."""
        r = self._rates
        i, u = self._locate(self.g1_grid, abs(g1))
        j, v = self._locate(self.detuning_grid, abs(detuning))
        i1 = min(i + 1, r.shape[0] - 1)
        j1 = min(j + 1, r.shape[1] - 1)
        # Skip zero-weight corners so exact node hits return the node value.
        total = 0.0
        for ii, wi in ((i, 1.0 - u), (i1, u)):
            for jj, wj in ((j, 1.0 - v), (j1, v)):
                w = wi * wj
                if w:
                    total += w * r[ii, jj]
        return float(total)

    def __call__(self, g1: float, detuning: float) -> float:
        rate = self.rate(g1, detuning)
        return math.inf if rate == 0 else 1.0 / rate

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["g1_mhz", "detuning_mhz", "t1_ns"])
        to_mhz = lambda w: w / (2 * math.pi) * 1e3
        for a, g in enumerate(self.g1_grid):
            for b, d in enumerate(self.detuning_grid):
                writer.writerow([repr(float(to_mhz(g))), repr(float(to_mhz(d))), repr(float(self.t1_ns[a, b]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> T1Table:
        text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) or (
            isinstance(source, str) and "\n" not in source
        ) else source
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"g1_mhz", "detuning_mhz", "t1_ns"}:
            raise ValueError("expected columns g1_mhz, detuning_mhz, t1_ns")
        g = sorted({float(r["g1_mhz"]) for r in rows})
        d = sorted({float(r["detuning_mhz"]) for r in rows})
        if len(rows) != len(g) * len(d):
            raise ValueError("table is not a full grid")
        t1 = np.empty((len(g), len(d)))
        gi = {v: i for i, v in enumerate(g)}
        di = {v: i for i, v in enumerate(d)}
        for r in rows:
            t1[gi[float(r["g1_mhz"])], di[float(r["detuning_mhz"])]] = float(r["t1_ns"])
        return cls(np.array([mhz(x) for x in g]), np.array([mhz(x) for x in d]), t1)


@dataclass(frozen=True)
class LoadingRate:
    """Picklable ``g1 -> extra Q1 decay rate`` at a fixed detuning."""

    table: T1Table
    detuning: float

    def __call__(self, g1: float) -> float:
        return self.table.rate(g1, self.detuning)


def spurious_loading(
    device: DeviceParams,
    t1r_ns: float,
    *,
    detuning: float,
    g1_max: float,
    points: int = 121,
    exact: bool = False,
) -> LoadingRate:
    """Extra Q1 decay rate versus ``|g1|`` for the switch set to ``t1r_ns``."""
    network = LoadingNetwork.for_device(device, t1r_ns)
    grid = np.linspace(0.0, g1_max, points)
    return LoadingRate(T1Table.build(network, grid, [abs(detuning)], exact=exact), abs(detuning))
