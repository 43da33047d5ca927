"""Device parameters, Hamiltonians and the dark/bright eigenstructure.

Internal unit system: time in ns, angular frequency in rad/ns.  Parameter
files quote cycle frequencies (MHz or GHz "per 2 pi"); use :func:`mhz` to
convert.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .statespace import LOWERING, NUMBER, RAISING, SpaceLayout, embed, embed_product

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TWO_PI = 2.0 * math.pi


def mhz(value: float) -> float:
    """Cycle frequency in MHz -> angular frequency in rad/ns."""
    return TWO_PI * value * 1e-3


def to_mhz(omega: float) -> float:
    """Angular frequency in rad/ns -> cycle frequency in MHz."""
    return omega / TWO_PI * 1e3


@dataclass(frozen=True)
class QubitParams:
    max_freq_ghz: float
    idle_freq_ghz: float
    c_q_ff: float
    l_q_nh: float
    anharmonicity_mhz: float
    t1_int_us: float
    t2_ramsey_us: float
    t2_echo_us: float
    readout_fg: float
    readout_fe: float

    def __post_init__(self) -> None:
        for name in ("c_q_ff", "l_q_nh", "t1_int_us", "t2_ramsey_us", "t2_echo_us"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("readout_fg", "readout_fe"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")

    @property
    def t1_ns(self) -> float:
        return self.t1_int_us * 1e3

    @property
    def t2_ramsey_ns(self) -> float:
        return self.t2_ramsey_us * 1e3

    @property
    def t2_echo_ns(self) -> float:
        return self.t2_echo_us * 1e3


@dataclass(frozen=True)
class CouplerParams:
    l_t_nh: float
    l_g_nh: float

    def __post_init__(self) -> None:
        if not (self.l_t_nh > 0 and self.l_g_nh > 0):
            raise ValueError("coupler inductances must be positive")


@dataclass(frozen=True)
class ChannelParams:
    z0_ohm: float
    alpha_db_per_m: float
    inductance_nh_per_m: float
    length_m: float
    fsr_mhz: float
    mode_freq_ghz: float
    t1r_int_ns: float
    switch_distance_mm: float

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")

    @property
    def fsr(self) -> float:
        """Free spectral range in rad/ns."""
        return mhz(self.fsr_mhz)

    @property
    def stub_inductance_nh(self) -> float:
        """Line inductance between the Q1 coupler and the loss switch."""
        return self.switch_distance_mm * 1e-3 * self.inductance_nh_per_m


@dataclass(frozen=True)
class DeviceParams:
    q1: QubitParams
    q2: QubitParams
    coupler: CouplerParams
    channel: ChannelParams

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> DeviceParams:
        try:
            qubits = data["qubit"]
            return cls(
                q1=QubitParams(**qubits["q1"]),
                q2=QubitParams(**qubits["q2"]),
                coupler=CouplerParams(**data["coupler"]),
                channel=ChannelParams(**data["channel"]),
            )
        except KeyError as exc:
            raise ValueError(f"device file is missing section or key {exc}") from None
        except TypeError as exc:
            raise ValueError(f"device file has unexpected or missing keys: {exc}") from None

    @classmethod
    def from_toml(cls, path: str | Path) -> DeviceParams:
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))

    @classmethod
    def default(cls) -> DeviceParams:
        text = resources.files("darklink.data").joinpath("device.toml").read_text(encoding="utf-8")
        return cls.from_mapping(tomllib.loads(text))


@dataclass(frozen=True)
class HamiltonianModel:
    """Multi-mode Jaynes-Cummings Hamiltonian in the frame of the central mode.

    ``H(t) = dw1 n_Q1 + dw2 n_Q2 + sum_n n*fsr a_n^dag a_n
             + g1(t) sum_n (s1 a_n^dag + h.c.) + g2(t) sum_n (-1)^n (s2 a_n^dag + h.c.)``

    ``schedule`` is any object with ``duration`` and ``couplings(t, left=False)``.
    """

    layout: SpaceLayout
    schedule: Any
    fsr: float
    detuning_q1: float = 0.0
    detuning_q2: float = 0.0
    _terms: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lay = self.layout
        drift = self.detuning_q1 * embed(NUMBER, lay.q1, lay) + self.detuning_q2 * embed(NUMBER, lay.q2, lay)
        v1 = np.zeros((lay.dim, lay.dim), dtype=complex)
        v2 = np.zeros_like(v1)
        for n in lay.mode_numbers:
            k = lay.mode(n)
            drift = drift + n * self.fsr * embed(NUMBER, k, lay)
            hop1 = embed_product([(lay.q1, LOWERING), (k, RAISING)], lay)
            hop2 = embed_product([(lay.q2, LOWERING), (k, RAISING)], lay)
            v1 += hop1 + hop1.conj().T
            v2 += (-1) ** abs(n) * (hop2 + hop2.conj().T)
        object.__setattr__(self, "_terms", {"drift": drift, "q1": v1, "q2": v2})

    @property
    def drift(self) -> np.ndarray:
        return self._terms["drift"]

    @property
    def coupling_q1(self) -> np.ndarray:
        return self._terms["q1"]

    @property
    def coupling_q2(self) -> np.ndarray:
        return self._terms["q2"]

    @property
    def mode_detunings(self) -> np.ndarray:
        return np.array([n * self.fsr for n in self.layout.mode_numbers])

    def hamiltonian(self, t: float, *, left: bool = False) -> np.ndarray:
        if not -1e-9 <= t <= self.schedule.duration + 1e-9:
            raise ValueError(f"t={t} outside schedule [0, {self.schedule.duration}]")
        g1, g2 = self.schedule.couplings(t, left=left)
        return self.drift + g1 * self.coupling_q1 + g2 * self.coupling_q2

    def excitation_number(self) -> np.ndarray:
        lay = self.layout
        return sum(embed(NUMBER, k, lay) for k in range(lay.n_subsystems))


def build_hamiltonian(model: HamiltonianModel, t: float) -> np.ndarray:
    return model.hamiltonian(t)


# Basis of the three-state problem: |e0g>, |g1g>, |g0e>.
E0G, G1G, G0E = 0, 1, 2


def single_excitation_hamiltonian(g1: float, g2: float) -> np.ndarray:
    return np.array([[0.0, g1, 0.0], [g1, 0.0, g2], [0.0, g2, 0.0]])


def mixing_angle(g1: float, g2: float) -> float:
    """``theta`` with ``tan(theta) = g1/g2``; couplings are taken non-negative."""
    if g1 < 0 or g2 < 0:
        raise ValueError("couplings must be non-negative")
    return math.atan2(g1, g2)


def dark_state(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), 0.0, -math.sin(theta)], dtype=complex)


def bright_states(theta: float) -> tuple[np.ndarray, np.ndarray]:
    """``(B+, B-)`` with energies ``+gbar`` and ``-gbar``."""
    s, c = math.sin(theta), math.cos(theta)
    plus = np.array([s, 1.0, c], dtype=complex) / math.sqrt(2)
    minus = np.array([s, -1.0, c], dtype=complex) / math.sqrt(2)
    return plus, minus


@dataclass(frozen=True)
class EigenStructure:
    energies: np.ndarray       # ascending: -gbar, 0, +gbar
    states: np.ndarray         # columns match ``energies``
    mixing_angle: float

    @property
    def gbar(self) -> float:
        return float(self.energies[-1])

    @property
    def dark(self) -> np.ndarray:
        return self.states[:, 1]


def eigen_splitting(g1: float, g2: float) -> EigenStructure:
    """Eigen-decomposition of the three-state Hamiltonian.

    The zero-energy column is replaced by the analytic dark state so its
    phase convention is fixed (``+cos(theta)`` on ``|e0g>``).
    """
    theta = mixing_angle(g1, g2)
    energies, vecs = np.linalg.eigh(single_excitation_hamiltonian(g1, g2))
    vecs = vecs.astype(complex)
    if g1 or g2:
        vecs[:, 1] = dark_state(theta)
    return EigenStructure(energies=energies, states=vecs, mixing_angle=theta)
