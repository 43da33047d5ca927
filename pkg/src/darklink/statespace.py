"""Composite Hilbert space of two qubits coupled to a band of channel modes.

Subsystems are ordered ``Q1, mode -N, ..., mode +N, Q2``; every subsystem is
two-level (qubit ``g/e`` or Fock ``0/1``).  A full-space basis index is the
binary number formed by the subsystem occupations with ``Q1`` as the most
significant bit, i.e. the ordering produced by ``np.kron(Q1, ..., Q2)``.

A layout may be truncated to states carrying at most ``max_excitations``
quanta.  Truncated layouts keep the full-space ordering of their surviving
states, so a state vector on a truncated layout is simply a row selection of
the full-space vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

QUBIT_LEVELS = 2
FOCK_CUTOFF = 2

# Local operators in the (g, e) / (|0>, |1>) basis.
IDENTITY = np.eye(2, dtype=complex)
LOWERING = np.array([[0, 1], [0, 0]], dtype=complex)
RAISING = LOWERING.T.copy()
NUMBER = RAISING @ LOWERING
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": IDENTITY, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}

# Largest dense operator the layout helpers will materialise.
MAX_DENSE_DIM = 4096

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class SpaceLayout:
    """Tensor-space descriptor: ``Q1 (x) modes[-N..N] (x) Q2``.

    ``max_excitations=None`` keeps the full space of dimension
    ``2 * 2**(2N+1) * 2``; ``max_excitations=1`` keeps the ground state plus
    the ``2N+3`` single-excitation states.
    """

    n_side_modes: int
    max_excitations: int | None = None

    def __post_init__(self) -> None:
        if self.n_side_modes < 0:
            raise ValueError(f"n_side_modes must be >= 0, got {self.n_side_modes}")
        if self.max_excitations is not None and self.max_excitations < 0:
            raise ValueError("max_excitations must be None or >= 0")

    @property
    def n_modes(self) -> int:
        return 2 * self.n_side_modes + 1

    @property
    def n_subsystems(self) -> int:
        return self.n_modes + 2

    @property
    def full_dim(self) -> int:
        return QUBIT_LEVELS * FOCK_CUTOFF**self.n_modes * QUBIT_LEVELS

    @property
    def is_truncated(self) -> bool:
        return self.max_excitations is not None and self.max_excitations < self.n_subsystems

    @property
    def q1(self) -> int:
        return 0

    @property
    def q2(self) -> int:
        return self.n_subsystems - 1

    @property
    def mode_numbers(self) -> range:
        return range(-self.n_side_modes, self.n_side_modes + 1)

    def mode(self, n: int) -> int:
        """Subsystem index of channel mode ``n`` (``-N <= n <= N``)."""
        if abs(n) > self.n_side_modes:
            raise ValueError(f"mode {n} outside -{self.n_side_modes}..{self.n_side_modes}")
        return n + self.n_side_modes + 1

    @property
    def labels(self) -> tuple[str, ...]:
        return ("Q1", *(f"a[{n}]" for n in self.mode_numbers), "Q2")

    def shift(self, subsystem: int) -> int:
        if not 0 <= subsystem < self.n_subsystems:
            raise IndexError(f"subsystem {subsystem} out of range")
        return self.n_subsystems - 1 - subsystem

    @cached_property
    def states(self) -> np.ndarray:
        """Full-space indices of the retained basis states, ascending."""
        if not self.is_truncated:
            return np.arange(self.full_dim, dtype=np.int64)
        picked = []
        for k in range(self.max_excitations + 1):
            for subset in combinations(range(self.n_subsystems), k):
                picked.append(sum(1 << self.shift(s) for s in subset))
        return np.array(sorted(picked), dtype=np.int64)

    @property
    def dim(self) -> int:
        return len(self.states)

    def occupation(self, subsystem: int) -> np.ndarray:
        """0/1 occupation of ``subsystem`` for each retained basis state."""
        return (self.states >> self.shift(subsystem)) & 1

    def excitation_number(self) -> np.ndarray:
        total = np.zeros(self.dim, dtype=np.int64)
        for k in range(self.n_subsystems):
            total += self.occupation(k)
        return total

    def index_of(self, excited: Iterable[int] = ()) -> int:
        """Position in :attr:`states` of the product state with ``excited`` subsystems in |1>."""
        full = sum(1 << self.shift(k) for k in set(excited))
        pos = int(np.searchsorted(self.states, full))
        if pos >= self.dim or self.states[pos] != full:
            raise ValueError(f"state with excited subsystems {sorted(excited)} not in layout")
        return pos

    def ket(self, excited: Iterable[int] = ()) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=complex)
        vec[self.index_of(excited)] = 1.0
        return vec


def build_layout(n_side_modes: int, *, single_excitation: bool = False) -> SpaceLayout:
    """Layout with ``2N+1`` channel modes; optionally restricted to <= 1 excitation."""
    return SpaceLayout(n_side_modes, max_excitations=1 if single_excitation else None)


def embed_product(factors: Sequence[tuple[int, np.ndarray]], layout: SpaceLayout) -> np.ndarray:
    """Matrix of ``op_1 (x) op_2 (x) ...`` (identity elsewhere) on the layout basis.

    Matrix elements are evaluated directly between retained states, so a
    product such as ``sigma_1 a_n^dagger`` is exact on a truncated layout even
    though the individual factors would leave it.
    """
    if layout.dim > MAX_DENSE_DIM:
        raise ValueError(
            f"dense operator of dimension {layout.dim} requested; use a single-excitation layout"
        )
    states = layout.states
    mask = 0
    value = np.ones((layout.dim, layout.dim), dtype=complex)
    for subsystem, op in factors:
        op = np.asarray(op, dtype=complex)
        if op.shape != (2, 2):
            raise ValueError(f"local operator for subsystem {subsystem} must be 2x2, got {op.shape}")
        if mask & (1 << layout.shift(subsystem)):
            raise ValueError(f"subsystem {subsystem} appears twice; multiply the local factors first")
        mask |= 1 << layout.shift(subsystem)
        bits = layout.occupation(subsystem)
        value = value * op[bits[:, None], bits[None, :]]
    rest = states & ~mask
    return np.where(rest[:, None] == rest[None, :], value, 0.0)


def embed(local_op: np.ndarray, subsystem: int, layout: SpaceLayout) -> np.ndarray:
    """Single-subsystem operator extended by the identity on every other subsystem."""
    return embed_product([(subsystem, local_op)], layout)


def lowering(subsystem: int, layout: SpaceLayout) -> np.ndarray:
    return embed(LOWERING, subsystem, layout)


def number(subsystem: int, layout: SpaceLayout) -> np.ndarray:
    return embed(NUMBER, subsystem, layout)


def partial_trace(rho: np.ndarray, keep: Iterable[int], layout: SpaceLayout) -> np.ndarray:
    """Reduced density matrix on ``keep`` (subsystem order preserved, first = most significant)."""
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    rho = np.asarray(rho)
    if rho.shape != (layout.dim, layout.dim):
        raise ValueError(f"rho has shape {rho.shape}, layout dimension is {layout.dim}")
    states = layout.states
    mask = 0
    reduced = np.zeros(layout.dim, dtype=np.int64)
    for subsystem in keep:
        mask |= 1 << layout.shift(subsystem)
        reduced = (reduced << 1) | layout.occupation(subsystem)
    rest = states & ~mask
    same = rest[:, None] == rest[None, :]
    out = np.zeros((2 ** len(keep),) * 2, dtype=complex)
    rows = np.broadcast_to(reduced[:, None], same.shape)[same]
    cols = np.broadcast_to(reduced[None, :], same.shape)[same]
    np.add.at(out, (rows, cols), rho[same])
    return out


def populations(rho: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """Excited-state population of every subsystem, in layout order."""
    diag = np.real(np.diagonal(rho))
    return np.array([diag @ layout.occupation(k) for k in range(layout.n_subsystems)])


def check_density_matrix(
    rho: np.ndarray,
    *,
    hermitian_tol: float = HERMITIAN_TOL,
    trace_tol: float = TRACE_TOL,
    eigenvalue_tol: float = EIGENVALUE_TOL,
) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD to tolerance."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > hermitian_tol:
        raise ValueError(f"not Hermitian: max|rho - rho^dag| = {herm:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"trace {tr.real:.12f} deviates from 1")
    low = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if low < -eigenvalue_tol:
        raise ValueError(f"negative eigenvalue {low:.3e}")


def is_density_matrix(rho: np.ndarray, **tolerances: float) -> bool:
    try:
        check_density_matrix(rho, **tolerances)
    except ValueError:
        return False
    return True


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())
