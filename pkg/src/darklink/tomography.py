"""Readout correction, state and process tomography, and figures of merit.

Conventions
-----------
* Single-qubit basis ``(|g>, |e>)``; ``Z = diag(1, -1)``.
* Two-qubit ordering ``Q1 (x) Q2``: outcomes ``gg, ge, eg, ee``.
* Process matrices use the Pauli basis ``{I, X, Y, Z}`` with
  ``E(rho) = sum_mn chi_mn P_m rho P_n`` and ``tr chi = 1`` for
  trace-preserving maps.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .statespace import PAULIS

GATE_LABELS = ("I", "Rx", "Ry")
PAULI_LABELS = ("I", "X", "Y", "Z")
OUTCOMES = {1: ("g", "e"), 2: ("gg", "ge", "eg", "ee")}
CONDITION_WARN = 1e3

SQRT_HALF = 1.0 / math.sqrt(2.0)
GATES = {
    "I": np.eye(2, dtype=complex),
    "Rx": SQRT_HALF * np.array([[1, -1j], [-1j, 1]], dtype=complex),
    "Ry": SQRT_HALF * np.array([[1, -1], [1, 1]], dtype=complex),
}

# QPT preparations: |g>, (|g>+|e>)/sqrt2, (|g>+i|e>)/sqrt2, |e>.
QPT_INPUT_KETS = (
    np.array([1, 0], dtype=complex),
    np.array([1, 1], dtype=complex) * SQRT_HALF,
    np.array([1, 1j], dtype=complex) * SQRT_HALF,
    np.array([0, 1], dtype=complex),
)
QPT_INPUTS = tuple(np.outer(k, k.conj()) for k in QPT_INPUT_KETS)

PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) * SQRT_HALF  # (|ge> - |eg>)/sqrt2


class ConditioningWarning(UserWarning):
    """Assignment matrix is poorly conditioned."""


# ---------------------------------------------------------------- readout


@dataclass(frozen=True)
class AssignmentMatrix:
    """``matrix[i, j] = P(assign outcome i | prepared state j)``."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 4):
            raise ValueError(f"assignment matrix must be 2x2 or 4x4, got {m.shape}")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("assignment probabilities must lie in [0, 1]")
        sums = m.sum(axis=0)
        if np.max(np.abs(sums - 1)) > 1e-9:
            raise ValueError(f"columns must sum to 1, got {sums}")
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e15:
            raise ValueError("assignment matrix is singular")
        if cond > CONDITION_WARN:
            warnings.warn(f"assignment matrix condition number {cond:.3g}", ConditioningWarning, stacklevel=3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_fidelities(cls, *pairs: tuple[float, float]) -> AssignmentMatrix:
        """Product matrix from per-qubit ``(F_g, F_e)``, Q1 first."""
        if len(pairs) not in (1, 2):
            raise ValueError("give readout fidelities for one or two qubits")
        m = np.ones((1, 1))
        for fg, fe in pairs:
            m = np.kron(m, [[fg, 1 - fe], [1 - fg, fe]])
        return cls(m)

    @classmethod
    def from_measured(cls, matrix, *, renormalize_tol: float = 0.0) -> AssignmentMatrix:
        """Accept a measured matrix, rescaling columns whose sums are off by at most ``renormalize_tol``.

        Published matrices are usually rounded to three digits, so a column
        may sum to 0.999.
        """
        m = np.array(matrix, dtype=float)
        sums = m.sum(axis=0)
        if np.max(np.abs(sums - 1)) > max(renormalize_tol, 1e-9):
            raise ValueError(f"column sums {sums} deviate from 1 by more than {renormalize_tol}")
        return cls(m / sums)

    @property
    def n_qubits(self) -> int:
        return 1 if self.matrix.shape[0] == 2 else 2

    def apply(self, probs) -> np.ndarray:
        return self.matrix @ np.asarray(probs, dtype=float)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{p >= 0, sum p = 1}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def correct_readout(raw_probs, assignment: AssignmentMatrix, *, clip: bool = True) -> np.ndarray:
    """Invert the assignment matrix; optionally project onto the probability simplex.

    With ``clip=False`` the raw inverted vector is returned (it may leave
    ``[0, 1]`` but still sums to 1).
    """
    raw = np.asarray(raw_probs, dtype=float)
    if raw.shape != (assignment.matrix.shape[0],):
        raise ValueError(f"expected {assignment.matrix.shape[0]} probabilities, got shape {raw.shape}")
    if abs(raw.sum() - 1.0) > 1e-6:
        raise ValueError(f"raw probabilities sum to {raw.sum()}, not 1")
    est = np.linalg.solve(assignment.matrix, raw)
    return project_to_simplex(est) if clip else est


# ------------------------------------------------------- state tomography


@dataclass(frozen=True)
class TomographySettings:
    """Gate set ``{I, Rx(pi/2), Ry(pi/2)}`` per qubit plus the Q2 frame angle ``phi``.

    ``phi`` is the azimuth by which the receiver's frame is rotated: the
    reconstruction undoes ``diag(1, e^{i phi})`` on Q2 (the last qubit).
    """

    phi: float = 0.0

    def frame(self, n_qubits: int) -> np.ndarray:
        rz = np.diag([1.0, np.exp(1j * self.phi)])
        return rz if n_qubits == 1 else np.kron(np.eye(2), rz)


def _settings(n_qubits: int) -> list[tuple[str, ...]]:
    return list(itertools.product(GATE_LABELS, repeat=n_qubits))


def _unitary(labels: Sequence[str]) -> np.ndarray:
    u = np.ones((1, 1), dtype=complex)
    for lab in labels:
        u = np.kron(u, GATES[lab])
    return u


def _pauli_basis(n_qubits: int) -> list[tuple[str, np.ndarray]]:
    out = []
    for labels in itertools.product(PAULI_LABELS, repeat=n_qubits):
        m = np.ones((1, 1), dtype=complex)
        for lab in labels:
            m = np.kron(m, PAULIS[lab])
        out.append(("".join(labels), m))
    return out


def measurement_probabilities(rho: np.ndarray, n_qubits: int) -> dict[tuple[str, ...], np.ndarray]:
    """Ideal outcome probabilities for every gate setting."""
    data = {}
    for labels in _settings(n_qubits):
        u = _unitary(labels)
        data[labels] = np.clip(np.real(np.diagonal(u @ rho @ u.conj().T)), 0.0, None)
    return data


def synthesize_measurements(
    rho: np.ndarray,
    *,
    assignment: AssignmentMatrix | None = None,
    shots: int | None = None,
    seed: int | None = None,
) -> dict[tuple[str, ...], np.ndarray]:
    """Synthetic tomography data for ``rho`` (1 or 2 qubits).

    Readout errors are applied through ``assignment``; ``shots`` draws
    multinomial counts per setting (seeded) and returns frequencies.
    """
    rho = np.asarray(rho, dtype=complex)
    n_qubits = _n_qubits(rho)
    rng = np.random.default_rng(seed) if shots is not None else None
    data = {}
    for labels, p in measurement_probabilities(rho, n_qubits).items():
        p = p / p.sum()
        if assignment is not None:
            p = assignment.apply(p)
        if shots is not None:
            if shots <= 0:
                raise ValueError("shots must be positive")
            p = rng.multinomial(shots, p / p.sum()) / shots
        data[labels] = p
    return data


def _n_qubits(rho: np.ndarray) -> int:
    if rho.shape == (2, 2):
        return 1
    if rho.shape == (4, 4):
        return 2
    raise ValueError(f"expected a 1- or 2-qubit density matrix, got shape {rho.shape}")


def linear_inversion(data: Mapping[tuple[str, ...], Sequence[float]], n_qubits: int) -> np.ndarray:
    """Least-squares density matrix from corrected outcome probabilities (no projection)."""
    needed = _settings(n_qubits)
    missing = [s for s in needed if tuple(s) not in data]
    if missing:
        raise ValueError(f"incomplete tomography settings; missing {missing}")
    dim = 2**n_qubits
    basis = _pauli_basis(n_qubits)
    rows, rhs = [], []
    for labels in needed:
        probs = np.asarray(data[labels], dtype=float)
        if probs.shape != (dim,):
            raise ValueError(f"setting {labels}: expected {dim} probabilities")
        u = _unitary(labels)
        for k in range(dim):
            proj = np.zeros((dim, dim))
            proj[k, k] = 1.0
            effect = u.conj().T @ proj @ u
            rows.append([np.real(np.trace(effect @ p)) / dim for _, p in basis])
            rhs.append(probs[k])
    coeffs, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    return sum(c * p for c, (_, p) in zip(coeffs, basis)) / dim


def project_physical(mat: np.ndarray) -> np.ndarray:
    """Nearest unit-trace PSD matrix by eigenvalue clipping of the Hermitian part."""
    h = 0.5 * (mat + mat.conj().T)
    vals, vecs = np.linalg.eigh(h)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0:
        raise ValueError("matrix has no positive part to project onto")
    vals = vals / vals.sum()
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)


def state_tomography(
    data: Mapping[tuple[str, ...], Sequence[float]],
    settings: TomographySettings = TomographySettings(),
    *,
    n_qubits: int | None = None,
    physical: bool = True,
) -> np.ndarray:
    """Density matrix from readout-corrected probabilities for all gate settings."""
    if n_qubits is None:
        lengths = {len(k) for k in data}
        if len(lengths) != 1:
            raise ValueError("cannot infer the qubit count from mixed setting labels")
        n_qubits = lengths.pop()
    rho = linear_inversion(data, n_qubits)
    f = settings.frame(n_qubits)
    rho = f.conj().T @ rho @ f
    return project_physical(rho) if physical else rho


# ----------------------------------------------------- process tomography

_PAULI_1Q = [PAULIS[k] for k in PAULI_LABELS]
_CHI_BASIS = np.array(
    [np.kron(pm, pn.conj()).reshape(-1) for pm in _PAULI_1Q for pn in _PAULI_1Q]
).T  # column (4m + n) is vec(P_m (x) conj(P_n))


def superoperator_from_pairs(inputs: Sequence[np.ndarray], outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Row-major superoperator ``S`` with ``vec(out) = S vec(in)``."""
    if len(inputs) != 4 or len(outputs) != 4:
        raise ValueError(f"need four input/output pairs, got {len(inputs)} and {len(outputs)}")
    a = np.array([np.asarray(r, dtype=complex).reshape(-1) for r in inputs]).T
    b = np.array([np.asarray(r, dtype=complex).reshape(-1) for r in outputs]).T
    return b @ np.linalg.inv(a)


def chi_from_superoperator(s: np.ndarray) -> np.ndarray:
    coeffs = np.linalg.solve(_CHI_BASIS, s.reshape(-1))
    return coeffs.reshape(4, 4)


def superoperator_from_chi(chi: np.ndarray) -> np.ndarray:
    return (_CHI_BASIS @ np.asarray(chi).reshape(-1)).reshape(4, 4)


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    out = np.zeros((2, 2), dtype=complex)
    for m, pm in enumerate(_PAULI_1Q):
        for n, pn in enumerate(_PAULI_1Q):
            out += chi[m, n] * pm @ rho @ pn
    return out


def process_tomography(
    outputs: Sequence[np.ndarray],
    inputs: Sequence[np.ndarray] = QPT_INPUTS,
    *,
    physical: bool = True,
) -> np.ndarray:
    """Pauli-basis process matrix from the four standard preparations."""
    chi = chi_from_superoperator(superoperator_from_pairs(inputs, outputs))
    return project_physical(chi) if physical else chi


def ideal_chi(unitary: np.ndarray | None = None) -> np.ndarray:
    """``chi`` of a unitary channel (identity by default)."""
    u = np.eye(2, dtype=complex) if unitary is None else np.asarray(unitary, dtype=complex)
    c = np.array([np.trace(p.conj().T @ u) / 2 for p in _PAULI_1Q])
    return np.outer(c, c.conj())


def process_fidelity(chi: np.ndarray, chi_ideal: np.ndarray) -> float:
    """``Re tr(chi chi_ideal)``."""
    return float(np.real(np.trace(chi @ chi_ideal)))


def trace_distance_chi(chi_a: np.ndarray, chi_b: np.ndarray) -> float:
    """``sqrt(tr[(chi_a - chi_b)^2])`` (Frobenius form for Hermitian inputs)."""
    d = np.asarray(chi_a) - np.asarray(chi_b)
    return float(math.sqrt(max(np.real(np.trace(d @ d)), 0.0)))


# ----------------------------------------------------------------- metrics


def state_fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("target state must be normalized")
    return float(np.real(psi.conj() @ rho @ psi))


_YY = np.kron(PAULIS["Y"], PAULIS["Y"])


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit state.

    The ``lambda_i`` are the singular values of ``sqrt(rho) (Y(x)Y) sqrt(rho)*``,
    which avoids square roots of round-off sized eigenvalues.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 density matrix")
    vals, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    vals = np.where(vals > 1e-14 * max(vals[-1], 1e-300), vals, 0.0)
    root = (vecs * np.sqrt(vals)) @ vecs.conj().T
    lam = np.linalg.svd(root @ _YY @ root.conj(), compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def pauli_expectations(rho: np.ndarray) -> dict[str, float]:
    """``<P_i (x) P_j>`` for all two-qubit Pauli strings, keyed like ``"XZ"``."""
    return {label: float(np.real(np.trace(rho @ p))) for label, p in _pauli_basis(2)}


# ------------------------------------------------------------ serialization


def matrix_to_json(mat: np.ndarray, *, kind: str, basis: Sequence[str], layout: str) -> dict:
    """JSON-ready record: ``{kind, basis, layout, real, imag}``."""
    if kind not in ("density_matrix", "process_matrix"):
        raise ValueError(f"unknown matrix kind {kind!r}")
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (len(basis), len(basis)):
        raise ValueError("basis labels must match the matrix dimension")
    return {
        "kind": kind,
        "basis": list(basis),
        "layout": layout,
        "real": np.real(mat).tolist(),
        "imag": np.imag(mat).tolist(),
    }


def matrix_from_json(obj: Mapping | str) -> np.ndarray:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        re, im, basis = np.array(obj["real"], float), np.array(obj["imag"], float), obj["basis"]
    except KeyError as exc:
        raise ValueError(f"matrix record is missing {exc}") from None
    if re.shape != im.shape or re.shape != (len(basis), len(basis)):
        raise ValueError("real/imag arrays must be square and match the basis")
    return re + 1j * im


def density_matrix_record(rho: np.ndarray) -> dict:
    n = _n_qubits(np.asarray(rho))
    layout = "Q2" if n == 1 else "Q1,Q2"
    return matrix_to_json(rho, kind="density_matrix", basis=OUTCOMES[n], layout=layout)


def process_matrix_record(chi: np.ndarray) -> dict:
    return matrix_to_json(chi, kind="process_matrix", basis=PAULI_LABELS, layout="Q1->Q2")
