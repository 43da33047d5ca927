"""Fixed-step Lindblad integration for the qubit-channel-qubit link.

The master equation

    drho/dt = -i[H(t), rho] + sum_k r_k (c_k rho c_k^dag - 1/2 {c_k^dag c_k, rho})

is integrated with classical fourth-order Runge-Kutta.  ``H(t)`` is evaluated
at every stage time, and integration is split at the schedule's coupling
jumps so piecewise programs keep full order.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .model import DeviceParams, HamiltonianModel
from .statespace import LOWERING, PAULI_Z, SpaceLayout, embed, ket_to_dm

DEFAULT_MAX_STEP_NS = 0.025
# Phase advance per step of the fastest frequency; keeps the global RK4
# error near 1e-8 so nearly pure final states stay positive.
MAX_PHASE_PER_STEP = 0.025
# "auto" materialises the dim^2 x dim^2 superoperator only up to this size;
# beyond it the matrix form with a sparse jump map is faster.
SUPEROPERATOR_MAX_DIM = 8
METHODS = ("auto", "superoperator", "matrix")

SWEEP_PARAMETERS = ("t_f", "gbar", "t1r", "relay_g")


class IntegrationError(RuntimeError):
    """Integration failed: step underflow, non-finite values or an unphysical state."""


def compute_tphi(t1: float, t2_ramsey: float) -> float:
    """Pure-dephasing time from ``1/T_phi = 1/T2 - 1/(2 T1)``; ``inf`` when ``T2 = 2 T1``."""
    if t1 <= 0 or t2_ramsey <= 0:
        raise ValueError("lifetimes must be positive")
    if t2_ramsey > 2.0 * t1 * (1 + 1e-12):
        raise ValueError(f"T2 = {t2_ramsey} exceeds 2*T1 = {2 * t1}: inconsistent parameters")
    rate = 1.0 / t2_ramsey - 1.0 / (2.0 * t1)
    return math.inf if rate <= 0 else 1.0 / rate


@dataclass
class Decay:
    """Collapse channel ``sqrt(rate) * operator``.

    ``rate`` is either a constant (1/ns) or a function of the instantaneous
    Q1 coupling ``g1`` (rad/ns), used for coupling-dependent qubit loading.
    """

    operator: np.ndarray
    rate: float | Callable[[float], float]
    label: str = ""

    @property
    def is_static(self) -> bool:
        return not callable(self.rate)

    def rate_at(self, g1: float) -> float:
        return self.rate(g1) if callable(self.rate) else self.rate


@dataclass
class LindbladProblem:
    model: HamiltonianModel
    decays: list[Decay]
    initial: np.ndarray
    max_step: float = DEFAULT_MAX_STEP_NS
    error_tol: float | None = None
    min_step: float = 1e-6
    method: str = "auto"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    @property
    def layout(self) -> SpaceLayout:
        return self.model.layout

    @property
    def duration(self) -> float:
        return self.model.schedule.duration


def _monomial(op: np.ndarray):
    """``(rows, cols, vals)`` if ``op`` has at most one nonzero per row and column."""
    rows, cols = np.nonzero(op)
    if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
        return None
    return rows, cols, op[rows, cols]


class _Generator:
    """Evaluates the Lindblad right-hand side for given couplings."""

    def __init__(self, model: HamiltonianModel, decays: Sequence[Decay], method: str = "auto"):
        self.dim = model.layout.dim
        self.static = [d for d in decays if d.is_static and d.rate > 0]
        self.dynamic = [d for d in decays if not d.is_static]
        if method == "auto":
            method = "superoperator" if self.dim <= SUPEROPERATOR_MAX_DIM else "matrix"
        self.superop = method == "superoperator"
        if self.superop:
            eye = np.eye(self.dim)
            comm = lambda h: -1j * (np.kron(h, eye) - np.kron(eye, h.T))
            self.s_drift = comm(model.drift) + sum(
                (d.rate * self._dissipator(d.operator, eye) for d in self.static),
                np.zeros((self.dim**2,) * 2, dtype=complex),
            )
            self.s_q1 = comm(model.coupling_q1)
            self.s_q2 = comm(model.coupling_q2)
            self.s_dyn = [self._dissipator(d.operator, eye) for d in self.dynamic]
        else:
            self.heff = model.drift - 0.5j * sum(
                (d.rate * d.operator.conj().T @ d.operator for d in self.static),
                np.zeros((self.dim, self.dim), dtype=complex),
            )
            self.v1, self.v2 = model.coupling_q1, model.coupling_q2
            self.jumps = self._jump_map([(d.rate, d.operator) for d in self.static])
            self.dyn = [
                (d, d.operator.conj().T @ d.operator, self._jump_map([(1.0, d.operator)]))
                for d in self.dynamic
            ]

    @staticmethod
    def _dissipator(c: np.ndarray, eye: np.ndarray) -> np.ndarray:
        cdc = c.conj().T @ c
        return np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)

    def _jump_map(self, weighted: Sequence[tuple[float, np.ndarray]]) -> Callable[[np.ndarray], np.ndarray]:
        """``rho -> sum_k r_k c_k rho c_k^dag``.

        Monomial operators (one nonzero per row and column, e.g. lowering
        operators and diagonal ones) are merged into one sparse map on
        ``vec(rho)``; any others fall back to dense products.
        """
        dim = self.dim
        dst, src, val, dense = [], [], [], []
        for rate, c in weighted:
            mono = _monomial(c)
            if mono is None:
                dense.append((rate, c, c.conj().T))
                continue
            rows, cols, vals = mono
            dst.append((rows[:, None] * dim + rows[None, :]).ravel())
            src.append((cols[:, None] * dim + cols[None, :]).ravel())
            val.append((rate * np.outer(vals, vals.conj())).ravel())
        sparse = None
        if dst:
            sparse = csr_matrix(
                (np.concatenate(val), (np.concatenate(dst), np.concatenate(src))), shape=(dim * dim,) * 2
            )

        def apply(rho: np.ndarray) -> np.ndarray:
            out = (sparse @ rho.reshape(-1)).reshape(rho.shape) if sparse is not None else np.zeros_like(rho)
            for rate, c, cd in dense:
                out += rate * (c @ rho @ cd)
            return out

        return apply

    def __call__(self, g1: float, g2: float, rho: np.ndarray) -> np.ndarray:
        if self.superop:
            v = rho.reshape(-1)
            out = self.s_drift @ v
            if g1:
                out += g1 * (self.s_q1 @ v)
            if g2:
                out += g2 * (self.s_q2 @ v)
            for d, s in zip(self.dynamic, self.s_dyn):
                r = d.rate_at(g1)
                if r:
                    out += r * (s @ v)
            return out.reshape(rho.shape)
        heff = self.heff + g1 * self.v1 + g2 * self.v2
        for d, cdc, _ in self.dyn:
            r = d.rate_at(g1)
            if r:
                heff = heff - 0.5j * r * cdc
        hr = heff @ rho
        out = -1j * (hr - hr.conj().T) + self.jumps(rho)
        for d, _, jump in self.dyn:
            r = d.rate_at(g1)
            if r:
                out += r * jump(rho)
        return out


@dataclass
class Trajectory:
    times: np.ndarray
    pe_q1: np.ndarray
    pe_q2: np.ndarray
    mode_populations: np.ndarray  # shape (n_samples, n_modes)
    trace_error: np.ndarray
    final_state: np.ndarray
    layout: SpaceLayout
    states: list[np.ndarray] | None = field(default=None, repr=False)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        modes = [f"p_mode_{n}" for n in self.layout.mode_numbers]
        writer.writerow(["time_ns", "pe_q1", "pe_q2", *modes, "trace_error"])
        for i, t in enumerate(self.times):
            writer.writerow(
                [repr(float(t)), repr(float(self.pe_q1[i])), repr(float(self.pe_q2[i]))]
                + [repr(float(p)) for p in self.mode_populations[i]]
                + [repr(float(self.trace_error[i]))]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text


def _stop_points(duration: float, samples: Iterable[float], breakpoints: Iterable[float]) -> list[float]:
    pts = sorted({0.0, float(duration), *map(float, samples), *map(float, breakpoints)})
    merged: list[float] = []
    for p in pts:
        if merged and p - merged[-1] < 1e-12:
            continue
        merged.append(p)
    return merged


def evolve(
    problem: LindbladProblem,
    sample_times: Sequence[float] | None = None,
    *,
    store_states: bool = False,
    positivity_tol: float = 1e-7,
) -> Trajectory:
    """Integrate ``problem`` and sample populations at ``sample_times`` (ns).

    Defaults to sampling at ``0`` and the end of the schedule.
    """
    layout = problem.layout
    schedule = problem.model.schedule
    duration = schedule.duration
    samples = [0.0, duration] if sample_times is None else sorted(float(t) for t in sample_times)
    if samples and (samples[0] < -1e-12 or samples[-1] > duration + 1e-9):
        raise ValueError(f"sample times must lie within [0, {duration}]")
    samples = [min(max(t, 0.0), duration) for t in samples]

    rho = np.array(problem.initial, dtype=complex)
    if rho.ndim == 1:
        rho = ket_to_dm(rho)
    if rho.shape != (layout.dim, layout.dim):
        raise ValueError(f"initial state has shape {rho.shape}, layout dimension {layout.dim}")

    gen = _Generator(problem.model, problem.decays, problem.method)

    def f(t: float, state: np.ndarray, left: bool = False) -> np.ndarray:
        g1, g2 = schedule.couplings(t, left=left)
        return gen(g1, g2, state)

    def rk4(t: float, t_next: float, state: np.ndarray, ends_segment: bool) -> np.ndarray:
        # The last stage is evaluated at ``t_next`` itself so a segment end
        # never rounds past a coupling jump.
        h = t_next - t
        k1 = f(t, state)
        k2 = f(t + 0.5 * h, state + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, state + 0.5 * h * k2)
        k4 = f(t_next, state + h * k3, left=ends_segment)
        return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def advance(t: float, t_next: float, state: np.ndarray, ends_segment: bool) -> np.ndarray:
        if problem.error_tol is None:
            return rk4(t, t_next, state, ends_segment)
        mid = 0.5 * (t + t_next)
        full = rk4(t, t_next, state, ends_segment)
        half = rk4(mid, t_next, rk4(t, mid, state, False), ends_segment)
        err = np.max(np.abs(full - half))
        if err <= problem.error_tol:
            return half
        if 0.5 * (t_next - t) < problem.min_step:
            raise IntegrationError(
                f"step size underflow at t={t:.6g} ns: local error {err:.3e} with h={t_next - t:.3e} ns"
            )
        return advance(mid, t_next, advance(t, mid, state, False), ends_segment)

    stops = _stop_points(duration, samples, schedule.breakpoints)
    # Each sample maps to the stop it was merged into.
    stop_arr = np.array(stops)
    snapped = [stops[int(np.argmin(np.abs(stop_arr - t)))] for t in samples]
    sample_set = set(snapped)
    records: dict[float, np.ndarray] = {}
    occ_q1 = layout.occupation(layout.q1)
    occ_q2 = layout.occupation(layout.q2)

    def record(t: float, state: np.ndarray) -> None:
        if not np.all(np.isfinite(state)):
            raise IntegrationError(f"non-finite density matrix at t={t:.6g} ns")
        herm = np.max(np.abs(state - state.conj().T))
        if herm > 1e-10:
            raise IntegrationError(f"Hermiticity lost at t={t:.6g} ns: {herm:.3e}")
        records[t] = state.copy()

    if 0.0 in sample_set:
        record(0.0, rho)
    for a, b in zip(stops[:-1], stops[1:]):
        n = max(1, math.ceil((b - a) / problem.max_step - 1e-9))
        h = (b - a) / n
        for i in range(n):
            t_next = b if i == n - 1 else a + (i + 1) * h
            rho = advance(a + i * h, t_next, rho, i == n - 1)
        if b in sample_set:
            record(b, rho)

    low = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if low < -positivity_tol:
        raise IntegrationError(f"final state not positive: smallest eigenvalue {low:.3e}")

    times = np.array(samples)
    states = [records[t] for t in snapped]
    diags = np.array([np.real(np.diagonal(s)) for s in states])
    modes = np.stack([layout.occupation(layout.mode(n)) for n in layout.mode_numbers], axis=1)
    return Trajectory(
        times=times,
        pe_q1=diags @ occ_q1,
        pe_q2=diags @ occ_q2,
        mode_populations=diags @ modes,
        trace_error=np.array([abs(np.trace(s) - 1.0) for s in states]),
        final_state=rho,
        layout=layout,
        states=states if store_states else None,
    )


def transfer_efficiency(traj: Trajectory) -> float:
    """``P_e,Q2(t_f) / P_e,Q1(0)`` from the first and last samples."""
    if len(traj.times) < 2 or traj.times[0] != 0.0:
        raise ValueError("trajectory must include t=0 and the final time")
    start = traj.pe_q1[0]
    if start <= 1e-15:
        raise ValueError("efficiency undefined: Q1 starts with no excitation")
    return float(traj.pe_q2[-1] / start)


def initial_state(layout: SpaceLayout, q1: Sequence[complex] = (0.0, 1.0)) -> np.ndarray:
    """Ket with Q1 in ``q1[0]|g> + q1[1]|e>``, channel in vacuum, Q2 in ``|g>``."""
    alpha, beta = q1
    psi = alpha * layout.ket() + beta * layout.ket([layout.q1])
    return psi / np.linalg.norm(psi)


def build_problem(
    device: DeviceParams,
    schedule: Any,
    layout: SpaceLayout,
    *,
    t1r_ns: float | None,
    qubit_decoherence: bool = True,
    dephasing: str = "ramsey",
    q1_loading: Callable[[float], float] | None = None,
    initial: np.ndarray | None = None,
    detuning_q1: float = 0.0,
    detuning_q2: float = 0.0,
    max_step: float | None = None,
    error_tol: float | None = None,
    method: str = "auto",
) -> LindbladProblem:
    """Assemble the Hamiltonian and collapse channels for one run.

    Per qubit: ``sigma/sqrt(T1)`` and ``sigma_z/sqrt(2 T_phi)``; per mode
    ``a_n/sqrt(T1r)``.  ``dephasing`` picks the coherence time behind
    ``T_phi`` ("ramsey", "echo") or disables it ("none").  ``q1_loading``
    maps the instantaneous Q1 coupling to an extra Q1 decay rate (1/ns).
    ``t1r_ns=None`` makes the channel lossless.  ``max_step=None`` picks
    :func:`default_step` for the model.
    """
    if dephasing not in ("ramsey", "echo", "none"):
        raise ValueError(f"unknown dephasing model {dephasing!r}")
    model = HamiltonianModel(
        layout, schedule, device.channel.fsr, detuning_q1=detuning_q1, detuning_q2=detuning_q2
    )
    decays: list[Decay] = []
    for name, params, k in (("q1", device.q1, layout.q1), ("q2", device.q2, layout.q2)):
        base = 1.0 / params.t1_ns if qubit_decoherence else 0.0
        sigma = embed(LOWERING, k, layout)
        if name == "q1" and q1_loading is not None:
            decays.append(Decay(sigma, _LoadedRate(base, q1_loading), f"{name}_relax"))
        elif base > 0:
            decays.append(Decay(sigma, base, f"{name}_relax"))
        if qubit_decoherence and dephasing != "none":
            t2 = params.t2_ramsey_ns if dephasing == "ramsey" else params.t2_echo_ns
            tphi = compute_tphi(params.t1_ns, t2)
            if math.isfinite(tphi):
                decays.append(Decay(embed(PAULI_Z, k, layout), 1.0 / (2.0 * tphi), f"{name}_dephase"))
    if t1r_ns is not None:
        if t1r_ns <= 0:
            raise ValueError("t1r_ns must be positive")
        for n in layout.mode_numbers:
            decays.append(Decay(embed(LOWERING, layout.mode(n), layout), 1.0 / t1r_ns, f"mode_{n}"))
    if initial is None:
        initial = initial_state(layout)
    if max_step is None:
        max_step = default_step(model)
    return LindbladProblem(model, decays, initial, max_step=max_step, error_tol=error_tol, method=method)


def default_step(model: HamiltonianModel) -> float:
    """``DEFAULT_MAX_STEP_NS``, shortened so the fastest frequency advances at most ``MAX_PHASE_PER_STEP``."""
    fastest = max(
        np.max(np.abs(model.mode_detunings)) if model.layout.n_side_modes else 0.0,
        abs(model.detuning_q1),
        abs(model.detuning_q2),
    )
    return DEFAULT_MAX_STEP_NS if fastest == 0 else min(DEFAULT_MAX_STEP_NS, MAX_PHASE_PER_STEP / fastest)


@dataclass(frozen=True)
class _LoadedRate:
    base: float
    loading: Callable[[float], float]

    def __call__(self, g1: float) -> float:
        return self.base + self.loading(abs(g1))


@dataclass(frozen=True)
class SweepRow:
    value: float
    result: float | None
    error: str | None = None


@dataclass(frozen=True)
class SweepTable:
    parameter: str
    rows: tuple[SweepRow, ...]

    @property
    def ok(self) -> bool:
        return all(r.error is None for r in self.rows)

    def argmax(self) -> SweepRow | None:
        good = [r for r in self.rows if r.result is not None]
        return max(good, key=lambda r: r.result) if good else None

    def local_maxima(self) -> list[SweepRow]:
        rows = [r for r in self.rows if r.result is not None]
        return [
            rows[i]
            for i in range(1, len(rows) - 1)
            if rows[i].result >= rows[i - 1].result and rows[i].result >= rows[i + 1].result
        ]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow([self.parameter, "result", "error"])
        for r in self.rows:
            writer.writerow([repr(r.value), "" if r.result is None else repr(r.result), r.error or ""])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text


def _run_row(evaluate: Callable[[str, float], float], parameter: str, value: float) -> SweepRow:
    try:
        return SweepRow(value, float(evaluate(parameter, value)))
    except (IntegrationError, ValueError) as exc:
        return SweepRow(value, None, f"{type(exc).__name__}: {exc}")


def sweep(
    evaluate: Callable[[str, float], float],
    parameter: str,
    values: Sequence[float],
    *,
    workers: int = 1,
) -> SweepTable:
    """Evaluate ``evaluate(parameter, v)`` for every value; rows keep input order.

    ``evaluate`` must be picklable when ``workers > 1``.  Failed rows carry
    the error message and a ``None`` result; the sweep itself continues.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    values = [float(v) for v in values]
    if workers <= 1 or len(values) <= 1:
        rows = [_run_row(evaluate, parameter, v) for v in values]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_row, [evaluate] * len(values), [parameter] * len(values), values))
    return SweepTable(parameter, tuple(rows))
