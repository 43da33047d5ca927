"""Experiment runners behind the CLI subcommands.

Every runner returns a :class:`Bundle`: a metrics document plus named text
artifacts.  Nothing here touches the filesystem except :func:`write_bundle`
and the explicit readers, so runs can be compared in memory.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .. import __version__
from ..circuit import (
    ChannelModel,
    LoadingNetwork,
    T1Table,
    effective_load,
    loaded_q1_t1,
    mode_rlc_at,
    spurious_loading,
)
from ..integrator import SweepTable, Trajectory, build_problem, evolve, initial_state, sweep, transfer_efficiency
from ..model import DeviceParams, mhz
from ..schedules import Protocol
from ..statespace import build_layout, partial_trace
from ..tomography import (
    PSI_MINUS,
    QPT_INPUT_KETS,
    AssignmentMatrix,
    TomographySettings,
    concurrence,
    correct_readout,
    density_matrix_record,
    ideal_chi,
    pauli_expectations,
    process_fidelity,
    process_matrix_record,
    process_tomography,
    state_fidelity,
    state_tomography,
    synthesize_measurements,
    trace_distance_chi,
)
from .config import EXIT_OK, EXIT_PARTIAL, LOSS_PRESETS, ConfigError, RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


@dataclass
class Bundle:
    command: str
    metrics: dict[str, Any]
    parameters: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    exit_code: int = EXIT_OK

    def document(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "command": self.command,
            "parameters": _sanitize(self.parameters),
            "metrics": _sanitize(self.metrics),
        }

    def metrics_json(self) -> str:
        return dumps(self.document())


def dumps(obj: Any) -> str:
    """Stable JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _sanitize(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, Mapping):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_bundle(bundle: Bundle, out_dir: str | Path, snapshot: bytes | None = None,
                 overrides: Mapping[str, Any] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(bundle.metrics_json(), encoding="utf-8", newline="")
    for name, text in sorted(bundle.artifacts.items()):
        (out / name).write_text(text, encoding="utf-8", newline="")
    if snapshot is not None:
        (out / "config.toml").write_bytes(snapshot)
    if overrides:
        (out / "overrides.json").write_text(dumps(dict(overrides)), encoding="utf-8", newline="")
    return out


# ------------------------------------------------------------- simulation


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def simulate(cfg: RunConfig, q1_ket: Sequence[complex] = (0.0, 1.0), *, sampled: bool = False) -> Trajectory:
    """One master-equation run with Q1 prepared in ``q1_ket``."""
    device = cfg.device()
    schedule = cfg.schedule()
    layout = build_layout(cfg.n_side_modes, single_excitation=cfg.subspace)
    t1r = cfg.channel_t1r
    if t1r is not None and t1r > device.channel.t1r_int_ns * (1 + 1e-12):
        raise ValueError(f"T1r = {t1r} ns exceeds the intrinsic mode lifetime {device.channel.t1r_int_ns} ns")
    loading = None
    if cfg.spurious_loading and t1r is not None and t1r < device.channel.t1r_int_ns:
        loading = spurious_loading(
            device, t1r, detuning=mhz(cfg.loading_detuning_mhz), g1_max=schedule.max_g1() * (1 + 1e-9)
        )
    problem = build_problem(
        device,
        schedule,
        layout,
        t1r_ns=t1r,
        qubit_decoherence=cfg.decoherence,
        dephasing=cfg.dephasing,
        q1_loading=loading,
        initial=initial_state(layout, q1_ket),
        max_step=cfg.max_step_ns,
        error_tol=cfg.error_tol,
    )
    samples = None
    if sampled:
        dur = schedule.duration
        samples = list(np.arange(0.0, dur, cfg.sample_interval_ns)) + [dur]
    return evolve(problem, samples)


def _simulate_job(args: tuple[RunConfig, tuple[complex, complex], bool]) -> Trajectory:
    cfg, ket, sampled = args
    return simulate(cfg, ket, sampled=sampled)


def _assignment(cfg: RunConfig, device: DeviceParams, qubits: Iterable[str]) -> AssignmentMatrix | None:
    if not cfg.readout_errors:
        return None
    pairs = [(getattr(device, q).readout_fg, getattr(device, q).readout_fe) for q in qubits]
    return AssignmentMatrix.from_fidelities(*pairs)


def _tomography_pair(cfg: RunConfig, rho: np.ndarray, assignment: AssignmentMatrix | None, seed: int):
    """Corrected and uncorrected reconstructions of ``rho`` from synthetic data."""
    settings = TomographySettings(cfg.phase_correction)
    raw = synthesize_measurements(rho, assignment=assignment, shots=cfg.shots or None, seed=seed)
    if assignment is None:
        est = state_tomography(raw, settings)
        return est, est
    corrected = {k: correct_readout(v / v.sum(), assignment, clip=cfg.clip_readout) for k, v in raw.items()}
    return state_tomography(corrected, settings), state_tomography(raw, settings)


def run_transfer(cfg: RunConfig, *, workers: int = 1) -> Bundle:
    """State transfer: efficiency from |e> plus simulated process tomography."""
    if cfg.protocol not in (Protocol.ADIABATIC_TRANSFER, Protocol.RELAY_TRANSFER):
        raise ConfigError(f"[run] protocol: transfer needs a transfer protocol, got {cfg.protocol.value}")
    device = cfg.device()
    jobs = [(cfg, tuple(complex(a) for a in ket), i == 3) for i, ket in enumerate(QPT_INPUT_KETS)]
    trajs = _pool_map(_simulate_job, jobs, workers)
    traj_e = trajs[3]
    eta = transfer_efficiency(traj_e)
    layout = traj_e.layout
    assignment = _assignment(cfg, device, ["q2"])
    corrected, uncorrected, direct = [], [], []
    for i, tr in enumerate(trajs):
        rho = partial_trace(tr.final_state, [layout.q2], layout)
        direct.append(rho)
        c, u = _tomography_pair(cfg, rho, assignment, cfg.seed + i)
        corrected.append(c)
        uncorrected.append(u)
    ideal = ideal_chi()
    chi = process_tomography(corrected)
    chi_u = process_tomography(uncorrected)
    metrics = {
        "eta": eta,
        "process_fidelity": process_fidelity(chi, ideal),
        "process_fidelity_uncorrected": process_fidelity(chi_u, ideal),
        "trace_distance": trace_distance_chi(chi, ideal),
        "final_pe_q2": float(traj_e.pe_q2[-1]),
        "max_trace_error": float(np.max([t.trace_error.max() for t in trajs])),
    }
    return Bundle(
        "transfer",
        metrics,
        cfg.parameters(),
        {
            "trajectory.csv": traj_e.to_csv(),
            "process_matrix.json": dumps(_sanitize(process_matrix_record(chi))),
        },
    )


def run_entangle(cfg: RunConfig, *, workers: int = 1) -> Bundle:
    """Half protocol from |e0g>: Bell-state fidelity, concurrence and Pauli correlators."""
    if not cfg.protocol.is_half:
        raise ConfigError(f"[run] protocol: entangle needs a half protocol, got {cfg.protocol.value}")
    device = cfg.device()
    traj = simulate(cfg, (0.0, 1.0), sampled=True)
    layout = traj.layout
    rho = partial_trace(traj.final_state, [layout.q1, layout.q2], layout)
    assignment = _assignment(cfg, device, ["q1", "q2"])
    est, est_u = _tomography_pair(cfg, rho, assignment, cfg.seed)
    metrics = {
        "state_fidelity": state_fidelity(est, PSI_MINUS),
        "state_fidelity_uncorrected": state_fidelity(est_u, PSI_MINUS),
        "concurrence": concurrence(est),
        "pauli_expectations": pauli_expectations(est),
        "pe_q1": float(traj.pe_q1[-1]),
        "pe_q2": float(traj.pe_q2[-1]),
        "max_trace_error": float(traj.trace_error.max()),
    }
    return Bundle(
        "entangle",
        metrics,
        cfg.parameters(),
        {
            "trajectory.csv": traj.to_csv(),
            "density_matrix.json": dumps(_sanitize(density_matrix_record(est))),
        },
    )


@dataclass(frozen=True)
class SweepEvaluator:
    """Picklable ``(parameter, value) -> metric`` for one protocol."""

    cfg: RunConfig
    metric: str

    def __call__(self, parameter: str, value: float) -> float:
        cfg = self.cfg.with_value(parameter, value)
        if self.metric == "eta":
            return transfer_efficiency(simulate(cfg, (0.0, 1.0)))
        if self.metric == "process_fidelity":
            return run_transfer(cfg).metrics["process_fidelity"]
        raise ValueError(f"unknown metric {self.metric!r}")


def _summary(table: SweepTable) -> dict[str, Any]:
    best = table.argmax()
    return {
        "argmax": None if best is None else best.value,
        "max": None if best is None else best.result,
        "local_maxima": [r.value for r in table.local_maxima()],
        "failed": [r.value for r in table.rows if r.error is not None],
        "values": [r.result for r in table.rows],
    }


def run_sweep(cfg: RunConfig, *, workers: int = 1) -> Bundle:
    spec = cfg.sweep
    if spec is None:
        raise ConfigError("[sweep] section is required for the sweep command")
    columns: dict[str, SweepTable] = {}
    for proto in spec.protocols:
        pcfg = replace(cfg, protocol=Protocol(proto))
        for metric in spec.metrics:
            if metric == "process_fidelity" and Protocol(proto).is_half:
                raise ConfigError(f"[sweep] metrics: process_fidelity needs a transfer protocol, not {proto}")
            columns[f"{proto}:{metric}"] = sweep(SweepEvaluator(pcfg, metric), spec.parameter, spec.values,
                                                 workers=workers)
    names = list(columns)
    lines = [",".join([spec.parameter, *names, "error"])]
    for i, value in enumerate(spec.values):
        cells = [repr(value)]
        errors = []
        for name in names:
            row = columns[name].rows[i]
            cells.append("" if row.result is None else repr(row.result))
            if row.error:
                errors.append(f"{name}: {row.error}")
        cells.append(_csv_quote("; ".join(errors)))
        lines.append(",".join(cells))
    failed = any(not t.ok for t in columns.values())
    params = cfg.parameters()
    params["sweep_parameter"] = spec.parameter
    params["sweep_values"] = list(spec.values)
    return Bundle(
        "sweep",
        {name: _summary(t) for name, t in columns.items()},
        params,
        {"sweep.csv": "\r\n".join(lines) + "\r\n"},
        EXIT_PARTIAL if failed else EXIT_OK,
    )


def _csv_quote(text: str) -> str:
    if any(ch in text for ch in ',"\r\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


# ---------------------------------------------------------------- circuit


def run_circuit(cfg: RunConfig) -> Bundle:
    device = cfg.device()
    ch = device.channel
    rlc = mode_rlc_at(ChannelModel.from_device(device), mhz(ch.mode_freq_ghz * 1e3))
    loads = {}
    for name, t1r in LOSS_PRESETS.items():
        ext, r = effective_load(t1r, ch.t1r_int_ns, rlc.l_nh)
        loads[name] = {"t1r_ns": t1r, "t1r_ext_ns": ext, "r_load_ohm": r}
    t1r = cfg.channel_t1r
    network = LoadingNetwork.for_device(device, t1r)
    g_anchor, d_anchor = mhz(15.0), mhz(0.4)

    det_axis = np.round(np.linspace(-5.0, 5.0, 101), 10)
    det_rows = ["detuning_mhz,t1_ns"] + [
        f"{d!r},{loaded_q1_t1(network, mhz(d), g_anchor)!r}" for d in det_axis
    ]
    g_axis = np.round(np.linspace(0.5, 30.0, 60), 10)
    g_table = T1Table.build(network, [mhz(g) for g in g_axis], [d_anchor])

    metrics = {
        "mode_r_ohm": rlc.r_ohm,
        "mode_l_nh": rlc.l_nh,
        "mode_c_nf": rlc.c_nf,
        "implied_t1r_ns": rlc.lifetime_ns,
        "loads": loads,
        "bridge_l_t_nh_at_15mhz": network.bridge_inductance(g_anchor),
        "loaded_t1_ns_at_15mhz_0p4mhz": loaded_q1_t1(network, d_anchor, g_anchor),
        "loaded_t1_ns_at_15mhz_0p4mhz_exact_network": loaded_q1_t1(network, d_anchor, g_anchor, exact=True),
    }
    params = {"t1r_ns": t1r, "r_load_ohm": network.r_load_ohm, "l_s_nh": network.l_s_nh}
    return Bundle(
        "circuit",
        metrics,
        params,
        {
            "t1_vs_detuning.csv": "\r\n".join(det_rows) + "\r\n",
            "t1_vs_coupling.csv": g_table.to_csv(),
        },
    )


# ------------------------------------------------------------- tomography


def _parse_settings(raw: Mapping[str, Any], n_qubits: int) -> dict[tuple[str, ...], np.ndarray]:
    data = {}
    for key, probs in raw.items():
        labels = tuple(s.strip() for s in key.split(","))
        if len(labels) != n_qubits:
            raise ConfigError(f"setting {key!r} does not name {n_qubits} gate(s)")
        data[labels] = np.asarray(probs, dtype=float)
    return data


def run_tomography(path: str | Path) -> Bundle:
    """Estimators on a stored measurement file (see README for the format)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kind = doc.get("kind")
    settings = TomographySettings(float(doc.get("phi", 0.0)))
    assignment = None
    if "assignment" in doc:
        assignment = AssignmentMatrix.from_measured(doc["assignment"], renormalize_tol=float(doc.get("renormalize_tol", 0.0)))
    clip = bool(doc.get("clip", True))

    def reconstruct(raw: Mapping[str, Any], n_qubits: int) -> np.ndarray:
        data = _parse_settings(raw, n_qubits)
        if assignment is not None:
            if assignment.n_qubits != n_qubits:
                raise ConfigError("assignment matrix size does not match the qubit count")
            data = {k: correct_readout(v, assignment, clip=clip) for k, v in data.items()}
        return state_tomography(data, settings, n_qubits=n_qubits)

    if kind == "state":
        n = int(doc.get("n_qubits", 2))
        rho = reconstruct(doc["data"], n)
        metrics: dict[str, Any] = {"purity": float(np.real(np.trace(rho @ rho)))}
        if n == 2:
            metrics.update(
                state_fidelity=state_fidelity(rho, PSI_MINUS),
                concurrence=concurrence(rho),
                pauli_expectations=pauli_expectations(rho),
            )
        return Bundle("tomography", metrics, {"kind": kind, "phi": settings.phi},
                      {"density_matrix.json": dumps(_sanitize(density_matrix_record(rho)))})
    if kind == "process":
        outputs = [reconstruct(o, 1) for o in doc["outputs"]]
        chi = process_tomography(outputs)
        ideal = ideal_chi()
        metrics = {"process_fidelity": process_fidelity(chi, ideal), "trace_distance": trace_distance_chi(chi, ideal)}
        return Bundle("tomography", metrics, {"kind": kind, "phi": settings.phi},
                      {"process_matrix.json": dumps(_sanitize(process_matrix_record(chi)))})
    raise ConfigError(f"{path}: kind must be 'state' or 'process', got {kind!r}")


# ---------------------------------------------------------------- compare


def _flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    if isinstance(obj, Mapping):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(obj, list):
        out = {}
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


@dataclass(frozen=True)
class Tolerances:
    default_abs: float = 1e-12
    default_rel: float = 0.0
    per_metric: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> Tolerances:
        if path is None:
            return cls()
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"tolerance file {path}: {exc}") from None
        default = data.get("default", {})
        metrics = data.get("metrics", {})
        if not all(isinstance(v, (int, float)) and v >= 0 for v in metrics.values()):
            raise ConfigError(f"tolerance file {path}: [metrics] values must be non-negative numbers")
        return cls(float(default.get("abs", 1e-12)), float(default.get("rel", 0.0)),
                   {k: float(v) for k, v in metrics.items()})

    def allowed(self, name: str, reference: float) -> float:
        if name in self.per_metric:
            return self.per_metric[name]
        return max(self.default_abs, self.default_rel * abs(reference))


def load_metrics(path: str | Path) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "metrics" not in doc or "command" not in doc:
        raise ConfigError(f"{path}: not a metrics document")
    return doc


@dataclass(frozen=True)
class MetricDelta:
    name: str
    a: Any
    b: Any
    abs_delta: float
    rel_delta: float
    tolerance: float
    passed: bool


def compare_metrics(a: Mapping[str, Any], b: Mapping[str, Any], tolerances: Tolerances = Tolerances()) -> list[MetricDelta]:
    """Per-metric deltas; raises :class:`ConfigError` on schema mismatch."""
    if a.get("command") != b.get("command"):
        raise ConfigError(f"schema mismatch: command {a.get('command')!r} vs {b.get('command')!r}")
    fa, fb = _flatten(a["metrics"]), _flatten(b["metrics"])
    if set(fa) != set(fb):
        missing = sorted(set(fa) ^ set(fb))
        raise ConfigError(f"schema mismatch: metrics differ in keys {missing}")
    out = []
    for name in sorted(fa):
        x, y = fa[name], fb[name]
        if isinstance(x, (int, float)) and isinstance(y, (int, float)) and not isinstance(x, bool):
            d = abs(float(x) - float(y))
            rel = d / abs(float(x)) if x else (0.0 if d == 0 else math.inf)
            tol = tolerances.allowed(name, float(x))
            out.append(MetricDelta(name, x, y, d, rel, tol, d <= tol))
        else:
            same = x == y
            out.append(MetricDelta(name, x, y, 0.0 if same else math.inf, 0.0 if same else math.inf, 0.0, same))
    return out


def compare_report(deltas: Sequence[MetricDelta]) -> str:
    lines = [f"{'metric':40s} {'a':>14s} {'b':>14s} {'|delta|':>11s} {'tol':>9s}  result"]
    for d in deltas:
        fmt = lambda v: f"{v:14.8g}" if isinstance(v, (int, float)) and not isinstance(v, bool) else f"{str(v):>14s}"
        lines.append(f"{d.name:40s} {fmt(d.a)} {fmt(d.b)} {d.abs_delta:11.3e} {d.tolerance:9.2e}  "
                     f"{'pass' if d.passed else 'FAIL'}")
    failed = [d.name for d in deltas if not d.passed]
    lines.append("all metrics within tolerance" if not failed else f"FAILED: {', '.join(failed)}")
    return "\n".join(lines) + "\n"
