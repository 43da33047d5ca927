"""Run configuration: TOML ingestion, validation and named presets.

Every numeric key carries its unit in the name.  Frequencies given as
``*_mhz_over_2pi`` are cycle frequencies; they become rad/ns internally.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..model import DeviceParams, mhz
from ..schedules import Protocol, Schedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_REGRESSION = 4
EXIT_PARTIAL = 5

# Named channel-loss settings (mode lifetime in ns).
LOSS_PRESETS: dict[str, float] = {
    "max": 28.7,
    "high": 49.8,
    "medium": 101.1,
    "low": 336.0,
    "minimal": 503.0,
    "intrinsic": 3410.0,
}

DEPHASING_MODELS = ("ramsey", "echo", "none")
SWEEP_METRICS = ("eta", "process_fidelity")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_SCHEMA: dict[str, dict[str, type | tuple[type, ...]]] = {
    "run": {
        "protocol": str,
        "gbar_mhz_over_2pi": (int, float),
        "t_f_ns": (int, float),
        "t_f_return_index": int,
        "relay_g_mhz_over_2pi": (int, float),
        "n_side_modes": int,
        "subspace": bool,
        "seed": int,
        "sample_interval_ns": (int, float),
        "release_ns": (int, float),
    },
    "device": {"path": str},
    "loss": {
        "preset": str,
        "t1r_ns": (int, float),
        "lossless": bool,
        "spurious_loading": bool,
        "loading_detuning_mhz_over_2pi": (int, float),
    },
    "qubits": {
        "decoherence": bool,
        "dephasing": str,
        "phase_correction_rad": (int, float),
    },
    "integrator": {
        "max_step_ns": (int, float),
        "error_tol": (int, float),
    },
    "tomography": {
        "readout_errors": bool,
        "clip_readout": bool,
        "shots": int,
    },
    "sweep": {
        "parameter": str,
        "values": list,
        "start": (int, float),
        "stop": (int, float),
        "num": int,
        "protocols": list,
        "metrics": list,
    },
}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    protocols: tuple[str, ...]
    metrics: tuple[str, ...] = ("eta",)


@dataclass(frozen=True)
class RunConfig:
    protocol: Protocol = Protocol.ADIABATIC_TRANSFER
    gbar_mhz: float = 15.0
    t_f_ns: float | None = 132.0
    t_f_return_index: int | None = None
    relay_g_mhz: float = 5.0
    release_ns: float = 20.0
    n_side_modes: int = 2
    subspace: bool = True
    seed: int = 0
    sample_interval_ns: float = 1.0
    device_path: str | None = None
    loss_preset: str | None = "intrinsic"
    t1r_ns: float | None = None
    lossless: bool = False
    spurious_loading: bool = True
    loading_detuning_mhz: float = 0.8
    decoherence: bool = True
    dephasing: str = "ramsey"
    phase_correction_rad: float | None = None
    max_step_ns: float | None = None
    error_tol: float | None = None
    readout_errors: bool = True
    clip_readout: bool = True
    shots: int = 0
    sweep: SweepSpec | None = None
    base_dir: str = field(default=".", compare=False)

    # -------------------------------------------------------------- derived

    @property
    def channel_t1r(self) -> float | None:
        """Mode lifetime in ns, or ``None`` for a lossless channel."""
        if self.lossless:
            return None
        if self.t1r_ns is not None:
            return self.t1r_ns
        return LOSS_PRESETS[self.loss_preset or "intrinsic"]

    @property
    def phase_correction(self) -> float:
        """Q2 frame correction; the ideal transfer returns ``|g> - |e>`` for ``|g> + |e>``."""
        if self.phase_correction_rad is not None:
            return self.phase_correction_rad
        return 0.0 if self.protocol.is_half else math.pi

    def device(self) -> DeviceParams:
        if self.device_path is None:
            return DeviceParams.default()
        path = Path(self.device_path)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        if not path.exists():
            raise ConfigError(f"[device] path: file {path} does not exist")
        try:
            return DeviceParams.from_toml(path)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"[device] path: {path}: {exc}") from None

    def resolved_t_f(self) -> float:
        if self.t_f_return_index is not None:
            from ..schedules import dark_state_return_times

            return dark_state_return_times(mhz(self.gbar_mhz), self.t_f_return_index)[-1]
        return float(self.t_f_ns)

    def schedule(self) -> Schedule:
        return Schedule(
            self.protocol,
            gbar=mhz(self.gbar_mhz),
            t_f=self.resolved_t_f(),
            relay_g=mhz(self.relay_g_mhz),
            release=self.release_ns if self.protocol is Protocol.ADIABATIC_HALF else 0.0,
        )

    def with_value(self, parameter: str, value: float) -> RunConfig:
        """Copy with one sweep parameter replaced."""
        if parameter == "t_f":
            return replace(self, t_f_ns=value, t_f_return_index=None)
        if parameter == "gbar":
            return replace(self, gbar_mhz=value)
        if parameter == "t1r":
            return replace(self, t1r_ns=value, lossless=False)
        if parameter == "relay_g":
            return replace(self, relay_g_mhz=value)
        raise ConfigError(f"[sweep] parameter: unknown parameter {parameter!r}")

    def parameters(self) -> dict[str, Any]:
        """Resolved parameters recorded alongside the metrics."""
        t1r = self.channel_t1r
        out = {
            "protocol": self.protocol.value,
            "gbar_mhz_over_2pi": self.gbar_mhz,
            "relay_g_mhz_over_2pi": self.relay_g_mhz,
            "t1r_ns": t1r,
            "n_side_modes": self.n_side_modes,
            "subspace": self.subspace,
            "spurious_loading": self.spurious_loading and t1r is not None,
            "loading_detuning_mhz_over_2pi": self.loading_detuning_mhz,
            "decoherence": self.decoherence,
            "dephasing": self.dephasing,
            "phase_correction_rad": self.phase_correction,
            "seed": self.seed,
            "shots": self.shots,
            "readout_errors": self.readout_errors,
        }
        if self.protocol.is_adiabatic:
            out["t_f_ns"] = self.resolved_t_f()
        if self.protocol is Protocol.ADIABATIC_HALF:
            out["release_ns"] = self.release_ns
        return out

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d.pop("base_dir")
        return d


def _check_types(data: Mapping[str, Any]) -> None:
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SCHEMA)}")
        if not isinstance(body, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key; expected one of {sorted(_SCHEMA[section])}")
            want = _SCHEMA[section][key]
            if isinstance(value, bool) and want in ((int, float), int):
                raise ConfigError(f"[{section}] {key}: expected a number, got a boolean")
            if not isinstance(value, want):
                names = want.__name__ if isinstance(want, type) else " or ".join(t.__name__ for t in want)
                raise ConfigError(f"[{section}] {key}: expected {names}, got {type(value).__name__}")


def _positive(section: str, key: str, value: float | None) -> None:
    if value is not None and not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"[{section}] {key}: must be positive and finite, got {value}")


def config_from_mapping(data: Mapping[str, Any], *, base_dir: str | Path = ".") -> RunConfig:
    _check_types(data)
    run = data.get("run", {})
    loss = data.get("loss", {})
    qubits = data.get("qubits", {})
    integ = data.get("integrator", {})
    tomo = data.get("tomography", {})
    kw: dict[str, Any] = {"base_dir": str(base_dir)}

    if "protocol" in run:
        try:
            kw["protocol"] = Protocol(run["protocol"])
        except ValueError:
            raise ConfigError(
                f"[run] protocol: {run['protocol']!r} is not one of {[p.value for p in Protocol]}"
            ) from None
    for key, attr in (("gbar_mhz_over_2pi", "gbar_mhz"), ("t_f_ns", "t_f_ns"),
                      ("relay_g_mhz_over_2pi", "relay_g_mhz"), ("sample_interval_ns", "sample_interval_ns")):
        if key in run:
            _positive("run", key, run[key])
            kw[attr] = float(run[key])
    if "release_ns" in run:
        if not (run["release_ns"] >= 0 and math.isfinite(run["release_ns"])):
            raise ConfigError(f"[run] release_ns: must be >= 0, got {run['release_ns']}")
        kw["release_ns"] = float(run["release_ns"])
    if "t_f_return_index" in run:
        if run["t_f_return_index"] < 1:
            raise ConfigError("[run] t_f_return_index: must be >= 1")
        kw["t_f_return_index"] = run["t_f_return_index"]
    if "n_side_modes" in run:
        if not 0 <= run["n_side_modes"] <= 10:
            raise ConfigError("[run] n_side_modes: must lie in 0..10")
        kw["n_side_modes"] = run["n_side_modes"]
    for key in ("subspace", "seed"):
        if key in run:
            kw[key] = run[key]

    if "path" in data.get("device", {}):
        kw["device_path"] = data["device"]["path"]

    if "preset" in loss and "t1r_ns" in loss:
        raise ConfigError("[loss] give either preset or t1r_ns, not both")
    if "preset" in loss:
        if loss["preset"] not in LOSS_PRESETS:
            raise ConfigError(f"[loss] preset: {loss['preset']!r} is not one of {sorted(LOSS_PRESETS)}")
        kw["loss_preset"] = loss["preset"]
    if "t1r_ns" in loss:
        _positive("loss", "t1r_ns", loss["t1r_ns"])
        kw["t1r_ns"], kw["loss_preset"] = float(loss["t1r_ns"]), None
    for key in ("lossless", "spurious_loading"):
        if key in loss:
            kw[key] = loss[key]
    if "loading_detuning_mhz_over_2pi" in loss:
        kw["loading_detuning_mhz"] = float(loss["loading_detuning_mhz_over_2pi"])

    if "decoherence" in qubits:
        kw["decoherence"] = qubits["decoherence"]
    if "dephasing" in qubits:
        if qubits["dephasing"] not in DEPHASING_MODELS:
            raise ConfigError(f"[qubits] dephasing: must be one of {DEPHASING_MODELS}")
        kw["dephasing"] = qubits["dephasing"]
    if "phase_correction_rad" in qubits:
        kw["phase_correction_rad"] = float(qubits["phase_correction_rad"])

    if "max_step_ns" in integ:
        _positive("integrator", "max_step_ns", integ["max_step_ns"])
        kw["max_step_ns"] = float(integ["max_step_ns"])
    if "error_tol" in integ:
        _positive("integrator", "error_tol", integ["error_tol"])
        kw["error_tol"] = float(integ["error_tol"])

    for key in ("readout_errors", "clip_readout"):
        if key in tomo:
            kw[key] = tomo[key]
    if "shots" in tomo:
        if tomo["shots"] < 0:
            raise ConfigError("[tomography] shots: must be >= 0 (0 = noiseless)")
        kw["shots"] = tomo["shots"]

    if "sweep" in data:
        kw["sweep"] = _sweep_spec(data["sweep"], kw.get("protocol", Protocol.ADIABATIC_TRANSFER))

    cfg = RunConfig(**kw)
    t1r = cfg.channel_t1r
    if t1r is not None and cfg.t1r_ns is not None:
        limit = LOSS_PRESETS["intrinsic"]
        if t1r > limit:
            raise ConfigError(f"[loss] t1r_ns: {t1r} exceeds the intrinsic mode lifetime {limit} ns")
    if cfg.protocol.is_adiabatic and cfg.t_f_return_index is None and cfg.t_f_ns is None:
        raise ConfigError("[run] t_f_ns: required for adiabatic protocols")
    return cfg


def _sweep_spec(body: Mapping[str, Any], default_protocol: Protocol) -> SweepSpec:
    from ..integrator import SWEEP_PARAMETERS

    param = body.get("parameter")
    if param not in SWEEP_PARAMETERS:
        raise ConfigError(f"[sweep] parameter: must be one of {SWEEP_PARAMETERS}")
    if "values" in body:
        if any(k in body for k in ("start", "stop", "num")):
            raise ConfigError("[sweep] give either values or start/stop/num")
        values = body["values"]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise ConfigError("[sweep] values: must be a list of numbers")
        values = tuple(float(v) for v in values)
    else:
        try:
            start, stop, num = float(body["start"]), float(body["stop"]), int(body["num"])
        except KeyError as exc:
            raise ConfigError(f"[sweep] missing {exc.args[0]} (or give values)") from None
        if num < 1:
            raise ConfigError("[sweep] num: must be >= 1")
        step = 0.0 if num == 1 else (stop - start) / (num - 1)
        values = tuple(start + i * step for i in range(num))
    protocols = body.get("protocols", [default_protocol.value])
    for p in protocols:
        try:
            Protocol(p)
        except ValueError:
            raise ConfigError(f"[sweep] protocols: unknown protocol {p!r}") from None
    metrics = body.get("metrics", ["eta"])
    for m in metrics:
        if m not in SWEEP_METRICS:
            raise ConfigError(f"[sweep] metrics: {m!r} is not one of {SWEEP_METRICS}")
    return SweepSpec(param, values, tuple(protocols), tuple(metrics))


def load_config(path: str | Path) -> tuple[RunConfig, bytes]:
    """Parse a config file; returns the config and the raw bytes for the snapshot."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(raw, base_dir=path.parent, source=str(path)), raw


def parse_config(raw: bytes, *, base_dir: str | Path = ".", source: str = "<config>") -> RunConfig:
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except UnicodeDecodeError:
        raise ConfigError(f"{source}: not UTF-8 text") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return config_from_mapping(data, base_dir=base_dir)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def preset_names() -> list[str]:
    root = resources.files("darklink.data").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> tuple[RunConfig, bytes]:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    raw = resources.files("darklink.data").joinpath("presets", f"{name}.toml").read_bytes()
    return parse_config(raw, source=f"preset {name}"), raw
