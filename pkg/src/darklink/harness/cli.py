"""Command-line entry point: ``darklink <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .. import __version__
from ..integrator import IntegrationError
from . import experiments as ex
from .config import (
    EXIT_CONFIG,
    EXIT_INTEGRATION,
    EXIT_OK,
    EXIT_REGRESSION,
    ConfigError,
    RunConfig,
    load_config,
    load_preset,
    preset_names,
)

RUN_COMMANDS = ("transfer", "entangle", "sweep", "circuit")


def _run_options(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="TOML run configuration")
    src.add_argument("--preset", help="shipped configuration name (see `darklink validate --list`)")
    p.add_argument("--out", type=Path, help="output directory (default: results/<command>)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for independent runs")
    p.add_argument("--seed", type=int, help="seed for synthetic shot noise")
    p.add_argument("--no-spurious-loading", action="store_true", help="disable switch-induced Q1 loading")
    space = p.add_mutually_exclusive_group()
    space.add_argument("--subspace", dest="subspace", action="store_true", default=None,
                       help="integrate in the single-excitation subspace")
    space.add_argument("--full-space", dest="subspace", action="store_false",
                       help="integrate the full two-level product space")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darklink", description="Dark-state transfer simulations and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "transfer": "state transfer with simulated process tomography",
        "entangle": "remote entanglement with simulated state tomography",
        "sweep": "parameter sweep (t_f, gbar, t1r or relay_g)",
        "circuit": "circuit-model tables for the channel and Q1 loading",
    }
    for name in RUN_COMMANDS:
        _run_options(sub.add_parser(name, help=helps[name]))

    tomo = sub.add_parser("tomography", help="reconstruct a state or process from a measurement file")
    tomo.add_argument("input", type=Path)
    tomo.add_argument("--out", type=Path)

    cmp_ = sub.add_parser("compare", help="compare two metrics files against tolerances")
    cmp_.add_argument("a", type=Path, help="reference metrics.json (or golden file)")
    cmp_.add_argument("b", type=Path, help="candidate metrics.json")
    cmp_.add_argument("--tolerances", type=Path, help="TOML tolerance file")
    cmp_.add_argument("--out", type=Path, help="write the report here as well")

    val = sub.add_parser("validate", help="check a configuration without running it")
    grp = val.add_mutually_exclusive_group(required=True)
    grp.add_argument("--config", type=Path)
    grp.add_argument("--preset")
    grp.add_argument("--list", action="store_true", help="list shipped presets")
    return parser


def _load(args: argparse.Namespace) -> tuple[RunConfig, bytes, dict]:
    cfg, raw = load_preset(args.preset) if args.preset else load_config(args.config)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_spurious_loading:
        overrides["spurious_loading"] = False
    if args.subspace is not None:
        overrides["subspace"] = args.subspace
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return replace(cfg, **overrides), raw, overrides


def _run(args: argparse.Namespace) -> int:
    cfg, raw, overrides = _load(args)
    if args.command == "transfer":
        bundle = ex.run_transfer(cfg, workers=args.workers)
    elif args.command == "entangle":
        bundle = ex.run_entangle(cfg, workers=args.workers)
    elif args.command == "sweep":
        bundle = ex.run_sweep(cfg, workers=args.workers)
    else:
        bundle = ex.run_circuit(cfg)
    out = ex.write_bundle(bundle, args.out or Path("results") / args.command, raw, overrides)
    print(f"wrote {out}")
    for key, value in sorted(bundle.document()["metrics"].items()):
        if isinstance(value, (int, float)):
            print(f"  {key} = {value:.6g}")
    return bundle.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in RUN_COMMANDS:
            return _run(args)
        if args.command == "tomography":
            bundle = ex.run_tomography(args.input)
            out = ex.write_bundle(bundle, args.out or Path("results") / "tomography")
            print(f"wrote {out}")
            return EXIT_OK
        if args.command == "compare":
            deltas = ex.compare_metrics(ex.load_metrics(args.a), ex.load_metrics(args.b),
                                        ex.Tolerances.load(args.tolerances))
            report = ex.compare_report(deltas)
            sys.stdout.write(report)
            if args.out:
                args.out.write_text(report, encoding="utf-8")
            return EXIT_OK if all(d.passed for d in deltas) else EXIT_REGRESSION
        if args.list:
            print("\n".join(preset_names()))
            return EXIT_OK
        cfg = load_preset(args.preset)[0] if args.preset else load_config(args.config)[0]
        print(ex.dumps(ex._sanitize(cfg.to_dict())), end="")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
