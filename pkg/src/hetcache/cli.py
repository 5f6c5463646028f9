"""Command-line entry point.

    hetcache figure fig1 --out fig1.csv
    hetcache figure fig4 --fraction 0.5 --sweep-start 5000 --sweep-stop 20000 --sweep-step 100
    hetcache validate --seed 7
    hetcache end-to-end --config run.yaml --runs 200 --delta 0.1 --N 5

Options may also come from a YAML file given with ``--config``; flags win.
"""
from __future__ import annotations

import argparse
import logging
import sys
import typing
from dataclasses import fields

import yaml

from .experiments import (
    DEFAULT_SWEEPS,
    ExperimentSpec,
    Kind,
    run_end_to_end,
    run_figure,
    run_validation,
    spec_from_mapping,
    write_csv,
)
from .model import ConfigError, InsufficientDataError, NetworkConfig, ParameterDomainError

_SKIP = {"kind", "config", "sweep", "profile"}
_FIGURES = [k.value for k in Kind if k.value.startswith("fig")]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _scalar_type(annotation):
    text = str(annotation)
    if "int" in text and "float" not in text:
        return int
    if "float" in text:
        return float
    return str


def _add_field_options(parser: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(ExperimentSpec)
    for f in fields(ExperimentSpec):
        if f.name in _SKIP:
            continue
        parser.add_argument(_flag(f.name), dest=f.name, type=_scalar_type(hints[f.name]), default=None)
    net = parser.add_argument_group("network parameters")
    for f in fields(NetworkConfig):
        net.add_argument(_flag(f.name), dest=f"config.{f.name}", type=type(f.default), default=None)
    sw = parser.add_argument_group("sweep")
    sw.add_argument("--sweep-name", dest="sweep.name", default=None)
    for part in ("start", "stop", "step"):
        sw.add_argument(f"--sweep-{part}", dest=f"sweep.{part}", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetcache", description="Caching bounds and simulations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fig = sub.add_parser("figure", help="bound sweep, fig1 to fig5")
    fig.add_argument("figure", choices=_FIGURES)
    sub.add_parser("validate", help="closed-form loss against Monte Carlo")
    sub.add_parser("end-to-end", help="learn the profile from simulated requests and score the caching")
    for p in sub.choices.values():
        p.add_argument("--config", dest="config_file", default=None, help="YAML file of experiment fields")
        p.add_argument("--out", default=None, help="CSV destination (default: stdout)")
        _add_field_options(p)
    return parser


def _merge(args: argparse.Namespace) -> dict:
    data = {}
    if args.config_file:
        with open(args.config_file, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{args.config_file}: expected a mapping at top level")
    for key, value in vars(args).items():
        if value is None or key in ("command", "figure", "config_file", "out", "verbose"):
            continue
        if "." in key:
            group, name = key.split(".", 1)
            data.setdefault(group, {})
            data[group] = dict(data[group] or {}, **{name: value})
        else:
            data[key] = value
    return data


def _spec(args) -> ExperimentSpec:
    kind = {"figure": None, "validate": Kind.VALIDATE_THM1, "end-to-end": Kind.END_TO_END}[args.command]
    kind = kind or Kind(args.figure)
    data = _merge(args)
    sweep = data.get("sweep")
    if sweep is not None and set(sweep) != {"name", "start", "stop", "step"}:
        # partial override of the default range
        base = DEFAULT_SWEEPS.get(kind)
        if base is None:
            raise ValueError(f"{kind.value} takes no sweep")
        data["sweep"] = {"name": base.name, "start": base.start, "stop": base.stop, "step": base.step, **sweep}
    return spec_from_mapping(kind, data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = _spec(args)
        if args.command == "figure":
            write_csv(run_figure(spec), args.out)
            return 0
        if args.command == "validate":
            report = run_validation(spec)
            write_csv(report.table, args.out)
            if not report.passed:
                print("FAIL: " + "; ".join(report.failures), file=sys.stderr)
                return 1
            print(f"PASS: {len(report.table.rows)} cases", file=sys.stderr)
            return 0
        report = run_end_to_end(spec)
        write_csv(report.table(), args.out)
        print(
            f"tau={report.tau!r}s epsilon={report.epsilon!r}s optimum={report.optimum_loss!r}s "
            f"violation_rate={report.violation_rate!r} over {len(report.runs)} runs",
            file=sys.stderr,
        )
        return 0
    except (ConfigError, InsufficientDataError, ParameterDomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
