"""Command-line entry point.

Subcommands::

    cqdsim simulate      sweep currents, write flip fractions
    cqdsim analytic      closed-form curve
    cqdsim adiabaticity  k(t) profiles along the beam path
    cqdsim compare       R^2 of a results file against reference data

Exit codes: 0 success, 1 usage error, 2 input or parse error, 3 too many
numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .harness import (
    ReferenceDataset,
    SweepConfig,
    adiabaticity_profile,
    analytic_curve,
    config_from_mapping,
    default_currents,
    default_workers,
    fmt,
    format_adiabaticity,
    format_results,
    load_reference,
    parse_results,
    r_squared,
    run_sweep,
)
from .radau import IntegrationError

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_currents(text: str) -> tuple[float, ...]:
    """``"0.01,0.1,0.5"`` lists currents; ``"0.01:0.5:25"`` is a log-spaced grid."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            if int(n) < 1:
                raise ValueError
            return tuple(float(c) for c in np.geomspace(float(lo), float(hi), int(n)))
        return tuple(float(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid current list {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        v = -1
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an integer in [0, 2**64), got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cqdsim", description="Spin-flip Monte Carlo for a wire-field rotation chamber.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", type=Path, help="JSON file with SweepConfig fields")
        sp.add_argument("--currents", type=parse_currents, help="comma list, or lo:hi:n log grid (A)")
        sp.add_argument("--out", type=Path, help=out_help)

    s = sub.add_parser("simulate", help="run a current sweep")
    common(s, "results file (default: config output_path or stdout)")
    s.add_argument("--atoms", type=_positive_int, help="atoms per current")
    s.add_argument("--seed", type=_seed)
    s.add_argument("--reference", type=Path, help="reference data; adds R^2 and simulates at its currents")
    s.add_argument("--rel-tol", type=float)
    s.add_argument("--abs-tol", type=float)
    s.add_argument("--workers", type=_positive_int, default=None, help="processes (default: CPU count)")

    a = sub.add_parser("analytic", help="closed-form flip probability")
    common(a, "output file (default: stdout)")

    k = sub.add_parser("adiabaticity", help="adiabaticity profiles k(t)")
    common(k, "output file (default: stdout)")
    k.add_argument("--points", type=_positive_int, default=2001, help="samples per current")

    c = sub.add_parser("compare", help="R^2 of a results file against reference data")
    c.add_argument("results", type=Path)
    c.add_argument("--reference", type=Path, required=True)
    c.add_argument("--out", type=Path)
    return p


def _load_config(args) -> SweepConfig:
    cfg = SweepConfig()
    if getattr(args, "config", None) is not None:
        try:
            data = json.loads(args.config.read_text())
        except OSError as exc:
            raise OSError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValueError(f"{args.config}, line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ValueError(f"{args.config}: top level must be an object")
        cfg = config_from_mapping(data, cfg)
    over = {}
    if getattr(args, "currents", None) is not None:
        over["currents"] = args.currents
    if getattr(args, "atoms", None) is not None:
        over["atoms_per_current"] = args.atoms
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    ode = {}
    if getattr(args, "rel_tol", None) is not None:
        ode["rel_tol"] = args.rel_tol
    if getattr(args, "abs_tol", None) is not None:
        ode["abs_tol"] = args.abs_tol
    if ode:
        over["ode"] = dataclasses.replace(cfg.ode, **ode)
    return dataclasses.replace(cfg, **over) if over else cfg


def _emit(text: str, path: Path | None):
    if path is None:
        sys.stdout.write(text)
    else:
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _simulate(args) -> int:
    cfg = _load_config(args)
    reference = None
    if args.reference is not None:
        reference = load_reference(args.reference)
        cfg = dataclasses.replace(cfg, currents=tuple(sorted(reference.currents)))
    workers = args.workers or default_workers()
    result = run_sweep(cfg, workers=workers, reference=reference)
    logging.getLogger(__name__).info("sweep finished in %.1f s", result.wall_time)
    out = args.out if args.out is not None else (Path(cfg.output_path) if cfg.output_path else None)
    _emit(format_results(result), out)
    return EXIT_NUMERIC if result.failed else EXIT_OK


def _analytic(args) -> int:
    cfg = _load_config(args)
    _emit(analytic_curve(cfg.currents, cfg.geometry, cfg.constants), args.out)
    return EXIT_OK


def _adiabaticity(args) -> int:
    cfg = _load_config(args)
    currents = args.currents if args.currents is not None else default_currents(5)
    series = adiabaticity_profile(currents, cfg.geometry, cfg.constants, n_points=args.points)
    _emit(format_adiabaticity(series, cfg.geometry), args.out)
    return EXIT_OK


def _compare(args) -> int:
    reference: ReferenceDataset = load_reference(args.reference)
    _, cols = parse_results(args.results)
    currents = cols["current_A"]
    lines = [f"# results: {args.results}", f"# reference: {args.reference}", "curve,r_squared"]
    for name in ("W_num", "W_ana"):
        ok = ~np.isnan(cols[name])
        r2 = r_squared(list(zip(currents[ok], cols[name][ok])), reference)
        lines.append(f"{name},{fmt(r2)}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"simulate": _simulate, "analytic": _analytic, "adiabaticity": _adiabaticity, "compare": _compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except IntegrationError as exc:
        print(f"cqdsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"cqdsim: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
