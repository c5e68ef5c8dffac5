"""Command-line entry points: ``simulate``, ``identify``, ``ocp`` and ``check``.

Exit codes: 0 success, 1 failed invariant check, 2 configuration error,
3 simulation failure, 4 malformed dataset, 5 infeasible identification result.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .config import (
    THETA_FIELDS,
    CellParameters,
    ConfigError,
    apply_overrides,
    example_config_path,
    load_config,
    save_config,
)
from .coreshell import Direction
from .identification import (
    DEFAULT_BOUNDS,
    FAILURES,
    DatasetError,
    IdentificationProblem,
    PSOSettings,
    identify,
    simulate_dataset,
    write_bounds_table,
    write_report,
)
from . import io
from .simulator import AmbiguousPhaseError, CurrentProfile, SimulationOptions, initial_state, simulate
from .voltage import VoltageError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_DATASET = 4
EXIT_INFEASIBLE = 5

OUTPUT_ENV = "CORESHELL_ESPM_OUTPUT_DIR"

log = logging.getLogger("coreshell_espm")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _positive_fraction(text: str) -> float:
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coreshell-espm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            p.add_argument("--config", type=Path, default=None,
                           help="cell configuration JSON (default: bundled example cell)")
            p.add_argument("--override", type=_override, action="append", default=[], metavar="KEY=VALUE",
                           help="replace one configuration field; repeatable")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: ${OUTPUT_ENV} or ./out)")

    s = sub.add_parser("simulate", help="run one current profile and write the trace")
    common(s)
    s.add_argument("--crate", type=_positive_fraction, help="constant C-rate, e.g. 1/12")
    s.add_argument("--mode", choices=("discharge", "charge"), help="direction of the C-rate run")
    s.add_argument("--schedule", type=Path, help="CSV with t_s,I_A rows (piecewise-constant current)")
    s.add_argument("--soc0", type=float, default=None,
                   help="initial SOC (default 1 for discharge, 0 for charge)")
    s.add_argument("--v-min", type=float, default=2.5, help="lower voltage cutoff [V]")
    s.add_argument("--v-max", type=float, default=3.65, help="upper voltage cutoff [V]")
    s.add_argument("--dt", type=float, default=60.0, help="output sampling interval [s]")
    s.add_argument("--plot", action="store_true", help="also write trace.svg")

    i = sub.add_parser("identify", help="fit the parameter vector to charge and discharge data")
    common(i)
    i.add_argument("--discharge", type=Path, required=True, help="discharge dataset CSV (t_s,I_A,V_V)")
    i.add_argument("--charge", type=Path, required=True, help="charge dataset CSV (t_s,I_A,V_V)")
    i.add_argument("--discharge-soc0", type=float, default=1.0)
    i.add_argument("--charge-soc0", type=float, default=0.0)
    i.add_argument("--bounds", type=Path, default=None,
                   help="CSV with symbol,lower_bound,upper_bound (default: built-in bounds)")
    i.add_argument("--swarm", type=int, default=60)
    i.add_argument("--iterations", type=int, default=200)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--workers", type=int, default=None, help="parallel evaluations (default: CPU count)")
    i.add_argument("--no-plot", action="store_true", help="skip the model-vs-data SVGs")

    o = sub.add_parser("ocp", help="tabulate the open-circuit potentials")
    common(o, config=False)
    o.add_argument("--negative", default="kumaresan2008", help="graphite OCP correlation")

    c = sub.add_parser("check", help="run the invariant suite as an acceptance gate")
    common(c)
    return parser


def _output_dir(arg: Path | None) -> Path:
    out = arg or Path(os.environ.get(OUTPUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> tuple[CellParameters, dict[str, str]]:
    path = args.config or example_config_path()
    overrides = dict(args.override)
    try:
        p = load_config(path)
        return apply_overrides(p, overrides), overrides
    except FileNotFoundError as exc:
        raise CliError(f"config not found: {path}", EXIT_CONFIG) from exc
    except (ConfigError, ValueError, OSError) as exc:
        raise CliError(f"invalid config {path}: {exc}", EXIT_CONFIG) from exc


def _arguments(args) -> dict:
    skip = {"func", "override"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def run_simulate(args) -> int:
    p, overrides = _load(args)
    if args.schedule is None and (args.crate is None or args.mode is None):
        raise CliError("simulate needs --crate and --mode, or --schedule", EXIT_CONFIG)
    try:
        if args.schedule is not None:
            profile = io.read_schedule(args.schedule, args.v_min, args.v_max)
            nonzero = [I for I in profile.currents if I != 0]
            direction = Direction.parse(args.mode) if args.mode else (
                Direction.DISCHARGE if not nonzero or nonzero[0] > 0 else Direction.CHARGE)
        else:
            direction = Direction.parse(args.mode)
            profile = CurrentProfile.c_rate(args.crate, direction, p.Q_nom, V_min=args.v_min, V_max=args.v_max)
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_DATASET) from exc
    soc0 = args.soc0 if args.soc0 is not None else (1.0 if direction is Direction.DISCHARGE else 0.0)
    try:
        init = initial_state(soc0, direction, p)
    except (AmbiguousPhaseError, ValueError) as exc:
        raise CliError(f"initial state: {exc}", EXIT_CONFIG) from exc
    try:
        trace = simulate(profile, init, p, SimulationOptions(dt_out=args.dt))
    except FAILURES as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIMULATION) from exc

    out = _output_dir(args.out)
    outputs = [out / "trace.csv"]
    io.write_trace(trace, outputs[0])
    if args.plot:
        outputs.append(out / "trace.svg")
        io.plot_trace(trace, outputs[-1])
    inputs = [args.schedule] if args.schedule else []
    io.write_manifest(out / "manifest.json", "simulate", p, overrides, None, _arguments(args), inputs, outputs)
    print(f"{len(trace)} samples, termination {trace.termination}, "
          f"{abs(trace.q[-1]):.3f} Ah; wrote {outputs[0]}")
    for t, src, dst in trace.events:
        print(f"  t = {t:9.1f} s  {src} -> {dst}")
    return EXIT_OK


def run_identify(args) -> int:
    p, overrides = _load(args)
    try:
        datasets = (
            io.read_dataset(args.discharge, Direction.DISCHARGE, p.Q_nom, args.discharge_soc0, "discharge"),
            io.read_dataset(args.charge, Direction.CHARGE, p.Q_nom, args.charge_soc0, "charge"),
        )
        bounds = io.read_bounds(args.bounds) if args.bounds else dict(DEFAULT_BOUNDS)
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_DATASET) from exc
    try:
        problem = IdentificationProblem(
            datasets, p, bounds,
            pso=PSOSettings(swarm_size=args.swarm, iterations=args.iterations, seed=args.seed,
                            workers=args.workers))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc

    result = identify(problem, callback=lambda it, best: log.info("iteration %d: best %.6g", it, best))
    out = _output_dir(args.out)
    outputs = [out / "identification.json", out / "bounds_table.csv"]
    write_report(result, outputs[0])
    write_bounds_table(result, problem, outputs[1])
    try:
        identified = p.with_theta([result.theta[k] for k in THETA_FIELDS])
    except ConfigError as exc:
        # an infeasible best candidate may break the parameter ordering; report it without a config
        log.warning("identified vector is not a valid configuration: %s", exc)
        identified = None
    else:
        outputs.append(out / "identified_config.json")
        save_config(identified, outputs[-1])
    if identified is not None and not args.no_plot and result.breakdown.failed is None:
        for ds in datasets:
            trace = simulate_dataset(identified, ds, problem.options)
            outputs.append(out / f"fit_{ds.name}.svg")
            io.plot_fit(ds, trace, outputs[-1])
    io.write_manifest(out / "manifest.json", "identify", p, overrides, args.seed, _arguments(args),
                      [args.discharge, args.charge] + ([args.bounds] if args.bounds else []), outputs)
    print(f"J = {result.cost:.6g}, penalty = {result.constraints.penalty:.3g}, "
          f"{result.evaluations} evaluations in {result.wall_time:.1f} s; wrote {outputs[0]}")
    if not result.feasible:
        reasons = result.breakdown.failed or ", ".join(
            k for k, v in result.constraints.violations.items() if v > 0)
        print(f"infeasible result: {reasons}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def run_ocp(args) -> int:
    out = _output_dir(args.out)
    path = out / "ocp.csv"
    try:
        io.write_ocp(path, args.negative)
    except (ValueError, VoltageError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    io.write_manifest(out / "manifest.json", "ocp", None, {}, None, _arguments(args), [], [path])
    print(f"wrote {path}")
    return EXIT_OK


def run_check(args) -> int:
    from .checks import invariant_suite

    p, overrides = _load(args)
    try:
        results = invariant_suite(p)
    except FAILURES as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIMULATION) from exc
    out = _output_dir(args.out)
    path = out / "check.txt"
    lines = [r.line() for r in results]
    path.write_text("\n".join(lines) + "\n")
    io.write_manifest(out / "manifest.json", "check", p, overrides, None, _arguments(args), [], [path])
    print("\n".join(lines))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


COMMANDS = {"simulate": run_simulate, "identify": run_identify, "ocp": run_ocp, "check": run_check}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
