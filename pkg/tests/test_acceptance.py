"""Acceptance gate: one PASS/FAIL line per primary criterion.

The lines are collected in ``ACCEPTANCE_LINES`` and printed in the terminal
summary (see conftest), so they appear even when output capture is on.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from coreshell_espm import checks
from coreshell_espm.config import THETA_FIELDS
from coreshell_espm.coreshell import Direction
from coreshell_espm.identification import IdentificationProblem, PSOSettings, identify, write_report
from coreshell_espm.io import read_dataset, twin_fixture_dir

ACCEPTANCE_LINES: list[str] = []

DIRECTIONS = (Direction.DISCHARGE, Direction.CHARGE)


def _report(criterion: str, results: list[checks.CheckResult]) -> bool:
    ok = all(r.passed for r in results)
    parts = "; ".join(f"{'ok' if r.passed else 'FAILED'} {r.name} = {r.value:.3g} "
                      f"(limit {r.threshold:.3g}){' ' + r.detail if r.detail else ''}" for r in results)
    line = f"{'PASS' if ok else 'FAIL'}  {criterion} | {parts}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def cycle_runs(p):
    return {d: checks.c12_run(p, d, record_steps=True) for d in DIRECTIONS}


def test_conservation_suite(p, cycle_runs):
    results = []
    for d in DIRECTIONS:
        results += checks.conservation(cycle_runs[d], p)
    assert _report("conservation suite", results)


def test_moving_boundary_lifecycle(p, cycle_runs):
    results = []
    for d in DIRECTIONS:
        results += checks.lifecycle(cycle_runs[d], p)
    assert _report("moving-boundary lifecycle", results)


def test_plateau_and_hysteresis(cycle_runs):
    results = [
        checks.plateau_band(cycle_runs[Direction.DISCHARGE], (3.20, 3.38)),
        checks.plateau_band(cycle_runs[Direction.CHARGE], (3.40, 3.55)),
        checks.ocp_hysteresis(),
    ]
    assert _report("plateau bands and OCP hysteresis", results)


def test_discretization_oracles(p):
    results = [
        checks.frozen_shell_oracle(p),
        checks.matrix_equivalence(p),
        checks.grid_convergence(p, Direction.DISCHARGE),
        checks.grid_convergence(p, Direction.CHARGE),
        checks.half_space_oracle(p),
    ]
    assert _report("discretization oracles", results)


def test_boundary_flux_identity(p, cycle_runs):
    results = [checks.flux_identity(cycle_runs[d], p) for d in DIRECTIONS]
    assert _report("boundary-flux identity", results)


@pytest.mark.slow
def test_twin_identification(p, tmp_path_factory):
    """Full swarm (60 x 200, seed 0) on the bundled synthetic datasets."""
    d = twin_fixture_dir()
    datasets = (read_dataset(d / "discharge.csv", "discharge", p.Q_nom, 1.0),
                read_dataset(d / "charge.csv", "charge", p.Q_nom, 0.0))
    problem = IdentificationProblem(datasets, p, pso=PSOSettings(swarm_size=60, iterations=200, seed=0))
    started = time.perf_counter()
    result = identify(problem)
    wall = time.perf_counter() - started
    out = Path(os.environ.get("CORESHELL_ESPM_OUTPUT_DIR") or tmp_path_factory.mktemp("twin"))
    out.mkdir(parents=True, exist_ok=True)
    write_report(result, out / "twin_identification.json")

    true = dict(zip(THETA_FIELDS, p.theta_vector()))
    results = [checks._below("J", result.cost, 5e-3)]
    for name in ("theta_p_alpha", "theta_p_beta", "theta_n_100", "theta_n_0", "theta_p_100", "theta_p_0"):
        err = abs(result.theta[name] - true[name])
        results.append(checks._below(f"|{name} error|", err, 0.02 + 1e-12,
                                     f"identified {result.theta[name]:.4f}, true {true[name]:.4f}"))
    factor = max(result.theta["D_s_p"] / true["D_s_p"], true["D_s_p"] / result.theta["D_s_p"])
    results.append(checks._below("D_s_p ratio", factor, 2.0 + 1e-12,
                                 f"identified {result.theta['D_s_p']:.3g}, true {true['D_s_p']:.3g}"))
    results.append(checks.CheckResult("constraint penalty", result.constraints.penalty, 0.0,
                                      result.constraints.penalty == 0.0))
    results.append(checks._below("wall-clock [s]", wall, 1800.0,
                                 f"{problem.pso.swarm_size * (problem.pso.iterations + 1)} evaluations "
                                 f"on {os.cpu_count()} CPU(s)"))
    assert _report("twin-experiment identification", results)
