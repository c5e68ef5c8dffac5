"""Constrained identification of the parameter vector from charge/discharge data.

The objective combines a relative-voltage RMS and two electrode-SOC RMS terms
per dataset; constraints enter as exterior quadratic penalties and the search
is a global-best particle swarm over the bound box.
"""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .config import THETA_FIELDS, CellParameters, ConfigError, capacity
from .coreshell import Direction, NumericalIntegrityError, SignReversalError
from .electrolyte import ElectrolyteError
from .model import CellModel
from .particle import SaturationError
from .simulator import (
    AmbiguousPhaseError,
    CurrentProfile,
    SimulationError,
    SimulationOptions,
    SimulationTrace,
    initial_state,
    simulate,
)
from .voltage import VoltageError

log = logging.getLogger(__name__)

# (lower, upper, unit) for every identified parameter
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "R_n": (1e-6, 2e-5),
    "R_p": (1e-8, 1e-5),
    "A_cell": (1.41, 1.73),
    "D_s_n": (1e-15, 1e-10),
    "D_s_p": (1e-18, 1e-11),
    "theta_n_100": (0.7, 0.95),
    "theta_n_0": (1e-4, 0.2),
    "theta_p_100": (0.05, 0.15),
    "theta_p_0": (0.8, 1.0),
    "theta_p_alpha": (0.1, 0.2),
    "theta_p_beta": (0.8, 0.9),
    "R_l": (1e-3, 0.1),
}
UNITS = {
    "R_n": "m", "R_p": "m", "A_cell": "m^2", "D_s_n": "m^2/s", "D_s_p": "m^2/s",
    "theta_n_100": "-", "theta_n_0": "-", "theta_p_100": "-", "theta_p_0": "-",
    "theta_p_alpha": "-", "theta_p_beta": "-", "R_l": "Ohm",
}

FAILURES = (SimulationError, SaturationError, NumericalIntegrityError, SignReversalError,
            AmbiguousPhaseError, ElectrolyteError, VoltageError, ConfigError,
            ArithmeticError, FloatingPointError)


class DatasetError(ValueError):
    """Malformed dataset; ``row`` is the 1-based data row when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class Dataset:
    """One constant-direction cycling record."""

    t: np.ndarray  # s
    I: np.ndarray  # A, discharge positive
    V: np.ndarray  # V
    direction: Direction
    Q_nom: float  # Ah
    soc0: float
    name: str = ""

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        I = np.asarray(self.I, dtype=float)
        V = np.asarray(self.V, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "direction", Direction.parse(self.direction))
        if not (t.shape == I.shape == V.shape) or t.ndim != 1 or len(t) < 2:
            raise DatasetError("t, I and V must be 1-D arrays of equal length >= 2")
        for name, arr in (("t_s", t), ("I_A", I), ("V_V", V)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if len(bad):
                raise DatasetError(f"non-finite {name}", row=int(bad[0]) + 1)
        step = np.flatnonzero(np.diff(t) <= 0)
        if len(step):
            raise DatasetError("time must be strictly increasing", row=int(step[0]) + 2)
        expected = int(self.direction)
        wrong = np.flatnonzero(np.sign(I) == -expected)
        if len(wrong):
            raise DatasetError(f"current changes sign in a {self.direction.name.lower()} dataset",
                               row=int(wrong[0]) + 1)
        if np.any(V <= 0):
            raise DatasetError("voltage must be positive", row=int(np.flatnonzero(V <= 0)[0]) + 1)
        if self.Q_nom <= 0:
            raise DatasetError("Q_nom must be positive")
        if not 0.0 <= self.soc0 <= 1.0:
            raise DatasetError("soc0 must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.t)


def soc_exp(dataset: Dataset) -> np.ndarray:
    """Coulomb-counted SOC on the dataset timestamps (trapezoidal)."""
    if dataset.Q_nom <= 0:
        raise ValueError("Q_nom must be positive")
    charge = cumulative_trapezoid(dataset.I, dataset.t, initial=0.0)
    return dataset.soc0 - charge / (3600.0 * dataset.Q_nom)


def dataset_profile(dataset: Dataset, merge_rtol: float = 1e-3) -> CurrentProfile:
    """Piecewise-constant profile; consecutive samples within ``merge_rtol`` share a segment.

    Sample ``k`` holds its current on ``[t_k, t_{k+1})``. Merged segments carry the
    time-weighted mean so the delivered charge is unchanged.
    """
    t, I = dataset.t, dataset.I
    dt = np.diff(t)
    held = I[:-1]
    edges = [0]
    ref = held[0]
    for k in range(1, len(held)):
        if abs(held[k] - ref) > merge_rtol * max(abs(ref), 1e-12):
            edges.append(k)
            ref = held[k]
    edges.append(len(held))
    times = t[edges]
    currents = np.array([np.dot(held[a:b], dt[a:b]) / dt[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])
    return CurrentProfile(times, currents)


@dataclass(frozen=True)
class PSOSettings:
    swarm_size: int = 60
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    workers: int | None = None  # None: one per available CPU

    def __post_init__(self) -> None:
        if self.swarm_size < 1 or self.iterations < 0:
            raise ValueError("swarm_size >= 1 and iterations >= 0 required")


@dataclass(frozen=True)
class IdentificationProblem:
    datasets: tuple[Dataset, ...]
    base: CellParameters  # supplies the fixed constants and the discretization
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    Q_lower: float | None = None  # Ah; default Q_nom * 0.9
    Q_upper: float | None = None  # Ah; default Q_nom * 1.1
    penalty_weight: float = 1e2
    failure_cost: float = 1e3
    pso: PSOSettings = PSOSettings()
    options: SimulationOptions = SimulationOptions(rtol=1e-6, atol=1e-6)
    log_scaled: tuple[str, ...] | None = None  # default: bounds spanning > 2 decades

    def __post_init__(self) -> None:
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "bounds", {k: tuple(map(float, v)) for k, v in self.bounds.items()})
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if set(self.bounds) != set(THETA_FIELDS):
            raise ValueError(f"bounds must cover exactly {', '.join(THETA_FIELDS)}")
        for name, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ValueError(f"bounds for {name} are not ordered")
        if min(self.weights) < 0:
            raise ValueError("weights must be non-negative")
        q_nom = self.base.Q_nom
        if self.Q_lower is None:
            object.__setattr__(self, "Q_lower", 0.9 * q_nom)
        if self.Q_upper is None:
            object.__setattr__(self, "Q_upper", 1.1 * q_nom)
        if not self.Q_lower < self.Q_upper:
            raise ValueError("Q_lower < Q_upper required")
        if self.log_scaled is None:
            logs = tuple(n for n in THETA_FIELDS
                         if self.bounds[n][0] > 0 and self.bounds[n][1] / self.bounds[n][0] > 100.0)
            object.__setattr__(self, "log_scaled", logs)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in THETA_FIELDS])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in THETA_FIELDS])

    # unit-cube coordinates used by the swarm
    def from_unit(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.lower, self.upper
        theta = lo + u * (hi - lo)
        for i, name in enumerate(THETA_FIELDS):
            if name in self.log_scaled:
                theta[i] = 10.0 ** (np.log10(lo[i]) + u[i] * (np.log10(hi[i]) - np.log10(lo[i])))
        return np.clip(theta, lo, hi)

    def to_unit(self, theta: Sequence[float]) -> np.ndarray:
        lo, hi = self.lower, self.upper
        theta = np.asarray(theta, dtype=float)
        u = (theta - lo) / (hi - lo)
        for i, name in enumerate(THETA_FIELDS):
            if name in self.log_scaled:
                u[i] = (np.log10(theta[i]) - np.log10(lo[i])) / (np.log10(hi[i]) - np.log10(lo[i]))
        return u


@dataclass
class CostBreakdown:
    voltage: dict[str, float]
    soc_n: dict[str, float]
    soc_p: dict[str, float]
    per_dataset: dict[str, float]
    total: float
    failed: str | None = None

    def to_dict(self) -> dict:
        return {"voltage": self.voltage, "soc_n": self.soc_n, "soc_p": self.soc_p,
                "per_dataset": self.per_dataset, "total": self.total, "failed": self.failed}


@dataclass
class ConstraintReport:
    """Normalized violations (positive = violated) and the resulting penalty."""

    violations: dict[str, float]
    capacities: dict[str, float]
    penalty: float

    @property
    def feasible(self) -> bool:
        return all(v <= 0.0 for v in self.violations.values())

    def to_dict(self) -> dict:
        return {"violations": self.violations, "capacities_Ah": self.capacities,
                "penalty": self.penalty, "feasible": self.feasible}


@dataclass
class IdentificationResult:
    theta: dict[str, float]
    cost: float
    objective: float  # cost + penalty
    breakdown: CostBreakdown
    constraints: ConstraintReport
    history: list[dict]
    evaluations: int
    seed: int
    wall_time: float

    @property
    def feasible(self) -> bool:
        return self.constraints.feasible and self.breakdown.failed is None

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "J": self.cost,
            "objective": self.objective,
            "feasible": self.feasible,
            "breakdown": self.breakdown.to_dict(),
            "constraints": self.constraints.to_dict(),
            "history": self.history,
            "evaluations": self.evaluations,
            "seed": self.seed,
        }


def _dataset_key(i: int, ds: Dataset) -> str:
    return ds.name or f"{ds.direction.name.lower()}_{i}"


def simulate_dataset(p: CellParameters, dataset: Dataset, options: SimulationOptions | None = None,
                     model: CellModel | None = None) -> SimulationTrace:
    """Replay a dataset's current through the model, sampled at its timestamps.

    No voltage cutoffs are applied: the model must cover the recorded window.
    """
    profile = dataset_profile(dataset)
    init = initial_state(dataset.soc0, dataset.direction, p)
    trace = simulate(profile, init, p, options, model, t_eval=dataset.t)
    if len(trace) != len(dataset):
        raise SimulationError(f"simulation stopped at t = {trace.t[-1]:.1f} s ({trace.termination})")
    return trace


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def cost_terms(dataset: Dataset, trace: SimulationTrace, weights=(1.0, 1.0, 1.0)) -> tuple[float, float, float, float]:
    """``(voltage, soc_n, soc_p, J_k)`` for one dataset."""
    soc = soc_exp(dataset)
    tv = _rms((dataset.V - trace.V) / dataset.V)
    tn = _rms(soc - trace.soc_n)
    tp = _rms(soc - trace.soc_p)
    w1, w2, w3 = weights
    return tv, tn, tp, w1 * tv + w2 * tn + w3 * tp


def cost(theta: Sequence[float], problem: IdentificationProblem,
         return_traces: bool = False):
    """Multi-objective cost summed over datasets; a failed simulation costs ``failure_cost``.

    Returns ``(J, breakdown)`` or ``(J, breakdown, traces)``.
    """
    keys = [_dataset_key(i, ds) for i, ds in enumerate(problem.datasets)]
    bd = CostBreakdown({}, {}, {}, {}, 0.0)
    traces: dict[str, SimulationTrace] = {}
    try:
        p = problem.base.with_theta(theta)
        model = CellModel(p)
        for key, ds in zip(keys, problem.datasets):
            with _quiet_solver():
                trace = simulate_dataset(p, ds, problem.options, model)
            tv, tn, tp, jk = cost_terms(ds, trace, problem.weights)
            if not np.isfinite(jk):
                raise SimulationError("non-finite cost")
            bd.voltage[key], bd.soc_n[key], bd.soc_p[key], bd.per_dataset[key] = tv, tn, tp, jk
            traces[key] = trace
        bd.total = float(sum(bd.per_dataset.values()))
    except FAILURES as exc:
        bd.total = problem.failure_cost
        bd.failed = f"{type(exc).__name__}: {exc}"
        traces = {}
    if return_traces:
        return bd.total, bd, traces
    return bd.total, bd


def constraints(theta: Sequence[float], traces: Mapping[str, SimulationTrace] | None,
                problem: IdentificationProblem) -> ConstraintReport:
    """Slack report for the window-ordering, moving-boundary and capacity constraints."""
    th = dict(zip(THETA_FIELDS, (float(v) for v in theta)))
    viol: dict[str, float] = {
        "b_theta_beta_le_theta_p0": th["theta_p_beta"] - th["theta_p_0"],
        "c_theta_alpha_ge_theta_p100": th["theta_p_100"] - th["theta_p_alpha"],
    }
    rho = problem.base.rho_frac  # as a fraction of R_p
    worst_end = -rho
    worst_sign = 0.0
    for trace in (traces or {}).values():
        rp = trace.rp_over_Rp
        worst_sign = max(worst_sign, float(np.max(-rp[:-1], initial=0.0)))
        worst_end = max(worst_end, float(rp[-1]) - rho)
    viol["d_rp_nonnegative"] = worst_sign
    viol["d_rp_final_le_rho"] = worst_end
    # capacity formula only depends on the windows and geometry, not on the dataset
    q: dict[str, float] = {}
    try:
        p = problem.base.with_theta(theta)
    except ConfigError:
        p = None
    for electrode in ("n", "p"):
        if p is not None:
            q[electrode] = capacity(p, electrode)
        else:
            q[electrode] = _capacity_unchecked(problem.base, th, electrode)
        viol[f"e_Q_{electrode}_lower"] = (problem.Q_lower - q[electrode]) / problem.base.Q_nom
        viol[f"e_Q_{electrode}_upper"] = (q[electrode] - problem.Q_upper) / problem.base.Q_nom
    penalty = problem.penalty_weight * sum(max(v, 0.0) ** 2 for v in viol.values())
    return ConstraintReport(viol, q, float(penalty))


def _capacity_unchecked(base: CellParameters, th: Mapping[str, float], electrode: str) -> float:
    if electrode == "n":
        window = abs(th["theta_n_100"] - th["theta_n_0"])
        return base.nu_n * base.F * base.L_n * th["A_cell"] * base.c_s_n_max * window / 3600.0
    window = abs(th["theta_p_100"] - th["theta_p_0"])
    return base.nu_p * base.F * base.L_p * th["A_cell"] * base.c_s_p_max * window / 3600.0


def objective(theta: Sequence[float], problem: IdentificationProblem) -> tuple[float, float, float]:
    """``(J + penalty, J, penalty)``; pure in its arguments so it can run in any process."""
    J, _, traces = cost(theta, problem, return_traces=True)
    report = constraints(theta, traces, problem)
    return J + report.penalty, J, report.penalty


@contextlib.contextmanager
def _quiet_solver():
    """Silence solver chatter from candidates that fail to integrate.

    The compiled LSODA core reports convergence failures on file descriptor 1,
    below Python's ``sys.stdout``, so the descriptor itself is redirected.
    """
    sys.stdout.flush()
    saved = os.dup(1)
    try:
        with open(os.devnull, "w") as null, warnings.catch_warnings():
            warnings.simplefilter("ignore")
            os.dup2(null.fileno(), 1)
            yield
    finally:
        os.dup2(saved, 1)
        os.close(saved)


def _silence_worker() -> None:
    # compiled solver output is buffered and flushed at process exit, outside any redirect
    null = os.open(os.devnull, os.O_WRONLY)
    os.dup2(null, 1)
    os.close(null)


def _evaluate(args) -> tuple[float, float, float]:
    theta, problem = args
    return objective(theta, problem)


def available_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


class _Evaluator:
    """Evaluates a batch of candidates in order, in-process or on a worker pool."""

    def __init__(self, problem: IdentificationProblem):
        self.problem = problem
        self.workers = max(1, problem.pso.workers or available_cpus())
        self.pool = ProcessPoolExecutor(self.workers, initializer=_silence_worker) if self.workers > 1 else None

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        jobs = [(theta, self.problem) for theta in thetas]
        if self.pool is None:
            results = [_evaluate(job) for job in jobs]
        else:
            results = list(self.pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * self.workers))))
        return np.array(results)

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


def identify(problem: IdentificationProblem, initial: Sequence[Sequence[float]] | None = None,
             callback=None) -> IdentificationResult:
    """Global-best particle swarm over the bound box.

    Positions live in the unit cube (log-spaced for wide bounds). Particles that
    leave the box are clamped and the offending velocity components zeroed.
    ``initial`` optionally seeds the first particles.
    """
    s = problem.pso
    rng = np.random.default_rng(s.seed)
    n_dim = len(THETA_FIELDS)
    x = rng.uniform(0.0, 1.0, size=(s.swarm_size, n_dim))
    v = rng.uniform(-0.1, 0.1, size=(s.swarm_size, n_dim))
    if initial is not None:
        seeds = np.clip(np.array([problem.to_unit(t) for t in initial]), 0.0, 1.0)
        x[: len(seeds)] = seeds[: s.swarm_size]

    started = time.perf_counter()
    evaluate = _Evaluator(problem)
    history: list[dict] = []
    try:
        scores = evaluate(np.array([problem.from_unit(u) for u in x]))
        f = scores[:, 0]
        p_best, p_val = x.copy(), f.copy()
        g = int(np.argmin(p_val))
        g_best, g_val = p_best[g].copy(), float(p_val[g])
        history.append(_history_entry(0, f, g_val))
        for it in range(1, s.iterations + 1):
            r1 = rng.uniform(size=x.shape)
            r2 = rng.uniform(size=x.shape)
            v = s.inertia * v + s.cognitive * r1 * (p_best - x) + s.social * r2 * (g_best - x)
            x = x + v
            out = (x < 0.0) | (x > 1.0)
            x = np.clip(x, 0.0, 1.0)
            v[out] = 0.0
            scores = evaluate(np.array([problem.from_unit(u) for u in x]))
            f = scores[:, 0]
            better = f < p_val
            p_best[better], p_val[better] = x[better], f[better]
            g = int(np.argmin(p_val))
            if p_val[g] < g_val:
                g_best, g_val = p_best[g].copy(), float(p_val[g])
            history.append(_history_entry(it, f, g_val))
            if callback is not None:
                callback(it, g_val)
            log.info("iteration %d: best %.6g", it, g_val)
    finally:
        evaluate.close()

    theta_best = problem.from_unit(g_best)
    J, breakdown, traces = cost(theta_best, problem, return_traces=True)
    report = constraints(theta_best, traces, problem)
    return IdentificationResult(
        theta=dict(zip(THETA_FIELDS, map(float, theta_best))),
        cost=float(J),
        objective=float(J + report.penalty),
        breakdown=breakdown,
        constraints=report,
        history=history,
        evaluations=s.swarm_size * (s.iterations + 1),
        seed=s.seed,
        wall_time=time.perf_counter() - started,
    )


def _history_entry(it: int, f: np.ndarray, best: float) -> dict:
    return {"iteration": it, "best": best, "swarm_min": float(f.min()),
            "swarm_median": float(np.median(f))}


# ---- reports --------------------------------------------------------------------

def write_report(result: IdentificationResult, path: str | Path) -> None:
    """JSON report; keys sorted so equal results give identical bytes."""
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")


def write_bounds_table(result: IdentificationResult, problem: IdentificationProblem,
                       path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["symbol", "lower_bound", "upper_bound", "identified", "unit"])
        for name in THETA_FIELDS:
            lo, hi = problem.bounds[name]
            writer.writerow([name, f"{lo:.6g}", f"{hi:.6g}", f"{result.theta[name]:.6g}", UNITS[name]])
        writer.writerow(["J", "", "", f"{result.cost:.6g}", "-"])


def twin_datasets(p: CellParameters, noise: float = 2e-3, seed: int = 0, dt: float = 60.0,
                  crate: float = 1.0 / 12.0, V_min: float = 2.5, V_max: float = 3.65,
                  options: SimulationOptions | None = None) -> tuple[Dataset, Dataset]:
    """Synthetic discharge (from SOC 1) and charge (from SOC 0) records generated by the model.

    Gaussian noise of standard deviation ``noise`` volts is added to the voltage.
    """
    rng = np.random.default_rng(seed)
    out = []
    for direction, soc0 in ((Direction.DISCHARGE, 1.0), (Direction.CHARGE, 0.0)):
        profile = CurrentProfile.c_rate(crate, direction, p.Q_nom, V_min=V_min, V_max=V_max,
                                        margin=1.05)
        trace = simulate(profile, initial_state(soc0, direction, p), p,
                         options or SimulationOptions(dt_out=dt))
        V = trace.V + rng.normal(0.0, noise, size=len(trace))
        out.append(Dataset(trace.t, trace.I, V, direction, p.Q_nom, soc0, direction.name.lower()))
    return tuple(out)
