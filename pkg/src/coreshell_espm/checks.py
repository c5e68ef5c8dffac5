"""Executable invariant and oracle suite.

Each check returns a :class:`CheckResult` holding the measured value and the
threshold it is held to, so the same code backs the ``check`` command and the
acceptance tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.sparse import csr_matrix, diags

from .config import CellParameters, capacity, derive_geometry
from .coreshell import Direction, Mode, ShellOperator, ShellState, state_space_matrices
from .model import CellModel
from .particle import negative_operator, surface_gradient_n
from .simulator import CurrentProfile, SimulationOptions, SimulationTrace, initial_state, simulate
from .voltage import ocp_positive


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name}: {self.value:.3e} (threshold {self.threshold:.3e})"
        return f"{text}  {self.detail}" if self.detail else text


def _below(name: str, value: float, threshold: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(value), float(threshold), bool(value < threshold), detail)


def _at_least(name: str, value: float, threshold: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(value), float(threshold), bool(value >= threshold), detail)


# ---- full-cycle runs ---------------------------------------------------------------

@dataclass
class CycleRun:
    direction: Direction
    trace: SimulationTrace
    runtime: float


def c12_run(p: CellParameters, direction: "Direction | str", options: SimulationOptions | None = None,
            record_steps: bool = False) -> CycleRun:
    """C/12 from SOC 1 (discharge) or SOC 0 (charge) to the voltage cutoff."""
    direction = Direction.parse(direction)
    soc0 = 1.0 if direction is Direction.DISCHARGE else 0.0
    options = options or SimulationOptions()
    if record_steps:
        options = SimulationOptions(**{**options.__dict__, "record_steps": True})
    profile = CurrentProfile.c_rate(1.0 / 12.0, direction, p.Q_nom)
    started = time.perf_counter()
    trace = simulate(profile, initial_state(soc0, direction, p), p, options)
    return CycleRun(direction, trace, time.perf_counter() - started)


def bookkeeping_errors(trace: SimulationTrace, p: CellParameters) -> tuple[float, float]:
    """Relative mismatch between electrode SOC change times capacity and delivered charge."""
    delivered = trace.q[-1] - trace.q[0]
    throughput = abs(delivered)
    errs = []
    for soc, electrode in ((trace.soc_n, "n"), (trace.soc_p, "p")):
        moved = -(soc[-1] - soc[0]) * capacity(p, electrode)
        errs.append(abs(moved - delivered) / throughput)
    return errs[0], errs[1]


def conservation(run: CycleRun, p: CellParameters) -> list[CheckResult]:
    tr = run.trace
    tag = run.direction.name.lower()
    lithium = tr.electrolyte_lithium
    drift = np.max(np.abs(lithium - lithium[0])) / lithium[0]
    err_n, err_p = bookkeeping_errors(tr, p)
    return [
        _below(f"electrolyte lithium drift ({tag})", drift, 1e-6),
        _below(f"negative bookkeeping error ({tag})", err_n, 5e-3),
        _below(f"positive bookkeeping error ({tag})", err_p, 5e-3),
        _below(f"runtime C/12 {tag} [s]", run.runtime, 10.0),
    ]


def lifecycle(run: CycleRun, p: CellParameters) -> list[CheckResult]:
    """Two-phase entry at the trigger, monotone interface and exit at the threshold."""
    tr = run.trace
    tag = run.direction.name.lower()
    threshold = p.theta_p_alpha if run.direction is Direction.DISCHARGE else p.theta_p_beta
    entries = [e for e in tr.events if e[2] == Mode.TWO_PHASE.value]
    exits = [e for e in tr.events if e[1] == Mode.TWO_PHASE.value]
    out = []
    if not entries:
        out.append(CheckResult(f"two-phase entry ({tag})", np.nan, threshold, False, "never entered"))
        return out
    t_in = entries[0][0]
    model = CellModel(p)
    before = [s for s in tr.steps if s[2] is not Mode.TWO_PHASE and s[0] <= t_in]
    if before:
        y = before[-1][1]
        theta = float(y[model.off_p + p.N_rp - 1] / p.c_s_p_max)
        out.append(_below(f"entry surface stoichiometry offset ({tag})", abs(theta - threshold), 1e-6,
                          f"theta_p_surf {theta:.6f} at t = {t_in:.0f} s"))
    tp = tr.mode == Mode.TWO_PHASE.value
    rp = tr.rp_over_Rp[tp]
    rises = float(np.max(np.diff(rp), initial=0.0))
    out.append(CheckResult(f"interface radius monotone decreasing ({tag})", rises, 0.0, rises <= 0.0,
                           f"{int(tp.sum())} two-phase samples"))
    if exits:
        t_out = exits[0][0]
        last = [s for s in tr.steps if s[2] is Mode.TWO_PHASE and s[0] <= t_out]
        rp_exit = float(last[-1][1][model.off_p] / p.R_p) if last else np.nan
        ok = rp_exit <= 1e-3 * (1.0 + 1e-6) and t_out < tr.t[-1]
        out.append(CheckResult(f"exit r_p/R_p ({tag})", rp_exit, 1e-3, bool(ok),
                               f"exit at t = {t_out:.0f} s, end at {tr.t[-1]:.0f} s"))
    else:
        out.append(CheckResult(f"exit r_p/R_p ({tag})", np.nan, 1e-3, False, "never exited"))
    return out


def flux_identity(run: CycleRun, p: CellParameters) -> CheckResult:
    """Surface flux recomputed from the reconstructed surface node at every accepted two-phase step."""
    model = CellModel(p)
    op = ShellOperator(p, model.geom)
    target_per_amp = 1.0 / (model.geom.a_p * p.A_cell * p.F * p.L_p)
    worst = 0.0
    n = 0
    for _, y, mode, I in run.trace.steps:
        if mode is not Mode.TWO_PHASE or I == 0:
            continue
        x = y[model.off_p:]
        target = I * target_per_amp
        worst = max(worst, abs(op.surface_flux(x, I) - target) / abs(target))
        n += 1
    tag = run.direction.name.lower()
    if n == 0:
        return CheckResult(f"surface flux identity ({tag})", np.nan, 1e-12, False, "no two-phase steps")
    return _below(f"surface flux identity ({tag})", worst, 1e-12, f"{n} accepted steps")


def plateau_band(run: CycleRun, band: tuple[float, float]) -> CheckResult:
    tr = run.trace
    tp = tr.mode == Mode.TWO_PHASE.value
    V = tr.V[tp]
    frac = float(np.mean((V >= band[0]) & (V <= band[1]))) if len(V) else 0.0
    tag = run.direction.name.lower()
    detail = f"plateau spans {V.min():.3f}-{V.max():.3f} V" if len(V) else "no plateau samples"
    return _at_least(f"plateau band {band[0]:.2f}-{band[1]:.2f} V ({tag})", frac, 0.95, detail)


def ocp_hysteresis() -> CheckResult:
    theta = np.linspace(0.1, 0.9, 801)
    gap = ocp_positive(theta, Direction.CHARGE) - ocp_positive(theta, Direction.DISCHARGE)
    return CheckResult("charge OCP above discharge OCP on [0.1, 0.9]", float(gap.min()), 0.0,
                       bool(gap.min() >= 0.0))


# ---- discretization oracles --------------------------------------------------------

def matrix_equivalence(p: CellParameters, n_states: int = 100, seed: int = 0) -> CheckResult:
    """Matrix form against the nodal right-hand side on random shells and currents.

    The error is measured relative to the magnitude of the individual terms so
    that cancellation between large terms is not mistaken for disagreement.
    """
    rng = np.random.default_rng(seed)
    geom = derive_geometry(p)
    op = ShellOperator(p, geom)
    worst = 0.0
    for _ in range(n_states):
        I = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 2.0) * p.Q_nom
        g = p.c_beta if I > 0 else p.c_alpha
        r_p = rng.uniform(p.rho, p.R_p - p.epsilon)
        c = rng.uniform(p.c_alpha, p.c_beta, size=p.N_r - 1)
        shell = ShellState(r_p, c, p.c_alpha if I > 0 else p.c_beta, g)
        x = np.concatenate([[r_p], c])
        nodal = op(x, I, g, np.sign(I))
        eta1, A1, eta2, A2, eta3, B, G = state_space_matrices(shell, I, p, geom)
        matrix = eta1 * (A1 @ x) + eta2 * (A2 @ x) + eta3 * B * I + eta1 * G
        scale = (abs(eta1) * (np.abs(A1) @ np.abs(x) + np.abs(G))
                 + np.abs(eta2) * (np.abs(A2) @ np.abs(x)) + np.abs(eta3 * B * I))
        worst = max(worst, float(np.max(np.abs(matrix - nodal) / scale)))
    return _below("matrix form vs nodal rhs (term-relative)", worst, 1e-14, f"{n_states} random states")


def _reference_shell(p: CellParameters, r_p: float, g: float, c0: float, gradient: float,
                     t_end: float, N: int = 201) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-shell diffusion solved independently in ``u = r c`` on a uniform physical grid.

    ``u_t = D u_rr`` with ``u(r_p) = r_p g`` and the Robin condition
    ``u_r = u / R + R dc/dr`` at the surface, closed with a ghost node.
    """
    R, D = p.R_p, p.D_s_p
    r = np.linspace(r_p, R, N)
    h = r[1] - r[0]
    n = N - 1  # unknowns at nodes 1..N-1
    main = np.full(n, -2.0)
    lower = np.ones(n - 1)
    upper = np.ones(n - 1)
    # ghost u_{N} = u_{N-2} + 2 h (u_{N-1}/R + R gradient)
    lower[-1] = 2.0
    main[-1] = -2.0 + 2.0 * h / R
    A = diags([lower, main, upper], [-1, 0, 1]) * (D / h**2)
    b = np.zeros(n)
    b[0] = D / h**2 * r_p * g
    b[-1] = D / h**2 * 2.0 * h * R * gradient
    A = csr_matrix(A)
    sol = solve_ivp(lambda t, u: A @ u + b, (0.0, t_end), r[1:] * c0, method="BDF",
                    jac=A, rtol=1e-10, atol=1e-8)
    u = np.concatenate([[r_p * g], sol.y[:, -1]])
    return r, u / r


def frozen_shell_oracle(p: CellParameters, r_frac: float = 0.5, crate: float = 1.0) -> CheckResult:
    """Frozen-interface shell against the fine reference; RMS error relative to the RMS change."""
    geom = derive_geometry(p)
    op = ShellOperator(p, geom)
    I = crate * p.Q_nom
    g = p.c_beta
    r_p = r_frac * p.R_p
    width = p.R_p - r_p
    t_end = 0.2 * width**2 / p.D_s_p
    x0 = np.concatenate([[r_p], np.full(p.N_r - 1, g)])
    sol = solve_ivp(lambda t, x: op(x, I, g, 1.0, frozen=True), (0.0, t_end), x0, method="BDF",
                    jac=lambda t, x: op.jacobian(x, I, g, 1.0, frozen=True), rtol=1e-10, atol=1e-8)
    x = sol.y[:, -1]
    r = r_p + np.arange(p.N_r + 1) / p.N_r * width
    coarse = np.concatenate([[g], x[1:], [op.surface(x, I)]])
    gradient = I * op.flux_scale
    r_ref, c_ref = _reference_shell(p, r_p, g, g, gradient, t_end)
    ref = CubicSpline(r_ref, c_ref)(r)
    err = np.sqrt(np.mean((coarse - ref) ** 2)) / np.sqrt(np.mean((ref - g) ** 2))
    return _below(f"frozen-boundary shell vs N=201 reference (N_r={p.N_r})", err, 5e-3,
                  "RMS error / RMS concentration change")


def half_space_oracle(p: CellParameters, N: int = 801, fractions=(0.005, 0.0075, 0.01)) -> CheckResult:
    """Negative-particle surface response against ``2 G sqrt(D t / pi)`` for a constant gradient.

    Times are chosen so the diffusion length ``sqrt(D t)`` is a small fraction of
    the radius; ``N`` must resolve that length.
    """
    geom = derive_geometry(p)
    I = p.Q_nom
    op = negative_operator(p, geom, N)
    gradient = surface_gradient_n(I, p, geom)
    times = (np.asarray(fractions) * p.R_n) ** 2 / p.D_s_n
    c0 = 0.5 * p.c_s_n_max
    A = csr_matrix(op.A)
    b = op.b * I
    sol = solve_ivp(lambda t, c: A @ c + b, (0.0, times[-1]), np.full(N, c0), method="BDF",
                    jac=A, t_eval=times, rtol=1e-10, atol=1e-6)
    numeric = sol.y[-1] - c0
    exact = 2.0 * gradient * np.sqrt(p.D_s_n * times / np.pi)
    err = float(np.max(np.abs(numeric - exact) / np.abs(exact)))
    return _below("negative particle short-time response vs half-space", err, 2e-2,
                  f"N={N}, sqrt(Dt)/R in {fractions[0]}..{fractions[-1]}")


def grid_convergence(p: CellParameters, direction: "Direction | str",
                     coarse: int = 30, fine: int = 60) -> CheckResult:
    direction = Direction.parse(direction)
    a = c12_run(p.replace(N_r=coarse), direction).trace
    b = c12_run(p.replace(N_r=fine), direction).trace
    t_end = min(a.t[-1], b.t[-1])
    t = a.t[a.t <= t_end]
    Vb = np.interp(t, b.t, b.V)
    rms = float(np.sqrt(np.mean((a.V[: len(t)] - Vb) ** 2)))
    tag = direction.name.lower()
    return _below(f"N_r {coarse}->{fine} voltage RMS change ({tag}) [V]", rms, 1e-3)


def invariant_suite(p: CellParameters) -> list[CheckResult]:
    """Conservation, lifecycle, flux identity and the discretization oracles."""
    results: list[CheckResult] = []
    for direction in (Direction.DISCHARGE, Direction.CHARGE):
        run = c12_run(p, direction, record_steps=True)
        results += conservation(run, p)
        results += lifecycle(run, p)
        results.append(flux_identity(run, p))
    results.append(matrix_equivalence(p))
    results.append(frozen_shell_oracle(p))
    results.append(half_space_oracle(p))
    for direction in (Direction.DISCHARGE, Direction.CHARGE):
        results.append(grid_convergence(p, direction))
    return results
