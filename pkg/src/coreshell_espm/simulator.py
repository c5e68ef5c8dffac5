"""Method-of-lines integration of the full cell with event-driven phase switching."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .config import CellParameters, derive_geometry
from .coreshell import (
    Direction,
    Mode,
    NumericalIntegrityError,
    OnePhaseState,
    PhaseRegime,
    ShellState,
    SignReversalError,
    enter_two_phase,
    exit_two_phase,
)
from .electrolyte import ElectrolyteError
from .model import CellModel, CellState
from .particle import SaturationError
from .voltage import VoltageError

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Integrator failure; the message carries time and regime."""


# raised from inside the right-hand side; reported with time and regime
_RHS_FAILURES = (ElectrolyteError, NumericalIntegrityError, VoltageError, FloatingPointError)


class AmbiguousPhaseError(ValueError):
    pass


@dataclass(frozen=True)
class CurrentProfile:
    """Piecewise-constant current: ``currents[k]`` flows on ``[times[k], times[k+1])``."""

    times: np.ndarray
    currents: np.ndarray
    V_min: float | None = None
    V_max: float | None = None
    capacity_limit: float | None = None  # Ah of |throughput|

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        currents = np.asarray(self.currents, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "currents", currents)
        if len(times) != len(currents) + 1:
            raise ValueError("need one more breakpoint than current values")
        if np.any(np.diff(times) <= 0):
            raise ValueError("profile times must be strictly increasing")

    @classmethod
    def constant(cls, current: float, duration: float, **limits) -> "CurrentProfile":
        return cls(np.array([0.0, duration]), np.array([current]), **limits)

    @classmethod
    def c_rate(cls, crate: float, direction: "Direction | str", Q_nom: float,
               V_min: float | None = 2.5, V_max: float | None = 3.65,
               capacity_limit: float | None = None, margin: float = 1.05) -> "CurrentProfile":
        """Constant current at ``crate * Q_nom`` lasting ``margin / crate`` hours."""
        direction = Direction.parse(direction)
        current = int(direction) * crate * Q_nom
        duration = margin * 3600.0 / crate
        return cls.constant(current, duration, V_min=V_min, V_max=V_max, capacity_limit=capacity_limit)


@dataclass(frozen=True)
class SimulationOptions:
    rtol: float = 1e-6
    atol: float = 1e-9  # mol/m^3; the interface radius uses atol * R_p
    dt_out: float = 60.0
    method: str = "LSODA"
    max_step: float = np.inf
    record_steps: bool = False  # keep every accepted integrator step in ``trace.steps``


@dataclass
class SimulationTrace:
    t: np.ndarray
    I: np.ndarray
    V: np.ndarray
    soc_n: np.ndarray
    soc_p: np.ndarray
    rp_over_Rp: np.ndarray
    theta_p_surf: np.ndarray
    theta_n_surf: np.ndarray
    U_p: np.ndarray
    U_n: np.ndarray
    eta_p: np.ndarray
    eta_n: np.ndarray
    dphi_e: np.ndarray
    ohmic: np.ndarray
    q: np.ndarray  # signed Ah throughput
    mode: np.ndarray  # regime tag per sample
    theta_n_bulk: np.ndarray
    theta_p_bulk: np.ndarray
    electrolyte_lithium: np.ndarray  # mol/m^2
    events: list = field(default_factory=list)  # (t, from_mode, to_mode)
    steps: list = field(default_factory=list)  # (t, y, mode, I) when recorded
    final_state: CellState | None = None
    termination: str = "end"

    CSV_COLUMNS = (
        ("t_s", "t"), ("I_A", "I"), ("V_V", "V"), ("soc_n", "soc_n"), ("soc_p", "soc_p"),
        ("rp_over_Rp", "rp_over_Rp"), ("theta_p_surf", "theta_p_surf"),
        ("theta_n_surf", "theta_n_surf"), ("U_p_V", "U_p"), ("U_n_V", "U_n"),
        ("eta_p_V", "eta_p"), ("eta_n_V", "eta_n"), ("dphi_e_V", "dphi_e"), ("ohmic_V", "ohmic"),
    )

    def __len__(self) -> int:
        return len(self.t)

    def column_table(self) -> tuple[list[str], np.ndarray]:
        header = [name for name, _ in self.CSV_COLUMNS]
        data = np.column_stack([getattr(self, attr) for _, attr in self.CSV_COLUMNS])
        return header, data


def initial_state(soc0: float, direction: "Direction | str", p: CellParameters,
                  geom=None) -> CellState:
    """Rest state with uniform particles at the SOC-mapped stoichiometries."""
    if not 0.0 <= soc0 <= 1.0:
        raise ValueError("soc0 must lie in [0, 1]")
    direction = Direction.parse(direction)
    theta_n = p.theta_n_0 + soc0 * (p.theta_n_100 - p.theta_n_0)
    theta_p = p.theta_p_0 - soc0 * (p.theta_p_0 - p.theta_p_100)
    if theta_p < p.theta_p_alpha:
        mode = Mode.ONE_PHASE_ALPHA
    elif theta_p > p.theta_p_beta:
        mode = Mode.ONE_PHASE_BETA
    else:
        raise AmbiguousPhaseError(
            f"ambiguous phase: theta_p = {theta_p:.4f} lies inside the two-phase plateau")
    model_sizes = p.n_xn + p.n_xs + p.n_xp
    return CellState(
        electrolyte=np.full(model_sizes, p.c0_electrolyte),
        negative=np.full(p.N_rn, theta_n * p.c_s_n_max),
        positive=OnePhaseState(np.full(p.N_rp, theta_p * p.c_s_p_max)),
        regime=PhaseRegime(mode, 0.0, direction),
    )


class _Segment:
    """One constant-current, fixed-regime stretch of integration.
    """

    def __init__(self, model: CellModel, regime: PhaseRegime, I: float,
                 core: float | None, g: float | None):
        self.model = model
        self.regime = regime
        self.I = I
        self.core = core
        self.g = g
        self.two_phase = regime.mode is Mode.TWO_PHASE
        self.sign = float(regime.direction)
        self.branch = Direction.of_current(I, regime.direction)
        self.t_last = float("nan")  # time of the latest rhs evaluation, for error reports

    def rhs(self, t, y):
        self.t_last = t
        if self.two_phase:
            return self.model.rhs_two_phase(y, self.I, self.g, self.sign)
        return self.model.rhs_one_phase(y, self.I)

    def jac(self, t, y):
        if self.two_phase:
            return self.model.jacobian_two_phase(y, self.I, self.g, self.sign)
        return self.model.jacobian_one_phase(y, self.I)

    def voltage(self, y):
        return self.model.voltage(y, self.regime.mode, self.I, self.branch)

    def theta_p_surf(self, y) -> float:
        return self.model.c_p_surf(y, self.regime.mode, self.I) / self.model.p.c_s_p_max


def _transition_event(seg: _Segment):
    model, p = seg.model, seg.model.p
    mode = seg.regime.mode
    if mode is Mode.TWO_PHASE:
        if seg.I == 0:
            return None
        fn = lambda t, y: y[model.off_p] - p.rho  # noqa: E731
        fn.direction = -1
    elif mode is Mode.ONE_PHASE_ALPHA and seg.I > 0:
        fn = lambda t, y: _trigger_theta(seg, y) - p.theta_p_alpha  # noqa: E731
        fn.direction = 1
    elif mode is Mode.ONE_PHASE_BETA and seg.I < 0:
        fn = lambda t, y: _trigger_theta(seg, y) - p.theta_p_beta  # noqa: E731
        fn.direction = -1
    else:
        return None
    fn.terminal = True
    return fn


def _trigger_theta(seg: _Segment, y) -> float:
    model = seg.model
    if model.p.transition_trigger == "bulk":
        return model.theta_p_bulk(y, seg.regime.mode, seg.I)
    return seg.theta_p_surf(y)


def _clipped_voltage(seg: _Segment, y) -> float:
    try:
        return seg.voltage(y).V_cell
    except (VoltageError, ArithmeticError, ValueError):
        return np.nan


def _events(seg: _Segment, profile: CurrentProfile):
    events: list = []
    kinds: list[str] = []
    transition = _transition_event(seg)
    if transition is not None:
        events.append(transition)
        kinds.append("transition")
    model = seg.model
    p = model.p

    def sat_n(t, y):
        th = model.theta_n_surf(y)
        return min(th, 1.0 - th)

    def sat_p(t, y):
        th = seg.theta_p_surf(y)
        return min(th, 1.0 - th)

    for fn in (sat_n, sat_p):
        fn.terminal = True
        fn.direction = -1
        events.append(fn)
        kinds.append("saturation")
    if profile.V_min is not None and seg.I > 0:
        vmin = lambda t, y: _crossed_if_nan(_clipped_voltage(seg, y) - profile.V_min)  # noqa: E731
        vmin.terminal = True
        vmin.direction = -1
        events.append(vmin)
        kinds.append("V_min")
    if profile.V_max is not None and seg.I < 0:
        vmax = lambda t, y: _crossed_if_nan(profile.V_max - _clipped_voltage(seg, y))  # noqa: E731
        vmax.terminal = True
        vmax.direction = -1
        events.append(vmax)
        kinds.append("V_max")
    return events, kinds


def _crossed_if_nan(x: float) -> float:
    # An unevaluable voltage only occurs past a saturating electrode, i.e. beyond the cutoff.
    return -1.0 if not np.isfinite(x) else x


def simulate(profile: CurrentProfile, init: CellState, p: CellParameters,
             options: SimulationOptions | None = None, model: CellModel | None = None,
             t_eval: np.ndarray | None = None) -> SimulationTrace:
    """Integrate ``profile`` from ``init`` and sample the outputs.

    Samples are taken every ``options.dt_out`` seconds, or at ``t_eval`` when given.
    """
    options = options or SimulationOptions()
    model = model or CellModel(p)
    t0 = float(profile.times[0])
    t_final = float(profile.times[-1])
    if t_eval is None:
        n_out = int(np.floor((t_final - t0) / options.dt_out + 1e-9)) + 1
        t_out = t0 + options.dt_out * np.arange(n_out)
    else:
        t_out = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_out) < 0) or t_out[0] < t0 or t_out[-1] > t_final:
            raise ValueError("t_eval must be sorted and lie inside the profile")

    y = model.pack(init)
    regime = init.regime
    pos = init.positive
    core = pos.core if isinstance(pos, ShellState) else None
    g = pos.g if isinstance(pos, ShellState) else None
    q = init.q_throughput
    t = t0
    samples: list[tuple] = []
    events_log: list[tuple] = []
    steps: list[tuple] = []
    termination = "end"
    geom = model.geom

    k = 0
    n_seg = len(profile.currents)
    done = False
    while k < n_seg and not done:
        I = float(profile.currents[k])
        seg_end = float(profile.times[k + 1])
        if regime.mode is Mode.TWO_PHASE and I != 0 and np.sign(I) != int(regime.direction):
            raise SignReversalError(
                f"current sign reversed at t = {t:.1f} s while in the two-phase regime")
        cap_hit = False
        if profile.capacity_limit is not None and I != 0:
            t_cap = t + (profile.capacity_limit - abs(q)) * 3600.0 / abs(I)
            if t_cap <= seg_end:
                seg_end, cap_hit = t_cap, True
        if I != 0:
            regime = PhaseRegime(regime.mode, regime.t_bar, Direction.of_current(I, regime.direction))
        if regime.mode is Mode.TWO_PHASE and I != 0:
            g = p.c_beta if I > 0 else p.c_alpha

        while t < seg_end:
            seg = _Segment(model, regime, I, core, g)
            events, kinds = _events(seg, profile)
            atol = np.full(len(y), options.atol)
            if regime.mode is Mode.TWO_PHASE:
                atol[model.off_p] = options.atol * p.R_p
            try:
                sol = solve_ivp(
                    seg.rhs, (t, seg_end), y, method=options.method, rtol=options.rtol, atol=atol,
                    dense_output=True, events=events or None, jac=seg.jac,
                    max_step=options.max_step,
                )
            except _RHS_FAILURES as exc:
                raise SimulationError(
                    f"{type(exc).__name__} at t = {seg.t_last:.1f} s in regime "
                    f"{regime.mode.value}: {exc}") from exc
            if sol.status == -1:
                raise SimulationError(
                    f"integration failed at t = {sol.t[-1]:.3f} s in regime "
                    f"{regime.mode.value}: {sol.message}")
            t_end = float(sol.t[-1])
            mask = (t_out >= t) & (t_out < t_end)
            if t_end >= t_final or (cap_hit and t_end >= seg_end):
                mask |= np.isclose(t_out, t_end, rtol=0, atol=1e-9) & (t_out >= t)
            if options.record_steps:
                steps.extend((float(ts), sol.y[:, j].copy(), regime.mode, I)
                             for j, ts in enumerate(sol.t))
            if mask.any():
                ts = t_out[mask]
                samples.append(_sample(seg, sol.sol(ts), ts, q + I * (ts - t) / 3600.0, core, g))
            q += I * (t_end - t) / 3600.0
            y = sol.y[:, -1].copy()
            t = t_end
            if sol.status != 1:
                break
            fired = [i for i, te in enumerate(sol.t_events) if len(te)]
            kind = kinds[fired[0]]
            y = sol.y_events[fired[0]][-1].copy()
            if kind == "saturation":
                raise SaturationError(
                    f"particle surface stoichiometry left (0, 1) at t = {t:.1f} s "
                    f"in regime {regime.mode.value}")
            if kind in ("V_min", "V_max"):
                termination = kind
                done = True
                break
            y, regime, core, g = _switch_regime(model, y, regime, I, t, core, g, events_log)
        if cap_hit and not done:
            termination = "capacity"
            done = True
        k += 1

    final = model.unpack(y, regime, core, g, q, t)
    trace = _collect(samples, events_log, final, termination)
    trace.steps = steps
    return trace


def _switch_regime(model: CellModel, y: np.ndarray, regime: PhaseRegime, I: float, t: float,
                   core, g, events_log):
    p = model.p
    off = model.off_p
    if regime.mode is Mode.TWO_PHASE:
        shell = ShellState(float(y[off]), y[off + 1:].copy(), core, g)
        one = exit_two_phase(shell, p, I, model.geom)
        new_mode = Mode.ONE_PHASE_BETA if regime.direction is Direction.DISCHARGE else Mode.ONE_PHASE_ALPHA
        y_new = np.concatenate([y[:off], one.c_s_p])
        new_regime = PhaseRegime(new_mode, t, regime.direction)
        core, g = None, None
    else:
        direction = Direction.DISCHARGE if I > 0 else Direction.CHARGE
        shell, new_regime = enter_two_phase(OnePhaseState(y[off:].copy()), direction, t, p)
        y_new = np.concatenate([y[:off], [shell.r_p], shell.c_shell])
        core, g = shell.core, shell.g
    log.debug("t=%.1f s: %s -> %s", t, regime.mode.value, new_regime.mode.value)
    events_log.append((t, regime.mode.value, new_regime.mode.value))
    return y_new, new_regime, core, g


def _sample(seg: _Segment, Y: np.ndarray, t: np.ndarray, q: np.ndarray, core, g) -> dict:
    """Outputs for a block of model-space states, one per column of ``Y``."""
    model = seg.model
    p = model.p
    mode = seg.regime.mode
    bd = model.voltage(Y, mode, seg.I, seg.branch)
    th_n = model.theta_n_bulk(Y)
    th_p = model.theta_p_bulk(Y, mode, seg.I, core, g)
    m = len(t)
    return {
        "t": t, "I": np.full(m, seg.I), "V": bd.V_cell,
        "soc_n": (th_n - p.theta_n_0) / (p.theta_n_100 - p.theta_n_0),
        "soc_p": (p.theta_p_0 - th_p) / (p.theta_p_0 - p.theta_p_100),
        "rp_over_Rp": model.rp_over_Rp(Y, mode),
        "theta_p_surf": model.c_p_surf(Y, mode, seg.I) / p.c_s_p_max,
        "theta_n_surf": model.theta_n_surf(Y),
        "U_p": bd.U_p, "U_n": bd.U_n, "eta_p": bd.eta_p, "eta_n": bd.eta_n,
        "dphi_e": bd.delta_phi_e, "ohmic": np.full(m, bd.ohmic) if np.ndim(bd.ohmic) == 0 else bd.ohmic,
        "q": q, "mode": np.full(m, mode.value, dtype=object),
        "theta_n_bulk": th_n, "theta_p_bulk": th_p,
        "electrolyte_lithium": model.elec.capacity @ Y[model.sl_e],
    }


_SAMPLE_FIELDS = ("t", "I", "V", "soc_n", "soc_p", "rp_over_Rp", "theta_p_surf", "theta_n_surf",
                  "U_p", "U_n", "eta_p", "eta_n", "dphi_e", "ohmic", "q", "mode",
                  "theta_n_bulk", "theta_p_bulk", "electrolyte_lithium")


def _collect(samples, events_log, final, termination) -> SimulationTrace:
    data = {}
    for name in _SAMPLE_FIELDS:
        dtype = object if name == "mode" else float
        parts = [np.broadcast_to(np.asarray(block[name], dtype=dtype), block["t"].shape)
                 for block in samples]
        data[name] = np.concatenate(parts) if parts else np.array([], dtype=dtype)
    return SimulationTrace(**data, events=events_log, final_state=final, termination=termination)
