"""Two-phase (core-shell) dynamics of the LiFePO4 particle.

Inside the plateau the particle is a core of uniform composition wrapped by a
shell whose diffusion is solved on the front-fixed coordinate
``chi = (r - r_p)/(R_p - r_p)``.  The shell grid has ``N_r`` intervals,
``chi_l = l/N_r``; node 0 is the interface (Dirichlet value ``g(I)``) and node
``N_r`` the particle surface, recovered from the flux condition. Only nodes
``1 .. N_r-1`` and ``r_p`` are integrated.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .config import CellParameters, DerivedGeometry, derive_geometry
from .particle import bulk_stoichiometry, positive_operator


class Mode(enum.Enum):
    ONE_PHASE_ALPHA = "one_phase_alpha"
    TWO_PHASE = "two_phase"
    ONE_PHASE_BETA = "one_phase_beta"


class Direction(enum.IntEnum):
    DISCHARGE = 1
    CHARGE = -1

    @classmethod
    def parse(cls, value: "str | Direction") -> "Direction":
        if isinstance(value, Direction):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"direction must be 'charge' or 'discharge', got {value!r}") from None

    @classmethod
    def of_current(cls, I: float, held: "Direction") -> "Direction":
        if I > 0:
            return cls.DISCHARGE
        if I < 0:
            return cls.CHARGE
        return held


class NumericalIntegrityError(RuntimeError):
    pass


class SignReversalError(RuntimeError):
    """Current changed sign while both phases coexist."""


@dataclass(frozen=True)
class PhaseRegime:
    mode: Mode
    t_bar: float = 0.0
    direction: Direction = Direction.DISCHARGE  # sign of the last nonzero current


@dataclass(frozen=True)
class OnePhaseState:
    c_s_p: np.ndarray


@dataclass(frozen=True)
class ShellState:
    r_p: float
    c_shell: np.ndarray  # nodes 1 .. N_r-1
    core: float  # uniform core concentration
    g: float  # interface concentration (held through rest periods)

    @property
    def N_r(self) -> int:
        return len(self.c_shell) + 1


@dataclass(frozen=True)
class TransformCoefficients:
    M1: float
    M2: float
    M3: float
    M4: np.ndarray  # per stored node
    dr_dt: float
    eta1: float
    eta2: np.ndarray
    eta3: float
    eta4: float


def boundary_concentration(I: float, p: CellParameters, held: float | None = None) -> float:
    """Interface concentration: beta composition in discharge, alpha in charge.

    At zero current the last value is held; the caller must supply it.
    """
    if I > 0:
        return p.c_beta
    if I < 0:
        return p.c_alpha
    if held is None:
        raise ValueError("zero current needs the previously held interface concentration")
    return held


def core_initial_condition(direction: "Direction | str", p: CellParameters) -> float:
    direction = Direction.parse(direction)
    return p.c_alpha if direction is Direction.DISCHARGE else p.c_beta


def shell_value(direction: Direction, p: CellParameters) -> float:
    return p.c_beta if direction is Direction.DISCHARGE else p.c_alpha


def enter_two_phase(one_phase: OnePhaseState | None, direction: "Direction | str", t: float,
                    p: CellParameters) -> tuple[ShellState, PhaseRegime]:
    """Nucleate a shell of thickness ``epsilon`` at the interface composition."""
    direction = Direction.parse(direction)
    if p.epsilon <= 0:
        raise ValueError("epsilon must be positive: r_p = R_p makes the transform singular")
    g = shell_value(direction, p)
    shell = ShellState(
        r_p=p.R_p - p.epsilon,
        c_shell=np.full(p.N_r - 1, g),
        core=core_initial_condition(direction, p),
        g=g,
    )
    return shell, PhaseRegime(Mode.TWO_PHASE, t_bar=t, direction=direction)


def shell_nodes(r_p: float, N_r: int, R_p: float) -> np.ndarray:
    """Radial positions of all shell nodes 0..N_r."""
    chi = np.arange(N_r + 1) / N_r
    if np.ndim(r_p):
        chi = chi[:, None]
    return r_p + chi * (R_p - r_p)


class ShellOperator:
    """Nodal right-hand side of ``[r_p, c_1 .. c_{N_r-1}]``.

    ``second_order`` uses a four-point interface gradient, central advection
    and a second-order surface closure; ``first_order`` uses one-sided
    differences throughout.
    """

    def __init__(self, p: CellParameters, geom: DerivedGeometry | None = None, N_r: int | None = None):
        geom = geom or derive_geometry(p)
        self.p = p
        self.N_r = N_r or p.N_r
        self.second_order = p.shell_scheme == "second_order"
        if self.N_r < (4 if self.second_order else 3):
            raise ValueError("N_r >= 4 required (3 with the first-order scheme)")
        self.d_chi = 1.0 / self.N_r
        self.chi = np.arange(1, self.N_r) * self.d_chi  # stored nodes
        self.D = p.D_s_p
        self.R = p.R_p
        self.dc = p.c_alpha - p.c_beta
        self.flux_scale = 1.0 / (p.D_s_p * geom.a_p * p.A_cell * p.F * p.L_p)

    def interface_difference(self, c: np.ndarray, g: float) -> float:
        """``dc/dchi`` at the interface times ``d_chi``."""
        if self.second_order:
            # four-point one-sided: the shell profile is strongly curved in chi
            # once the core is small, and the front speed hinges on this slope
            return (18.0 * c[0] - 9.0 * c[1] + 2.0 * c[2] - 11.0 * g) / 6.0
        return c[0] - g

    def coefficients(self, r_p: float, c: np.ndarray, g: float, I: float, sign: float,
                     frozen: bool = False) -> TransformCoefficients:
        width = self.R - r_p
        if width <= 0:
            raise NumericalIntegrityError("r_p >= R_p: front-fixing transform is singular")
        M1 = sign * self.D / (self.dc * width)
        M2 = width * self.d_chi * self.flux_scale
        M3 = self.D / width**2
        eta4 = 0.0 if frozen else M1 / self.d_chi
        dr_dt = eta4 * self.interface_difference(c, g)
        r = self.chi * width + r_p
        M4 = 2.0 * self.D / (r * width) - (self.chi - 1.0) / width * dr_dt
        eta1 = M3 / self.d_chi**2
        eta2 = M4 / self.d_chi
        if self.second_order:
            eta3 = M2 * (2.0 * eta1 + eta2[-1]) / 3.0
        else:
            eta3 = M2 / self.d_chi * (M4[-1] + M3 / self.d_chi)
        return TransformCoefficients(M1, M2, M3, M4, dr_dt, eta1, eta2, eta3, eta4)

    def _surface_increment(self, c: np.ndarray, M2: float, I: float) -> float:
        """``c_surface - c_{N_r-1}``, kept in difference form to avoid cancellation."""
        if self.second_order:
            return (c[-1] - c[-2] + 2.0 * M2 * I) / 3.0
        return M2 * I

    def _surface_value(self, c: np.ndarray, M2: float, I: float) -> float:
        return c[-1] + self._surface_increment(c, M2, I)

    def __call__(self, x: np.ndarray, I: float, g: float, sign: float, frozen: bool = False) -> np.ndarray:
        # hot path: same arithmetic as ``coefficients`` without the record
        r_p = x[0]
        c = x[1:]
        width = self.R - r_p
        if width <= 0:
            raise NumericalIntegrityError("r_p >= R_p: front-fixing transform is singular")
        dchi = self.d_chi
        dr_dt = 0.0 if frozen else sign * self.D / (self.dc * width) / dchi * self.interface_difference(c, g)
        M4 = 2.0 * self.D / ((self.chi * width + r_p) * width) - (self.chi - 1.0) / width * dr_dt
        full = np.empty(self.N_r + 1)
        full[0] = g
        full[1:-1] = c
        full[-1] = self._surface_value(c, width * dchi * self.flux_scale, I)
        lap = full[2:] - 2.0 * full[1:-1] + full[:-2]
        if self.second_order:
            adv = 0.5 * (full[2:] - full[:-2])
        else:
            adv = full[2:] - full[1:-1]
        out = np.empty_like(x)
        out[0] = dr_dt
        out[1:] = self.D / (width * dchi) ** 2 * lap + M4 / dchi * adv
        if not np.isfinite(out).all():
            raise NumericalIntegrityError("non-finite shell rhs")
        return out

    def jacobian(self, x: np.ndarray, I: float, g: float, sign: float, frozen: bool = False) -> np.ndarray:
        """Dense ``d rhs / d x`` for ``x = [r_p, c_1 .. c_{N_r-1}]``."""
        n = self.N_r
        dchi = self.d_chi
        r_p = x[0]
        c = x[1:]
        k = self.coefficients(r_p, c, g, I, sign, frozen)
        w = self.R - r_p
        # d(full profile)/dx; the interface value is fixed
        P = np.zeros((n + 1, n))
        P[np.arange(1, n), np.arange(1, n)] = 1.0
        if self.second_order:
            P[n, n - 1] = 4.0 / 3.0
            P[n, n - 2] += -1.0 / 3.0
            P[n, 0] = -2.0 / 3.0 * dchi * self.flux_scale * I
        else:
            P[n, n - 1] = 1.0
            P[n, 0] = -dchi * self.flux_scale * I
        full = np.empty(n + 1)
        full[0] = g
        full[1:-1] = c
        full[-1] = self._surface_value(c, k.M2, I)
        lap = full[2:] - 2.0 * full[1:-1] + full[:-2]
        L = np.zeros((n - 1, n + 1))
        rows = np.arange(n - 1)
        L[rows, rows] = 1.0
        L[rows, rows + 1] = -2.0
        L[rows, rows + 2] = 1.0
        Adv = np.zeros((n - 1, n + 1))
        if self.second_order:
            adv = 0.5 * (full[2:] - full[:-2])
            Adv[rows, rows] = -0.5
            Adv[rows, rows + 2] = 0.5
        else:
            adv = full[2:] - full[1:-1]
            Adv[rows, rows + 1] = -1.0
            Adv[rows, rows + 2] = 1.0
        # interface velocity
        d_dr = np.zeros(n)
        if not frozen:
            d_dr[0] = k.dr_dt / w
            if self.second_order:
                d_dr[1:4] += k.eta4 * np.array([3.0, -1.5, 1.0 / 3.0])
            else:
                d_dr[1] = k.eta4
        r = self.chi * w + r_p
        dM4 = -np.outer((self.chi - 1.0) / w, d_dr)
        dM4[:, 0] += (-2.0 * self.D * ((1.0 - self.chi) * w - r) / (r * w) ** 2
                      - (self.chi - 1.0) * k.dr_dt / w**2)
        J = np.zeros((n, n))
        J[0] = d_dr
        J[1:] = k.eta1 * (L @ P) + k.eta2[:, None] * (Adv @ P) + adv[:, None] * dM4 / dchi
        J[1:, 0] += 2.0 * k.eta1 / w * lap
        return J

    def surface(self, x: np.ndarray, I: float) -> float:
        width = self.R - x[0]
        return _scalar(self._surface_value(x[1:], width * self.d_chi * self.flux_scale, I))

    def surface_flux(self, x: np.ndarray, I: float) -> float:
        """``D dc/dr`` at the surface recomputed from the reconstructed surface node."""
        width = self.R - x[0]
        c = x[1:]
        inc = self._surface_increment(c, width * self.d_chi * self.flux_scale, I)
        if self.second_order:
            step = 0.5 * (3.0 * inc - (c[-1] - c[-2]))
        else:
            step = inc
        return _scalar(self.D * step / (self.d_chi * width))


def assemble_shell_rhs(shell: ShellState, I: float, p: CellParameters,
                       geom: DerivedGeometry | None = None, frozen: bool = False,
                       sign: float | None = None) -> np.ndarray:
    """d[r_p; c_shell]/dt. ``frozen`` pins the interface (dr_p/dt = 0)."""
    if shell.r_p >= p.R_p:
        raise NumericalIntegrityError("r_p >= R_p: front-fixing transform is singular")
    op = ShellOperator(p, geom, shell.N_r)
    g = boundary_concentration(I, p, held=shell.g)
    if sign is None:
        sign = np.sign(I) if I != 0 else (1.0 if shell.g == p.c_beta else -1.0)
    x = np.concatenate([[shell.r_p], shell.c_shell])
    return op(x, I, g, sign, frozen)


def state_space_matrices(shell: ShellState, I: float, p: CellParameters,
                         geom: DerivedGeometry | None = None, sign: float | None = None):
    """Matrix form ``x' = eta1 A1 x + diag(eta2) A2 x + eta3 B I + eta1 G``.

    Returns ``(eta1, A1, eta2, A2, eta3, B, G)``. The interface-advection term
    makes ``eta2`` node dependent, hence a vector applied row-wise.  With the
    first-order scheme the last row of ``A1`` carries the sub-diagonal ``+1``
    required by the surface-node equation.
    """
    op = ShellOperator(p, geom, shell.N_r)
    g = boundary_concentration(I, p, held=shell.g)
    if sign is None:
        sign = np.sign(I) if I != 0 else (1.0 if shell.g == p.c_beta else -1.0)
    k = op.coefficients(shell.r_p, shell.c_shell, g, I, sign)
    n = shell.N_r
    eta2 = np.concatenate([[0.0], k.eta2])
    ratio = k.eta4 / k.eta1
    A1 = np.zeros((n, n))
    A2 = np.zeros((n, n))
    G = np.zeros(n)
    for row in range(1, n - 1):
        A1[row, row] = -2.0
        A1[row, row + 1] = 1.0
        if row > 1:
            A1[row, row - 1] = 1.0
    G[1] = g
    if op.second_order:
        A1[0, 1] = 3.0 * ratio
        A1[0, 2] = -1.5 * ratio
        A1[0, 3] = ratio / 3.0
        G[0] = -11.0 / 6.0 * ratio * g
        for row in range(1, n - 1):
            A2[row, row + 1] = 0.5
            if row > 1:
                A2[row, row - 1] = -0.5
        G[1] -= 0.5 * eta2[1] / k.eta1 * g
        A1[n - 1, n - 1] = -2.0 / 3.0
        A1[n - 1, n - 2] = 2.0 / 3.0
        A2[n - 1, n - 1] = 2.0 / 3.0
        A2[n - 1, n - 2] = -2.0 / 3.0
    else:
        A1[0, 1] = ratio
        G[0] = -ratio * g
        for row in range(1, n - 1):
            A2[row, row] = -1.0
            A2[row, row + 1] = 1.0
        A1[n - 1, n - 1] = -1.0
        A1[n - 1, n - 2] = 1.0
    B = np.zeros(n)
    B[-1] = 1.0
    return k.eta1, A1, eta2, A2, k.eta3, B, G


def shell_surface_concentration(shell: ShellState, I: float, p: CellParameters,
                                geom: DerivedGeometry | None = None) -> float:
    op = ShellOperator(p, geom, shell.N_r)
    return op.surface(np.concatenate([[shell.r_p], shell.c_shell]), I)


def shell_profile(shell: ShellState, I: float, p: CellParameters,
                  geom: DerivedGeometry | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Radii and concentrations of all shell nodes including interface and surface."""
    r = shell_nodes(shell.r_p, shell.N_r, p.R_p)
    values = np.concatenate([[shell.g], shell.c_shell,
                             [shell_surface_concentration(shell, I, p, geom)]])
    return r, values


def shell_weights(r_p, N_r: int, R_p: float) -> np.ndarray:
    """Trapezoid weights of ``c r^2`` on the shell, scaled to integrate ``r^2`` exactly.

    A vector ``r_p`` gives one column of weights per entry.
    """
    r = shell_nodes(np.asarray(r_p, dtype=float), N_r, R_p)
    w = r**2
    w[0] *= 0.5
    w[-1] *= 0.5
    total = w.sum(axis=0)
    exact = (R_p**3 - np.asarray(r_p) ** 3) / 3.0
    return w * np.divide(exact, total, out=np.zeros_like(exact), where=total != 0)


def two_phase_bulk(r_p, core, values: np.ndarray, R_p: float, c_max: float):
    w = shell_weights(r_p, len(values) - 1, R_p)
    moles = core * np.asarray(r_p) ** 3 / 3.0 + (w * values).sum(axis=0)
    return _scalar(3.0 * moles / (c_max * R_p**3))


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def bulk_stoichiometry_p(positive: "OnePhaseState | ShellState", p: CellParameters, I: float = 0.0,
                         geom: DerivedGeometry | None = None) -> float:
    if isinstance(positive, OnePhaseState):
        return bulk_stoichiometry(positive.c_s_p, p.c_s_p_max)
    _, values = shell_profile(positive, I, p, geom)
    return two_phase_bulk(positive.r_p, positive.core, values, p.R_p, p.c_s_p_max)


def exit_two_phase(shell: ShellState, p: CellParameters, I: float = 0.0,
                   geom: DerivedGeometry | None = None, N: int | None = None) -> OnePhaseState:
    """Map the shell onto the one-phase radial grid once the core is consumed."""
    # the integrator localizes the crossing to a relative 1e-9, so allow that slack
    if shell.r_p > p.rho * (1.0 + 1e-6):
        raise ValueError(f"r_p = {shell.r_p:.3e} m exceeds the exit threshold {p.rho:.3e} m")
    N = N or p.N_rp
    r_shell, values = shell_profile(shell, I, p, geom)
    r = np.linspace(0.0, p.R_p, N)
    interp = PchipInterpolator(r_shell, values, extrapolate=False)
    c = interp(np.clip(r, r_shell[0], r_shell[-1]))
    before = two_phase_bulk(shell.r_p, shell.core, values, p.R_p, p.c_s_p_max)
    after = bulk_stoichiometry(c, p.c_s_p_max)
    factor = before / after
    if abs(factor - 1.0) > 1e-3:
        raise NumericalIntegrityError(f"lithium correction factor {factor:.6f} outside 1 +/- 1e-3")
    return OnePhaseState(c * factor)


def initial_one_phase(theta: float, p: CellParameters, N: int | None = None) -> OnePhaseState:
    return OnePhaseState(np.full(N or p.N_rp, theta * p.c_s_p_max))


def detect_transition(mode: Mode, positive: "OnePhaseState | ShellState", I: float,
                      p: CellParameters, geom: DerivedGeometry | None = None) -> Mode | None:
    """Regime change implied by the current state, or ``None``."""
    if mode is Mode.TWO_PHASE:
        if positive.r_p > p.rho:
            return None
        return Mode.ONE_PHASE_BETA if positive.g == p.c_beta else Mode.ONE_PHASE_ALPHA
    theta = trigger_stoichiometry(positive, p)
    if mode is Mode.ONE_PHASE_ALPHA and I > 0 and theta >= p.theta_p_alpha:
        return Mode.TWO_PHASE
    if mode is Mode.ONE_PHASE_BETA and I < 0 and theta <= p.theta_p_beta:
        return Mode.TWO_PHASE
    return None


def trigger_stoichiometry(positive: OnePhaseState, p: CellParameters) -> float:
    if p.transition_trigger == "bulk":
        return bulk_stoichiometry(positive.c_s_p, p.c_s_p_max)
    return float(positive.c_s_p[-1] / p.c_s_p_max)


__all__ = [
    "Mode", "Direction", "PhaseRegime", "OnePhaseState", "ShellState", "ShellOperator",
    "TransformCoefficients", "boundary_concentration", "core_initial_condition",
    "enter_two_phase", "exit_two_phase", "detect_transition", "assemble_shell_rhs",
    "shell_surface_concentration", "bulk_stoichiometry_p", "state_space_matrices",
    "positive_operator", "initial_one_phase", "NumericalIntegrityError", "SignReversalError",
]
