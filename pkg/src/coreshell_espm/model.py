"""Full-cell state, state-vector layout and algebraic outputs.

The ODE state is ``[c_e (electrolyte volumes), c_s_n (negative nodes), positive]``
where ``positive`` is either the one-phase radial profile or ``[r_p, shell nodes]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csc_matrix, lil_matrix

from .config import CellParameters, DerivedGeometry, derive_geometry
from .coreshell import (
    Direction,
    Mode,
    OnePhaseState,
    PhaseRegime,
    ShellOperator,
    ShellState,
    _scalar,
    two_phase_bulk,
)
from .electrolyte import (
    ElectrolyteOperator,
    boundary_concentrations,
    build_grid,
    electrolyte_conductivity,
    lumped_resistance,
    thermodynamic_factor,
)
from .particle import negative_operator, positive_operator
from .voltage import (
    VoltageBreakdown,
    assemble_voltage,
    exchange_current,
    ocp_negative,
    ocp_positive,
    overpotential,
    soc_from_bulk,
)


@dataclass(frozen=True)
class CellState:
    electrolyte: np.ndarray
    negative: np.ndarray
    positive: "OnePhaseState | ShellState"
    regime: PhaseRegime
    q_throughput: float = 0.0  # signed Ah delivered since t = 0
    t: float = 0.0

    def __post_init__(self) -> None:
        two_phase = self.regime.mode is Mode.TWO_PHASE
        if two_phase != isinstance(self.positive, ShellState):
            raise ValueError("positive-particle representation inconsistent with regime")


class CellModel:
    """Operators and outputs for one parameter set; immutable after construction."""

    def __init__(self, p: CellParameters):
        self.p = p
        self.geom: DerivedGeometry = derive_geometry(p)
        self.grid = build_grid(p)
        self.elec = ElectrolyteOperator(self.grid, p, self.geom)
        self.neg = negative_operator(p, self.geom)
        self.pos = positive_operator(p, self.geom)
        self.shell = ShellOperator(p, self.geom)
        self.n_e = self.grid.size
        self.n_n = p.N_rn
        self.sl_e = slice(0, self.n_e)
        self.sl_n = slice(self.n_e, self.n_e + self.n_n)
        self.off_p = self.n_e + self.n_n
        brugg = [e ** p.brugg for e in (self.geom.eps_n, self.geom.eps_s, self.geom.eps_p)]
        self._brugg = brugg
        self._width_total = self.grid.widths.sum()
        self._sparsity: dict = {}

    # ---- layout -------------------------------------------------------------
    def size(self, mode: Mode) -> int:
        return self.off_p + (self.p.N_r if mode is Mode.TWO_PHASE else self.p.N_rp)

    def pack(self, state: CellState) -> np.ndarray:
        pos = state.positive
        if isinstance(pos, ShellState):
            tail = np.concatenate([[pos.r_p], pos.c_shell])
        else:
            tail = pos.c_s_p
        return np.concatenate([state.electrolyte, state.negative, tail])

    def unpack(self, y: np.ndarray, regime: PhaseRegime, core: float | None = None,
               g: float | None = None, q: float = 0.0, t: float = 0.0) -> CellState:
        tail = y[self.off_p:]
        if regime.mode is Mode.TWO_PHASE:
            pos = ShellState(float(tail[0]), tail[1:].copy(), core, g)
        else:
            pos = OnePhaseState(tail.copy())
        return CellState(y[self.sl_e].copy(), y[self.sl_n].copy(), pos, regime, q, t)

    # ---- dynamics -----------------------------------------------------------
    def rhs_one_phase(self, y: np.ndarray, I: float) -> np.ndarray:
        out = np.empty_like(y)
        out[self.sl_e] = self.elec(y[self.sl_e], I)
        out[self.sl_n] = self.neg(y[self.sl_n], I)
        out[self.off_p:] = self.pos(y[self.off_p:], I)
        return out

    def rhs_two_phase(self, y: np.ndarray, I: float, g: float, sign: float) -> np.ndarray:
        out = np.empty_like(y)
        out[self.sl_e] = self.elec(y[self.sl_e], I)
        out[self.sl_n] = self.neg(y[self.sl_n], I)
        out[self.off_p:] = self.shell(y[self.off_p:], I, g, sign)
        return out

    # The blocks are decoupled; at this size dense LU beats sparse factorization.
    def jacobian_one_phase(self, y: np.ndarray, I: float) -> np.ndarray:
        return self._assemble_jacobian(y, self.pos.A)

    def jacobian_two_phase(self, y: np.ndarray, I: float, g: float, sign: float) -> np.ndarray:
        return self._assemble_jacobian(y, self.shell.jacobian(y[self.off_p:], I, g, sign))

    def _assemble_jacobian(self, y: np.ndarray, positive: np.ndarray) -> np.ndarray:
        n = self.off_p + len(positive)
        J = np.zeros((n, n))
        J[self.sl_e, self.sl_e] = self.elec.jacobian(y[self.sl_e])
        J[self.sl_n, self.sl_n] = self.neg.A
        J[self.off_p:, self.off_p:] = positive
        return J

    def jac_sparsity(self, mode: Mode) -> csc_matrix:
        if mode not in self._sparsity:
            self._sparsity[mode] = self._build_sparsity(mode)
        return self._sparsity[mode]

    def _build_sparsity(self, mode: Mode) -> csc_matrix:
        n = self.size(mode)
        S = lil_matrix((n, n), dtype=np.int8)
        for start, length in ((0, self.n_e), (self.off_p - self.n_n, self.n_n)):
            for i in range(length):
                for j in (i - 1, i, i + 1):
                    if 0 <= j < length:
                        S[start + i, start + j] = 1
        o = self.off_p
        if mode is Mode.TWO_PHASE:
            m = self.p.N_r
            for i in range(m):
                # every row sees r_p and the interface gradient through dr_p/dt
                S[o + i, o:o + 3] = 1
                for j in (i - 1, i, i + 1):
                    if 1 <= j < m:
                        S[o + i, o + j] = 1
        else:
            m = self.p.N_rp
            for i in range(m):
                for j in (i - 1, i, i + 1):
                    if 0 <= j < m:
                        S[o + i, o + j] = 1
        return csc_matrix(S)

    # ---- outputs ------------------------------------------------------------
    # Every output accepts a single state ``y`` or a matrix with one state per column.
    def theta_n_surf(self, y: np.ndarray):
        return _scalar(y[self.off_p - 1] / self.p.c_s_n_max)

    def c_p_surf(self, y: np.ndarray, mode: Mode, I: float):
        if mode is Mode.TWO_PHASE:
            return self.shell.surface(y[self.off_p:], I)
        return _scalar(y[self.off_p + self.p.N_rp - 1])

    def theta_n_bulk(self, y: np.ndarray):
        return _scalar(self.neg.weights @ y[self.sl_n] / self.p.c_s_n_max)

    def theta_p_bulk(self, y: np.ndarray, mode: Mode, I: float, core: float | None = None,
                     g: float | None = None):
        tail = y[self.off_p:]
        if mode is not Mode.TWO_PHASE:
            return _scalar(self.pos.weights @ tail / self.p.c_s_p_max)
        surf = self.shell.surface(tail, I)
        values = np.concatenate([np.full((1,) + tail.shape[1:], g), tail[1:],
                                 np.reshape(surf, (1,) + tail.shape[1:])])
        return two_phase_bulk(tail[0], core, values, self.p.R_p, self.p.c_s_p_max)

    def rp_over_Rp(self, y: np.ndarray, mode: Mode):
        if mode is not Mode.TWO_PHASE:
            return _scalar(np.zeros(np.shape(y)[1:]))
        return _scalar(y[self.off_p] / self.p.R_p)

    def electrolyte_terms(self, c_e: np.ndarray):
        """Average concentration, potential drop and lumped resistance."""
        p = self.p
        c_avg = self.grid.widths @ c_e / self._width_total
        c0, cL = boundary_concentrations(c_e, self.grid)
        if np.any(np.minimum(c0, cL) <= 0):
            raise ArithmeticError("non-positive electrolyte boundary concentration")
        dphi = 2.0 * p.R_gas * p.T * thermodynamic_factor(c_avg, p.T) / p.F * np.log(cL / c0)
        kappa = electrolyte_conductivity(c_avg)
        R_el = lumped_resistance(p, *(kappa * b for b in self._brugg))
        return _scalar(c_avg), _scalar(dphi), _scalar(R_el)

    def voltage(self, y: np.ndarray, mode: Mode, I: float, branch: Direction) -> VoltageBreakdown:
        p = self.p
        c_avg, dphi, R_el = self.electrolyte_terms(y[self.sl_e])
        cn = y[self.off_p - 1]
        cp = self.c_p_surf(y, mode, I)
        U_n = ocp_negative(cn / p.c_s_n_max, p)
        U_p = ocp_positive(cp / p.c_s_p_max, branch)
        i0_n = exchange_current(p.k_n, c_avg, cn, p.c_s_n_max, p.F)
        i0_p = exchange_current(p.k_p, c_avg, cp, p.c_s_p_max, p.F)
        eta_n = overpotential("n", I, i0_n, p, self.geom)
        eta_p = overpotential("p", I, i0_p, p, self.geom)
        return assemble_voltage(U_p, U_n, eta_p, eta_n, dphi, I, p.R_l, R_el)

    def state_voltage(self, state: CellState, I: float) -> VoltageBreakdown:
        branch = Direction.of_current(I, state.regime.direction)
        return self.voltage(self.pack(state), state.regime.mode, I, branch)

    def state_soc(self, state: CellState, I: float = 0.0) -> tuple[float, float]:
        y = self.pack(state)
        pos = state.positive
        core = pos.core if isinstance(pos, ShellState) else None
        g = pos.g if isinstance(pos, ShellState) else None
        return soc_from_bulk(self.theta_n_bulk(y),
                             self.theta_p_bulk(y, state.regime.mode, I, core, g), self.p)
