"""Finite-volume lithium transport in the electrolyte and its voltage terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CellParameters, DerivedGeometry, derive_geometry


_LN10 = np.log(10.0)


class ElectrolyteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ElectrolyteGrid:
    n_n: int
    n_s: int
    n_p: int
    x_centers: np.ndarray
    widths: np.ndarray
    region: np.ndarray  # 0 = negative, 1 = separator, 2 = positive

    @property
    def size(self) -> int:
        return self.n_n + self.n_s + self.n_p


def build_grid(p: CellParameters, n_n: int | None = None, n_s: int | None = None,
               n_p: int | None = None) -> ElectrolyteGrid:
    n_n = p.n_xn if n_n is None else n_n
    n_s = p.n_xs if n_s is None else n_s
    n_p = p.n_xp if n_p is None else n_p
    if min(n_n, n_s, n_p) < 3:
        raise ValueError("each electrolyte region needs at least 3 volumes")
    widths = np.concatenate([
        np.full(n_n, p.L_n / n_n),
        np.full(n_s, p.L_s / n_s),
        np.full(n_p, p.L_p / n_p),
    ])
    faces = np.concatenate([[0.0], np.cumsum(widths)])
    centers = 0.5 * (faces[:-1] + faces[1:])
    region = np.repeat([0, 1, 2], [n_n, n_s, n_p])
    return ElectrolyteGrid(n_n, n_s, n_p, centers, widths, region)


def electrolyte_diffusivity(c, T):
    """Salt diffusivity in m^2/s.

    ``D = 1e-4 * 10**((-4.51 - 59.22/(T - (206.25 + 10 c/1000))) * c/1000)``; the
    correlation is only defined above its pole at ``T = 216.25 + 10 c/1000``.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ElectrolyteError("negative electrolyte concentration")
    cm = c / 1000.0
    if np.any(T <= 216.25 + 10.0 * cm):
        raise ElectrolyteError("correlation out of domain: temperature at or below pole")
    exponent = (-4.51 - 59.22 / (T - (206.25 + 10.0 * cm))) * cm
    out = 1e-4 * 10.0 ** exponent
    return out if out.ndim else float(out)


def electrolyte_conductivity(c_avg: float) -> float:
    """Bulk ionic conductivity in S/m as a function of the average concentration."""
    if np.any(np.asarray(c_avg) <= 0):
        raise ElectrolyteError("conductivity requires c_avg > 0")
    x = c_avg / 1000.0
    return (x / 1.05) ** 0.68 * np.exp(-0.1 * (x - 1.05) ** 2 - 0.56 * (x - 1.05))


def thermodynamic_factor(c_avg: float, T: float) -> float:
    x = c_avg / 1000.0
    return 0.601 - 0.24 * x ** 0.5 + 0.982 * (1.0 - 0.0052 * (T - 293.0)) * x ** 1.5


def region_porosity(grid: ElectrolyteGrid, geom: DerivedGeometry) -> np.ndarray:
    return np.array([geom.eps_n, geom.eps_s, geom.eps_p])[grid.region]


def average_concentration(c: np.ndarray, grid: ElectrolyteGrid) -> float:
    return float(np.dot(c, grid.widths) / grid.widths.sum())


def reaction_source(I: float, grid: ElectrolyteGrid, p: CellParameters) -> np.ndarray:
    """Pore-wall molar flux ``J`` per volume (mol/m^3/s)."""
    J = np.array([I / (p.A_cell * p.F * p.L_n), 0.0, -I / (p.A_cell * p.F * p.L_p)])
    return J[grid.region]


class ElectrolyteOperator:
    """Precomputed pieces of the electrolyte balance for repeated rhs evaluation."""

    def __init__(self, grid: ElectrolyteGrid, p: CellParameters, geom: DerivedGeometry | None = None):
        geom = geom or derive_geometry(p)
        self.grid = grid
        self.T = p.T
        self.eps = region_porosity(grid, geom)
        self.bruggeman = self.eps ** p.brugg
        self._scale = 1e-4 * self.bruggeman
        self.half = 0.5 * grid.widths
        self.capacity = self.eps * grid.widths  # eps * width
        self.unit_source = (1.0 - p.t_plus) * reaction_source(1.0, grid, p) * grid.widths

    def _effective_diffusivity(self, c: np.ndarray, slope: bool = False):
        """``D_eff`` (and ``dD_eff/dc`` when ``slope``); NaN outside the correlation's domain."""
        cm = c * 1e-3
        u = self.T - (206.25 + 10.0 * cm)
        D = self._scale * np.exp(_LN10 * (-4.51 - 59.22 / u) * cm)
        if u.min() <= 10.0 or c.min() < 0:  # at or below the pole, or negative
            D = np.where((c < 0) | (u <= 10.0), np.nan, D)
        if not slope:
            return D
        return D, D * _LN10 * 1e-3 * (-4.51 - 59.22 / u - 592.2 * cm / u**2)

    def __call__(self, c: np.ndarray, I: float) -> np.ndarray:
        D_eff = self._effective_diffusivity(c)
        # harmonic face coefficient: flux = -(c_R - c_L) / (h_L/D_L + h_R/D_R)
        resistance = self.half[:-1] / D_eff[:-1] + self.half[1:] / D_eff[1:]
        flux = -(c[1:] - c[:-1]) / resistance
        net = np.zeros_like(c)
        net[:-1] -= flux
        net[1:] += flux
        rhs = (net + I * self.unit_source) / self.capacity
        if not np.isfinite(rhs).all():
            bad = int(np.flatnonzero(~np.isfinite(rhs))[0])
            raise ElectrolyteError(f"non-finite electrolyte rhs at volume {bad}")
        return rhs

    def jacobian(self, c: np.ndarray) -> np.ndarray:
        """Dense ``d rhs / d c`` (tridiagonal)."""
        D, dD = self._effective_diffusivity(c, slope=True)
        hl, hr = self.half[:-1], self.half[1:]
        res = hl / D[:-1] + hr / D[1:]
        jump = c[1:] - c[:-1]
        dres_l = -hl * dD[:-1] / D[:-1] ** 2
        dres_r = -hr * dD[1:] / D[1:] ** 2
        # face flux derivatives with respect to its left and right volumes
        df_l = 1.0 / res + jump / res**2 * dres_l
        df_r = -1.0 / res + jump / res**2 * dres_r
        n = len(c)
        J = np.zeros((n, n))
        f = np.arange(n - 1)
        J[f, f] -= df_l
        J[f, f + 1] -= df_r
        J[f + 1, f] += df_l
        J[f + 1, f + 1] += df_r
        return J / self.capacity[:, None]


def assemble_electrolyte_rhs(c: np.ndarray, grid: ElectrolyteGrid, I: float,
                             p: CellParameters, geom: DerivedGeometry | None = None) -> np.ndarray:
    """dc/dt for every finite volume with zero flux at both current collectors."""
    return ElectrolyteOperator(grid, p, geom)(np.asarray(c, dtype=float), I)


def total_lithium(c: np.ndarray, grid: ElectrolyteGrid, geom: DerivedGeometry) -> float:
    """Moles of salt per unit area, ``sum(eps * width * c)``."""
    return float(np.sum(region_porosity(grid, geom) * grid.widths * c))


def boundary_concentrations(c: np.ndarray, grid: ElectrolyteGrid) -> tuple[float, float]:
    """Linear extrapolation of the two outermost volume centres to x=0 and x=L.

    ``c`` may carry extra trailing axes (one column per sample).
    """
    x = grid.x_centers
    L = x[-1] + 0.5 * grid.widths[-1]
    c0 = c[0] + (c[1] - c[0]) * (0.0 - x[0]) / (x[1] - x[0])
    cL = c[-1] + (c[-1] - c[-2]) * (L - x[-1]) / (x[-1] - x[-2])
    if np.ndim(c0):
        return c0, cL
    return float(c0), float(cL)


def electrolyte_potential_drop(c: np.ndarray, grid: ElectrolyteGrid, p: CellParameters) -> float:
    c0, cL = boundary_concentrations(c, grid)
    if c0 <= 0 or cL <= 0:
        raise ElectrolyteError("non-positive electrolyte boundary concentration")
    v = thermodynamic_factor(average_concentration(c, grid), p.T)
    return 2.0 * p.R_gas * p.T * v / p.F * np.log(cL / c0)


def electrolyte_resistance(c: np.ndarray, grid: ElectrolyteGrid, p: CellParameters,
                           geom: DerivedGeometry | None = None) -> float:
    geom = geom or derive_geometry(p)
    kappa = electrolyte_conductivity(average_concentration(c, grid))
    k_n, k_s, k_p = (kappa * e ** p.brugg for e in (geom.eps_n, geom.eps_s, geom.eps_p))
    return lumped_resistance(p, k_n, k_s, k_p)


def lumped_resistance(p: CellParameters, kappa_n: float, kappa_s: float, kappa_p: float) -> float:
    if np.any(np.minimum(np.minimum(kappa_n, kappa_s), kappa_p) <= 0):
        raise ElectrolyteError("zero effective conductivity")
    return (p.L_n / kappa_n + 2.0 * p.L_s / kappa_s + p.L_p / kappa_p) / (2.0 * p.A_cell)
