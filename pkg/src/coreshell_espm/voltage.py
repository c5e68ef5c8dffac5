"""Open-circuit potentials, kinetics, terminal voltage and electrode SOC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import CellParameters, DerivedGeometry
from .coreshell import Direction


class VoltageError(ArithmeticError):
    pass


def ocp_positive(theta, branch: "Direction | str"):
    """LiFePO4 potential vs Li in V; separate charge and discharge branches."""
    branch = Direction.parse(branch)
    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 0) | (theta >= 1)):
        raise VoltageError("positive surface stoichiometry outside (0, 1)")
    y = 1.0 - theta
    if branch is Direction.DISCHARGE:
        u = (3.382 - 0.2955 * np.exp(-44.99 * y**0.8707)
             + 10.0**-20.71 * np.exp(14.17 * y**8.128)
             + 10.0**-40.82 * np.exp(100.0 * y**1.213))
    else:
        u = (3.442 - 0.1774 * np.exp(-127.7 * y**0.7921)
             + 10.0**-2.123 * np.exp(16.56 * y**24.08)
             + 10.0**-10.29 * np.exp(99.91 * y**22.17))
    return u if u.ndim else float(u)


def _graphite_kumaresan(x):
    # Kumaresan, Sikha & White, J. Electrochem. Soc. 155 (2008) A164; also used in LIONSIMBA.
    return (0.7222 + 0.1387 * x + 0.029 * x**0.5 - 0.0172 / x + 0.0019 / x**1.5
            + 0.2808 * np.exp(0.9 - 15.0 * x) - 0.7984 * np.exp(0.4465 * x - 0.4108))


def _graphite_safari(x):
    # Safari & Delacourt, J. Electrochem. Soc. 158 (2011) A562.
    return (0.6379 + 0.5416 * np.exp(-305.5309 * x)
            + 0.044 * np.tanh(-(x - 0.1958) / 0.1088)
            - 0.1978 * np.tanh((x - 1.0571) / 0.0854)
            - 0.6875 * np.tanh((x + 0.0117) / 0.0529)
            - 0.0175 * np.tanh((x - 0.5692) / 0.0875))


NEGATIVE_OCP: dict[str, Callable] = {
    "kumaresan2008": _graphite_kumaresan,
    "safari2011": _graphite_safari,
}


def ocp_negative(theta, p: CellParameters | str = "kumaresan2008"):
    name = p if isinstance(p, str) else p.ocp_negative
    try:
        fn = NEGATIVE_OCP[name]
    except KeyError:
        raise VoltageError(f"unknown negative OCP {name!r}") from None
    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 0) | (theta >= 1)):
        raise VoltageError("negative surface stoichiometry outside (0, 1)")
    u = fn(theta)
    return u if u.ndim else float(u)


def exchange_current(k: float, c_avg: float, c_surf: float, c_max: float, F: float) -> float:
    """``i0 = k F sqrt(c_e c_s (c_max - c_s))`` in A/m^2."""
    if np.any(np.asarray(c_avg) <= 0):
        raise VoltageError("exchange current needs c_avg > 0")
    if np.any((np.asarray(c_surf) <= 0.0) | (np.asarray(c_surf) >= c_max)):
        raise VoltageError("zero exchange current: surface concentration at 0 or c_max")
    return k * F * np.sqrt(c_avg * c_surf * (c_max - c_surf))


def overpotential(electrode: str, I: float, i0: float, p: CellParameters, geom: DerivedGeometry) -> float:
    """Symmetric Butler-Volmer overpotential.

    Current is electrode-signed: ``+I`` at the negative and ``-I`` at the
    positive electrode, so both overpotentials reduce the voltage on discharge.
    """
    if np.any(np.asarray(i0) <= 0):
        raise VoltageError("overpotential needs i0 > 0")
    if electrode == "n":
        arg = I / (2.0 * p.A_cell * geom.a_n * p.L_n * i0)
    elif electrode == "p":
        arg = -I / (2.0 * p.A_cell * geom.a_p * p.L_p * i0)
    else:
        raise ValueError(f"unknown electrode {electrode!r}")
    return p.R_gas * p.T / (0.5 * p.F) * np.arcsinh(arg)


@dataclass(frozen=True)
class VoltageBreakdown:
    U_p: float
    U_n: float
    eta_p: float
    eta_n: float
    delta_phi_e: float
    ohmic: float
    V_cell: float

    @property
    def phi_p(self) -> float:
        return self.U_p + self.eta_p

    @property
    def phi_n(self) -> float:
        return self.U_n + self.eta_n


def assemble_voltage(U_p: float, U_n: float, eta_p: float, eta_n: float, delta_phi_e: float,
                     I: float, R_l: float, R_el: float) -> VoltageBreakdown:
    ohmic = I * (R_l + R_el)
    V = (U_p + eta_p) - (U_n + eta_n) + delta_phi_e - ohmic
    return VoltageBreakdown(U_p, U_n, eta_p, eta_n, delta_phi_e, ohmic, V)


def soc_from_bulk(theta_n_bulk: float, theta_p_bulk: float, p: CellParameters) -> tuple[float, float]:
    soc_n = (theta_n_bulk - p.theta_n_0) / (p.theta_n_100 - p.theta_n_0)
    soc_p = (p.theta_p_0 - theta_p_bulk) / (p.theta_p_0 - p.theta_p_100)
    return soc_n, soc_p


def cell_voltage(state, I: float, p: CellParameters, geom: DerivedGeometry | None = None) -> VoltageBreakdown:
    """Terminal voltage breakdown of a :class:`~coreshell_espm.model.CellState`."""
    from .model import CellModel

    return CellModel(p).state_voltage(state, I)


def soc(state, p: CellParameters, I: float = 0.0) -> tuple[float, float]:
    """``(SOC_n, SOC_p)`` from the bulk stoichiometries of both particles."""
    from .model import CellModel

    return CellModel(p).state_soc(state, I)
