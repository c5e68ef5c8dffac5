"""Radial diffusion in a single spherical particle (negative electrode and one-phase positive).

Nodes sit on a uniform grid ``r_j = j R/(N-1)``. The centre node uses the
symmetry limit ``3 D c_rr`` and the surface node a ghost node carrying the
Neumann flux, which makes the scheme exact for the quadratic quasi-steady
profile of a constant-current particle.
"""
from __future__ import annotations

import numpy as np

from .config import CellParameters, DerivedGeometry, derive_geometry


class SaturationError(RuntimeError):
    """Surface stoichiometry left (0, 1); silent clamping would corrupt identification."""


def diffusion_matrix(N: int, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(M, s)`` with ``dc/dt = D*(M @ c) + D*s*dc/dr|_R``."""
    if N < 5:
        raise ValueError("at least 5 radial nodes are required")
    dr = R / (N - 1)
    r = np.arange(N) * dr
    M = np.zeros((N, N))
    M[0, 0] = -6.0 / dr**2
    M[0, 1] = 6.0 / dr**2
    for j in range(1, N - 1):
        M[j, j - 1] = 1.0 / dr**2 - 1.0 / (r[j] * dr)
        M[j, j] = -2.0 / dr**2
        M[j, j + 1] = 1.0 / dr**2 + 1.0 / (r[j] * dr)
    # ghost node c_N = c_{N-2} + 2 dr g
    M[-1, -2] = 2.0 / dr**2
    M[-1, -1] = -2.0 / dr**2
    s = np.zeros(N)
    s[-1] = 2.0 / dr + 2.0 / R
    return M, s


def quadrature_weights(N: int, R: float) -> np.ndarray:
    """Trapezoidal weights of ``c r^2`` normalised so a uniform profile integrates to itself."""
    r = np.linspace(0.0, R, N)
    w = r**2
    w[0] *= 0.5
    w[-1] *= 0.5
    return w / w.sum()


def surface_gradient_n(I: float, p: CellParameters, geom: DerivedGeometry) -> float:
    return -I / (p.D_s_n * geom.a_n * p.A_cell * p.F * p.L_n)


def surface_gradient_p(I: float, p: CellParameters, geom: DerivedGeometry) -> float:
    return I / (p.D_s_p * geom.a_p * p.A_cell * p.F * p.L_p)


class SphereOperator:
    """Linear operator ``dc/dt = A c + b I`` for one electrode's particle."""

    def __init__(self, N: int, R: float, D: float, gradient_per_amp: float):
        M, s = diffusion_matrix(N, R)
        self.A = D * M
        self.b = D * s * gradient_per_amp
        self.weights = quadrature_weights(N, R)

    def __call__(self, c: np.ndarray, I: float) -> np.ndarray:
        rhs = self.A @ c + self.b * I
        if not np.all(np.isfinite(rhs)):
            raise FloatingPointError("non-finite particle rhs")
        return rhs


def negative_operator(p: CellParameters, geom: DerivedGeometry | None = None,
                      N: int | None = None) -> SphereOperator:
    geom = geom or derive_geometry(p)
    return SphereOperator(N or p.N_rn, p.R_n, p.D_s_n, surface_gradient_n(1.0, p, geom))


def positive_operator(p: CellParameters, geom: DerivedGeometry | None = None,
                      N: int | None = None) -> SphereOperator:
    geom = geom or derive_geometry(p)
    return SphereOperator(N or p.N_rp, p.R_p, p.D_s_p, surface_gradient_p(1.0, p, geom))


def assemble_negative_rhs(c_s_n: np.ndarray, I: float, p: CellParameters,
                          geom: DerivedGeometry | None = None) -> np.ndarray:
    c_s_n = np.asarray(c_s_n, dtype=float)
    return negative_operator(p, geom, len(c_s_n))(c_s_n, I)


def bulk_stoichiometry(c: np.ndarray, c_max: float) -> float:
    c = np.asarray(c, dtype=float)
    w = quadrature_weights(len(c), 1.0)
    return float(w @ c) / c_max


def bulk_stoichiometry_n(c_s_n: np.ndarray, p: CellParameters) -> float:
    return bulk_stoichiometry(c_s_n, p.c_s_n_max)
