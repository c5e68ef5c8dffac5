import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coreshell_espm.config import derive_geometry
from coreshell_espm.electrolyte import (
    ElectrolyteError,
    assemble_electrolyte_rhs,
    build_grid,
    electrolyte_conductivity,
    electrolyte_diffusivity,
    electrolyte_potential_drop,
    electrolyte_resistance,
    lumped_resistance,
    thermodynamic_factor,
    total_lithium,
)


def test_diffusivity_reference_point():
    assert electrolyte_diffusivity(1000.0, 298.15) == pytest.approx(5.85e-10, rel=5e-3)


def test_diffusivity_zero_concentration_limit():
    assert electrolyte_diffusivity(1e-12, 298.15) == pytest.approx(1e-4, rel=1e-9)


def test_diffusivity_pole():
    with pytest.raises(ElectrolyteError, match="out of domain"):
        electrolyte_diffusivity(1000.0, 216.25)


def test_conductivity_values():
    assert electrolyte_conductivity(1050.0) == pytest.approx(1.0, abs=1e-15)
    # the closed form 2^0.68 exp(-0.1*1.05^2 - 0.56*1.05) evaluates to 0.797
    expected = 2**0.68 * np.exp(-0.1 * 1.05**2 - 0.56 * 1.05)
    assert electrolyte_conductivity(2100.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.797, abs=1e-3)


def test_thermodynamic_factor_values():
    assert thermodynamic_factor(1000.0, 293.0) == pytest.approx(1.343, abs=1e-12)
    assert thermodynamic_factor(0.0, 310.0) == pytest.approx(0.601)
    assert thermodynamic_factor(1000.0, 313.0) == pytest.approx(0.601 - 0.24 + 0.982 * 0.896, abs=1e-12)


def test_grid_widths_sum(p):
    grid = build_grid(p)
    assert grid.widths.sum() == pytest.approx(p.L_n + p.L_s + p.L_p, rel=1e-12)
    with pytest.raises(ValueError):
        build_grid(p, n_s=2)


def test_equilibrium_rhs_is_zero(p):
    grid = build_grid(p)
    rhs = assemble_electrolyte_rhs(np.full(grid.size, 1000.0), grid, 0.0, p)
    assert np.all(rhs == 0.0)


@given(st.floats(-200.0, 200.0), st.lists(st.floats(500.0, 1500.0), min_size=30, max_size=30))
def test_total_lithium_rate_vanishes(p, I, c):
    grid = build_grid(p)
    geom = derive_geometry(p)
    c = np.asarray(c)
    rhs = assemble_electrolyte_rhs(c, grid, I, p, geom)
    eps = np.array([geom.eps_n, geom.eps_s, geom.eps_p])[grid.region]
    scale = np.sum(eps * grid.widths * np.abs(rhs)) + 1e-30
    assert abs(np.sum(eps * grid.widths * rhs)) <= 1e-12 * scale


def test_discharge_raises_negative_side(p):
    grid = build_grid(p)
    rhs = assemble_electrolyte_rhs(np.full(grid.size, 1000.0), grid, 10.0, p)
    assert np.all(rhs[grid.region == 0] > 0)
    assert np.all(rhs[grid.region == 2] < 0)
    assert np.all(rhs[grid.region == 1] == 0)


def _steady_profile(p, I, n):
    from scipy.integrate import solve_ivp
    from coreshell_espm.electrolyte import ElectrolyteOperator

    grid = build_grid(p, n, n, n)
    op = ElectrolyteOperator(grid, p)
    sol = solve_ivp(lambda t, c: op(c, I), (0.0, 2e4), np.full(grid.size, 1000.0), method="BDF",
                    jac=lambda t, c: op.jacobian(c), rtol=1e-10, atol=1e-8)
    return grid, sol.y[:, -1]


@pytest.mark.parametrize("crate", [1 / 12, 1 / 2])
def test_steady_gradient_matches_fine_grid(p, crate):
    # compared on the volume unknowns; the collector extrapolation is a post-processing step
    grid, c = _steady_profile(p, crate * p.Q_nom, 10)
    fine_grid, fine = _steady_profile(p, crate * p.Q_nom, 40)
    ref = np.interp(grid.x_centers, fine_grid.x_centers, fine)
    drop = c[0] - c[-1]
    assert drop > 0  # discharge: higher concentration at the negative collector
    assert drop == pytest.approx(ref[0] - ref[-1], rel=5e-3)


def test_steady_profile_converges_second_order(p):
    ref_grid, ref = _steady_profile(p, p.Q_nom, 160)
    errors = []
    for n in (10, 20, 40):
        grid, c = _steady_profile(p, p.Q_nom, n)
        errors.append(np.max(np.abs(c - np.interp(grid.x_centers, ref_grid.x_centers, ref))))
    assert errors[0] / errors[1] > 3.5 and errors[1] / errors[2] > 3.5


def test_potential_drop(p):
    grid = build_grid(p)
    assert electrolyte_potential_drop(np.full(grid.size, 1000.0), grid, p) == 0.0
    c = np.linspace(1100.0, 900.0, grid.size)
    assert electrolyte_potential_drop(c, grid, p) < 0
    with pytest.raises(ElectrolyteError):
        electrolyte_potential_drop(np.linspace(10.0, -10.0, grid.size), grid, p)


def test_potential_drop_hand_value(p):
    q = p.replace(T=298.15)
    v = 1.343
    expected = 2 * q.R_gas * q.T * v / q.F
    assert expected == pytest.approx(0.0690, abs=1e-4)


def test_lumped_resistance(p):
    q = p.replace(L_n=1e-4, L_s=1e-4, L_p=1e-4, A_cell=1.491)
    assert lumped_resistance(q, 1.0, 1.0, 1.0) == pytest.approx(4e-4 / (2 * 1.491), rel=1e-12)
    assert lumped_resistance(q, 1.0, 1.0, 1.0) == pytest.approx(1.342e-4, rel=1e-3)
    double = q.replace(A_cell=2 * 1.491)
    assert lumped_resistance(double, 1.0, 1.0, 1.0) == lumped_resistance(q, 1.0, 1.0, 1.0) / 2
    with pytest.raises(ElectrolyteError):
        lumped_resistance(q, 1.0, 0.0, 1.0)


def test_resistance_uses_effective_conductivity(p):
    grid = build_grid(p)
    geom = derive_geometry(p)
    c = np.full(grid.size, 1050.0)
    k = [e**p.brugg for e in (geom.eps_n, geom.eps_s, geom.eps_p)]
    assert electrolyte_resistance(c, grid, p, geom) == pytest.approx(lumped_resistance(p, *k), rel=1e-12)


def test_jacobian_matches_finite_differences(p):
    from coreshell_espm.electrolyte import ElectrolyteOperator

    grid = build_grid(p)
    op = ElectrolyteOperator(grid, p)
    rng = np.random.default_rng(3)
    c = rng.uniform(800.0, 1200.0, grid.size)
    J = op.jacobian(c)
    fd = np.empty_like(J)
    for j in range(grid.size):
        h = 1e-4 * c[j]
        e = np.zeros(grid.size)
        e[j] = h
        fd[:, j] = (op(c + e, 5.0) - op(c - e, 5.0)) / (2 * h)
    assert np.max(np.abs(J - fd)) <= 1e-6 * np.max(np.abs(J))


def test_conservation_over_cycle(p):
    from coreshell_espm.checks import c12_run

    tr = c12_run(p, "discharge").trace
    lithium = tr.electrolyte_lithium
    assert np.max(np.abs(lithium - lithium[0])) / lithium[0] < 1e-6
    grid = build_grid(p)
    geom = derive_geometry(p)
    assert lithium[0] == pytest.approx(total_lithium(np.full(grid.size, p.c0_electrolyte), grid, geom))
