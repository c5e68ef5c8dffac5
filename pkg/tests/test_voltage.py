import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coreshell_espm.checks import c12_run, ocp_hysteresis, plateau_band
from coreshell_espm.config import derive_geometry
from coreshell_espm.coreshell import Direction, Mode
from coreshell_espm.simulator import initial_state
from coreshell_espm.voltage import (
    VoltageError,
    assemble_voltage,
    cell_voltage,
    exchange_current,
    ocp_negative,
    ocp_positive,
    overpotential,
    soc,
    soc_from_bulk,
)


# ---- open-circuit potentials ---------------------------------------------------------

def test_positive_ocp_midpoint_values():
    assert ocp_positive(0.5, "discharge") == pytest.approx(3.382, abs=1e-3)
    assert ocp_positive(0.5, "charge") == pytest.approx(3.450, abs=1e-3)
    gap = ocp_positive(0.5, "charge") - ocp_positive(0.5, "discharge")
    assert gap == pytest.approx(0.068, abs=1e-3)


def test_positive_ocp_charge_correction_term():
    # the charge branch carries 10^-2.123 exp(16.56 (1-theta)^24.08) ~ 0.0075 V at the midpoint
    term = 10.0**-2.123 * np.exp(16.56 * 0.5**24.08)
    assert term == pytest.approx(0.0075, abs=1e-4)
    assert ocp_positive(0.5, "charge") == pytest.approx(3.442 + term, abs=1e-6)


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.1, 1.2])
def test_positive_ocp_domain(theta):
    with pytest.raises(VoltageError):
        ocp_positive(theta, "discharge")


def test_negative_ocp_domain_and_names(p):
    assert 0.0 < ocp_negative(0.5, p) < 0.3
    assert 0.0 < ocp_negative(0.5, "safari2011") < 0.3
    with pytest.raises(VoltageError):
        ocp_negative(1.0, p)
    with pytest.raises(VoltageError):
        ocp_negative(0.5, "unknown")


def test_plateau_flatness(p):
    theta = np.linspace(p.theta_p_alpha + 0.05, p.theta_p_beta - 0.05, 2001)
    u = ocp_positive(theta, "discharge")
    assert u.max() - u.min() < 0.010


def test_hysteresis_ordering():
    assert ocp_hysteresis().passed


@given(st.floats(0.1, 0.9))
def test_hysteresis_property(theta):
    assert ocp_positive(theta, "charge") >= ocp_positive(theta, "discharge")


# ---- kinetics ------------------------------------------------------------------------

def test_exchange_current_value():
    i0 = exchange_current(1e-11, 1050.0, 11400.0, 22800.0, 96485.0)
    assert i0 == pytest.approx(1e-11 * 96485.0 * np.sqrt(1050.0 * 11400.0 * 11400.0), rel=1e-14)
    assert i0 == pytest.approx(0.356, abs=1e-3)


def test_exchange_current_maximum_at_midpoint():
    c = np.linspace(100.0, 22700.0, 2001)
    i0 = exchange_current(1e-11, 1000.0, c, 22800.0, 96485.0)
    assert c[np.argmax(i0)] == pytest.approx(11400.0, abs=12.0)


@given(st.floats(1.0, 5000.0), st.floats(100.0, 22700.0))
def test_exchange_current_square_root_scaling(c_avg, c_surf):
    a = exchange_current(1e-11, c_avg, c_surf, 22800.0, 96485.0)
    b = exchange_current(1e-11, 4.0 * c_avg, c_surf, 22800.0, 96485.0)
    assert b == pytest.approx(2.0 * a, rel=1e-12)


@pytest.mark.parametrize("c_surf", [0.0, 22800.0])
def test_exchange_current_vanishes_at_limits(c_surf):
    with pytest.raises(VoltageError):
        exchange_current(1e-11, 1000.0, c_surf, 22800.0, 96485.0)


def test_overpotential_signs(p):
    geom = derive_geometry(p)
    assert overpotential("n", 0.0, 0.3, p, geom) == 0.0
    assert overpotential("p", 0.0, 0.3, p, geom) == 0.0
    assert overpotential("n", 4.0, 0.3, p, geom) > 0.0
    assert overpotential("p", 4.0, 0.3, p, geom) < 0.0
    assert overpotential("n", -4.0, 0.3, p, geom) < 0.0
    assert overpotential("p", -4.0, 0.3, p, geom) > 0.0
    with pytest.raises(VoltageError):
        overpotential("n", 1.0, 0.0, p, geom)


@pytest.mark.parametrize("electrode", ["n", "p"])
def test_overpotential_small_signal_linearity(p, electrode):
    geom = derive_geometry(p)
    a = geom.a_n if electrode == "n" else geom.a_p
    L = p.L_n if electrode == "n" else p.L_p
    i0 = 0.3
    I = 0.09 * 2.0 * p.A_cell * a * L * i0  # argument 0.09
    linear = p.R_gas * p.T / (0.5 * p.F) * I / (2.0 * p.A_cell * a * L * i0)
    assert abs(overpotential(electrode, I, i0, p, geom)) == pytest.approx(linear, rel=1e-2)


# ---- terminal voltage ----------------------------------------------------------------

def test_equilibrium_voltage_is_ocp_difference(p):
    state = initial_state(1.0, "discharge", p)
    bd = cell_voltage(state, 0.0, p)
    expected = ocp_positive(p.theta_p_100, "discharge") - ocp_negative(p.theta_n_100, p)
    assert bd.V_cell == pytest.approx(expected, abs=1e-14)
    assert bd.eta_n == bd.eta_p == bd.ohmic == 0.0
    assert bd.delta_phi_e == pytest.approx(0.0, abs=1e-15)


def test_contact_resistance_lowers_voltage_linearly(p):
    state = initial_state(1.0, "discharge", p)
    I = 4.083
    a = cell_voltage(state, I, p).V_cell
    b = cell_voltage(state, I, p.replace(R_l=p.R_l + 0.01)).V_cell
    assert a - b == pytest.approx(0.01 * I, abs=1e-12)


@given(
    U_p=st.floats(3.0, 3.6), U_n=st.floats(0.0, 1.0), eta_p=st.floats(-0.1, 0.1),
    eta_n=st.floats(-0.1, 0.1), dphi=st.floats(-0.05, 0.05), I=st.floats(-100, 100),
    R_l=st.floats(0, 0.01), R_el=st.floats(0, 0.01),
)
def test_breakdown_sums_to_cell_voltage(U_p, U_n, eta_p, eta_n, dphi, I, R_l, R_el):
    bd = assemble_voltage(U_p, U_n, eta_p, eta_n, dphi, I, R_l, R_el)
    total = bd.phi_p - bd.phi_n + bd.delta_phi_e - bd.ohmic
    assert bd.V_cell == pytest.approx(total, abs=1e-14)
    assert bd.ohmic == pytest.approx(I * (R_l + R_el), abs=1e-15)


# ---- state of charge -----------------------------------------------------------------

def test_soc_window_examples(p):
    assert soc_from_bulk(p.theta_n_100, p.theta_p_100, p) == pytest.approx((1.0, 1.0), abs=1e-15)
    assert soc_from_bulk(p.theta_n_0, p.theta_p_0, p) == pytest.approx((0.0, 0.0), abs=1e-15)
    assert soc_from_bulk(0.4225, 0.5, p)[0] == pytest.approx(0.5, abs=1e-12)


def test_soc_of_initial_states(p):
    for soc0, direction in ((1.0, "discharge"), (0.0, "charge"), (0.1, "charge")):
        s_n, s_p = soc(initial_state(soc0, direction, p), p)
        assert s_n == pytest.approx(soc0, abs=1e-12)
        assert s_p == pytest.approx(soc0, abs=1e-12)


@pytest.fixture(scope="module")
def runs(p):
    return {d: c12_run(p, d) for d in (Direction.DISCHARGE, Direction.CHARGE)}


@pytest.mark.parametrize("direction", [Direction.DISCHARGE, Direction.CHARGE])
def test_electrode_socs_track_each_other(runs, direction):
    tr = runs[direction].trace
    assert np.max(np.abs(tr.soc_n - tr.soc_p)) < 0.01


@pytest.mark.parametrize("direction", [Direction.DISCHARGE, Direction.CHARGE])
def test_simulated_breakdown_consistent(runs, direction):
    tr = runs[direction].trace
    total = tr.U_p + tr.eta_p - tr.U_n - tr.eta_n + tr.dphi_e - tr.ohmic
    np.testing.assert_allclose(tr.V, total, rtol=0, atol=1e-14)


def test_discharge_plateau_band_example(runs):
    """Two-phase C/12 discharge voltage within 3.20-3.35 V."""
    result = plateau_band(runs[Direction.DISCHARGE], (3.20, 3.35))
    assert result.passed, result.line()


def test_discharge_plateau_shape(runs):
    tr = runs[Direction.DISCHARGE].trace
    V = tr.V[tr.mode == Mode.TWO_PHASE.value]
    assert np.all(np.diff(V) <= 1e-6)  # no bumps along the plateau at constant current
