import time

import numpy as np
import pytest

from coreshell_espm.checks import bookkeeping_errors, c12_run
from coreshell_espm.coreshell import Direction, Mode, SignReversalError
from coreshell_espm.io import write_trace
from coreshell_espm.simulator import (
    AmbiguousPhaseError,
    CurrentProfile,
    SimulationOptions,
    initial_state,
    simulate,
)

I_C12 = 49.0 / 12.0


def test_initial_state_examples(p):
    s = initial_state(1.0, "discharge", p)
    assert s.regime.mode is Mode.ONE_PHASE_ALPHA
    assert np.all(s.positive.c_s_p == pytest.approx(0.070 * p.c_s_p_max))
    assert np.all(s.electrolyte == p.c0_electrolyte)
    s = initial_state(0.0, "charge", p)
    assert s.regime.mode is Mode.ONE_PHASE_BETA
    assert np.all(s.positive.c_s_p == pytest.approx(0.882 * p.c_s_p_max))
    assert np.all(s.negative == pytest.approx(0.010 * p.c_s_n_max))


def test_initial_state_in_plateau_rejected(p):
    soc0 = (p.theta_p_0 - 0.5) / (p.theta_p_0 - p.theta_p_100)
    with pytest.raises(AmbiguousPhaseError, match="ambiguous phase"):
        initial_state(soc0, "discharge", p)
    with pytest.raises(ValueError):
        initial_state(1.5, "discharge", p)


def test_profile_validation():
    with pytest.raises(ValueError):
        CurrentProfile(np.array([0.0, 10.0, 5.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        CurrentProfile(np.array([0.0, 10.0]), np.array([1.0, 2.0]))


def test_rest_is_fixed_point(p):
    init = initial_state(1.0, "discharge", p)
    tr = simulate(CurrentProfile.constant(0.0, 7200.0), init, p)
    assert np.ptp(tr.V) <= 1e-9
    assert np.all(tr.mode == Mode.ONE_PHASE_ALPHA.value)
    assert tr.events == []


def test_rest_inside_two_phase_holds_interface(p):
    """A pause inside the plateau keeps the interface value and relaxes the shell."""
    profile = CurrentProfile(np.array([0.0, 15000.0, 18600.0, 22000.0]), np.array([I_C12, 0.0, I_C12]),
                             V_min=2.5)
    tr = simulate(profile, initial_state(1.0, "discharge", p), p)
    rest = (tr.t >= 15000.0) & (tr.t < 18600.0)
    assert np.all(tr.mode[rest] == Mode.TWO_PHASE.value)
    rp = tr.rp_over_Rp[rest]
    assert np.all(np.diff(rp) <= 1e-12)  # non-increasing up to round-off once the gradient has relaxed
    assert tr.termination == "end" and tr.final_state.t == pytest.approx(22000.0)


def test_sign_reversal_in_two_phase_rejected(p):
    profile = CurrentProfile(np.array([0.0, 15000.0, 16000.0]), np.array([I_C12, -I_C12]))
    with pytest.raises(SignReversalError, match="two-phase"):
        simulate(profile, initial_state(1.0, "discharge", p), p)


@pytest.fixture(scope="module")
def runs(p):
    return {d: c12_run(p, d) for d in (Direction.DISCHARGE, Direction.CHARGE)}


def test_c12_discharge_lifecycle(runs):
    tr = runs[Direction.DISCHARGE].trace
    assert [e[1:] for e in tr.events] == [("one_phase_alpha", "two_phase"), ("two_phase", "one_phase_beta")]
    assert tr.termination == "V_min"
    assert tr.rp_over_Rp[tr.mode == "two_phase"].max() > 0.99


def test_c12_charge_lifecycle(runs):
    tr = runs[Direction.CHARGE].trace
    assert [e[1:] for e in tr.events] == [("one_phase_beta", "two_phase"), ("two_phase", "one_phase_alpha")]
    assert tr.termination == "V_max"


@pytest.mark.parametrize("direction", [Direction.DISCHARGE, Direction.CHARGE])
def test_charge_bookkeeping(p, runs, direction):
    err_n, err_p = bookkeeping_errors(runs[direction].trace, p)
    assert err_n < 5e-3
    assert err_p < 5e-3


@pytest.mark.parametrize("direction", [Direction.DISCHARGE, Direction.CHARGE])
def test_runtime(runs, direction):
    assert runs[direction].runtime < 10.0


@pytest.mark.parametrize("direction", [Direction.DISCHARGE, Direction.CHARGE])
def test_tolerance_halving(p, runs, direction):
    base = runs[direction].trace
    tight = c12_run(p, direction, SimulationOptions(rtol=0.5e-6, atol=0.5e-9)).trace
    n = min(len(base), len(tight)) - 1  # the final cutoff sample sits at slightly different times
    rms = np.sqrt(np.mean((base.V[:n] - tight.V[:n]) ** 2))
    assert rms < 1e-4


def test_event_idempotence(p, runs):
    base = runs[Direction.DISCHARGE].trace
    other = c12_run(p, Direction.DISCHARGE, SimulationOptions(dt_out=7.0)).trace
    assert len(other.events) == len(base.events)
    for a, b in zip(base.events, other.events):
        assert a[1:] == b[1:]
        assert a[0] == pytest.approx(b[0], rel=1e-9, abs=1e-6)


def test_uniform_sampling(runs):
    tr = runs[Direction.DISCHARGE].trace
    np.testing.assert_allclose(np.diff(tr.t), 60.0, rtol=0, atol=1e-9)


def test_capacity_limit(p):
    profile = CurrentProfile.c_rate(1.0, "discharge", p.Q_nom, capacity_limit=10.0)
    tr = simulate(profile, initial_state(1.0, "discharge", p), p)
    assert tr.termination == "capacity"
    assert tr.final_state.q_throughput == pytest.approx(10.0, rel=1e-9)


def test_trace_csv_columns(tmp_path, runs):
    path = tmp_path / "trace.csv"
    write_trace(runs[Direction.DISCHARGE].trace, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["t_s", "I_A", "V_V", "soc_n", "soc_p", "rp_over_Rp", "theta_p_surf", "theta_n_surf",
                      "U_p_V", "U_n_V", "eta_p_V", "eta_n_V", "dphi_e_V", "ohmic_V", "mode"]
    data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=range(14))
    np.testing.assert_allclose(data[:, 2], runs[Direction.DISCHARGE].trace.V, rtol=0, atol=1e-15)


def _discharge_voltage(crate):
    from coreshell_espm.config import example_parameters

    p = example_parameters()
    profile = CurrentProfile.c_rate(crate, "discharge", p.Q_nom)
    return simulate(profile, initial_state(1.0, "discharge", p), p).V


def test_concurrent_simulations_are_independent():
    # LSODA is not re-entrant, so concurrency is process based
    from concurrent.futures import ProcessPoolExecutor

    serial = [_discharge_voltage(c) for c in (1.0, 0.5)]
    with ProcessPoolExecutor(2) as pool:
        parallel = list(pool.map(_discharge_voltage, (1.0, 0.5)))
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)


def test_speed_smoke(p):
    started = time.perf_counter()
    simulate(CurrentProfile.c_rate(1.0, "charge", p.Q_nom), initial_state(0.0, "charge", p), p)
    assert time.perf_counter() - started < 10.0
