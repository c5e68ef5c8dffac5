import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coreshell_espm.config import (
    THETA_FIELDS,
    ConfigError,
    apply_overrides,
    capacity,
    derive_geometry,
    example_config_path,
    load_config,
    save_config,
)


def _write(tmp_path, data):
    path = tmp_path / "cell.json"
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def raw():
    return json.loads(example_config_path().read_text())


def test_example_config_accepts_phase_boundaries(p):
    assert p.theta_p_alpha == 0.198
    assert p.theta_p_beta == 0.800


def test_reversed_phase_boundaries_rejected(tmp_path, raw):
    raw.update(theta_p_alpha=0.9, theta_p_beta=0.8)
    with pytest.raises(ConfigError, match="theta_p_alpha < theta_p_beta violated"):
        load_config(_write(tmp_path, raw))


def test_missing_epsilon_gets_default(tmp_path, raw):
    del raw["epsilon_init_frac"]
    assert load_config(_write(tmp_path, raw)).epsilon_init_frac == 0.001


def test_unknown_key_rejected(tmp_path, raw):
    raw["theta_p_alfa"] = 0.2
    with pytest.raises(ConfigError, match="theta_p_alfa"):
        load_config(_write(tmp_path, raw))


def test_missing_required_constant_rejected(tmp_path, raw):
    del raw["L_n"]
    with pytest.raises(ConfigError, match="L_n"):
        load_config(_write(tmp_path, raw))


def test_unparseable_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("field,value", [
    ("R_p", -1e-8), ("D_s_n", 0.0), ("theta_n_0", 0.9), ("epsilon_init_frac", 0.02),
    ("rho_frac", 0.0), ("theta_p_100", 0.25), ("theta_p_0", 0.75),
])
def test_invariant_violations_name_the_field(p, field, value):
    with pytest.raises(ConfigError, match=field):
        p.replace(**{field: value})


def test_active_area(p):
    g = derive_geometry(p)
    assert g.a_p == pytest.approx(3 * 0.5 / 4.3e-8, rel=1e-12)
    assert g.a_p == pytest.approx(3.488e7, rel=1e-3)


def test_porosity(p):
    g = derive_geometry(p.replace(nu_n=0.5, nu_n_filler=0.05))
    assert g.eps_n == pytest.approx(0.45)
    assert g.eps_s == p.eps_s


def test_non_physical_porosity(p):
    with pytest.raises(ConfigError, match="non-physical porosity"):
        derive_geometry(p.replace(nu_n=1.0, nu_n_filler=0.1))


def test_round_trip(tmp_path, p):
    path = tmp_path / "out.json"
    save_config(p, path)
    assert load_config(path) == p


@given(st.floats(1e-7, 1e-5), st.floats(1e-9, 1e-6))
def test_doubling_radius_halves_area(p, R_n, R_p):
    a = derive_geometry(p.replace(R_n=R_n, R_p=R_p))
    b = derive_geometry(p.replace(R_n=2 * R_n, R_p=2 * R_p))
    assert b.a_n == a.a_n / 2
    assert b.a_p == a.a_p / 2


def test_overrides_are_typed(p):
    q = apply_overrides(p, {"N_r": "60", "R_l": "0.002", "shell_scheme": "first_order"})
    assert q.N_r == 60 and isinstance(q.N_r, int)
    assert q.R_l == 0.002
    assert q.shell_scheme == "first_order"
    with pytest.raises(ConfigError):
        apply_overrides(p, {"nonsense": "1"})
    with pytest.raises(ConfigError):
        apply_overrides(p, {"N_r": "abc"})


def test_theta_vector_round_trip(p):
    theta = p.theta_vector()
    assert len(theta) == len(THETA_FIELDS) == 12
    assert p.with_theta(theta) == p


def test_capacity_formula(p):
    expected = p.nu_n * p.F * p.L_n * p.A_cell * p.c_s_n_max * (p.theta_n_100 - p.theta_n_0) / 3600
    assert capacity(p, "n") == pytest.approx(expected, rel=1e-14)
    # the example cell is built to hold its nominal capacity on both electrodes
    assert 44.1 <= capacity(p, "n") <= 53.9
    assert 44.1 <= capacity(p, "p") <= 53.9
    assert math.isclose(capacity(p, "n"), capacity(p, "p"), rel_tol=1e-3)
