"""Cell parameters, derived geometry and JSON configuration handling.

All quantities are SI. Capacities (``Q_nom``) are the only Ah-valued fields.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for unparsable configuration files or violated parameter invariants."""


# Fields identified from cycling data, in the order used by the optimizer.
THETA_FIELDS: tuple[str, ...] = (
    "R_n",
    "R_p",
    "A_cell",
    "D_s_n",
    "D_s_p",
    "theta_n_100",
    "theta_n_0",
    "theta_p_100",
    "theta_p_0",
    "theta_p_alpha",
    "theta_p_beta",
    "R_l",
)

# Material/geometry constants that have no published identified value and
# therefore must be given explicitly in every config file.
REQUIRED_FIELDS: tuple[str, ...] = (
    "L_n",
    "L_s",
    "L_p",
    "c_s_n_max",
    "c_s_p_max",
    "nu_n",
    "nu_p",
    "nu_n_filler",
    "nu_p_filler",
    "eps_s",
    "brugg",
    "t_plus",
    "c0_electrolyte",
    "k_n",
    "k_p",
)

_INT_FIELDS = ("N_r", "N_rp", "N_rn", "n_xn", "n_xs", "n_xp")
_STR_FIELDS = ("transition_trigger", "ocp_negative", "shell_scheme")
TRIGGERS = ("surface", "bulk")
SHELL_SCHEMES = ("second_order", "first_order")


@dataclass(frozen=True)
class CellParameters:
    """Immutable parameter record for one LFP/graphite cell.

    The identified vector (``THETA_FIELDS``) defaults to the values identified
    for a 49 Ah pouch cell; the remaining material constants are required.
    """

    # required literature constants (no defaults)
    L_n: float
    L_s: float
    L_p: float
    c_s_n_max: float
    c_s_p_max: float
    nu_n: float
    nu_p: float
    nu_n_filler: float
    nu_p_filler: float
    eps_s: float
    brugg: float
    t_plus: float
    c0_electrolyte: float
    k_n: float
    k_p: float
    # identified vector
    R_n: float = 1.0e-6
    R_p: float = 4.3e-8
    A_cell: float = 1.491
    D_s_n: float = 6.9e-12
    D_s_p: float = 3.1e-17
    theta_n_100: float = 0.835
    theta_n_0: float = 0.010
    theta_p_100: float = 0.070
    theta_p_0: float = 0.882
    theta_p_alpha: float = 0.198
    theta_p_beta: float = 0.800
    R_l: float = 0.001
    # operating point and physical constants
    T: float = 298.15
    F: float = 96485.33212
    R_gas: float = 8.314462618
    Q_nom: float = 49.0
    # moving-boundary offsets, as fractions of R_p
    epsilon_init_frac: float = 0.001
    rho_frac: float = 0.001
    # discretization
    N_r: int = 30
    N_rp: int = 30
    N_rn: int = 20
    n_xn: int = 10
    n_xs: int = 10
    n_xp: int = 10
    transition_trigger: str = "surface"
    ocp_negative: str = "kumaresan2008"
    shell_scheme: str = "second_order"  # "first_order": one-sided interface and upwind advection

    def __post_init__(self) -> None:
        validate(self)

    # convenience ---------------------------------------------------------
    @property
    def c_alpha(self) -> float:
        return self.theta_p_alpha * self.c_s_p_max

    @property
    def c_beta(self) -> float:
        return self.theta_p_beta * self.c_s_p_max

    @property
    def epsilon(self) -> float:
        return self.epsilon_init_frac * self.R_p

    @property
    def rho(self) -> float:
        return self.rho_frac * self.R_p

    @property
    def L_total(self) -> float:
        return self.L_n + self.L_s + self.L_p

    def theta_vector(self) -> list[float]:
        return [getattr(self, name) for name in THETA_FIELDS]

    def with_theta(self, theta) -> "CellParameters":
        """Return a copy with the identified vector replaced by ``theta``."""
        return dataclasses.replace(self, **{k: float(v) for k, v in zip(THETA_FIELDS, theta)})

    def replace(self, **changes: Any) -> "CellParameters":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; used in run manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class DerivedGeometry:
    a_n: float
    a_p: float
    eps_n: float
    eps_s: float
    eps_p: float


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def validate(p: CellParameters) -> None:
    """Check every parameter invariant; raise :class:`ConfigError` naming the first violation."""
    positive = (
        "R_n", "R_p", "L_n", "L_s", "L_p", "A_cell", "D_s_n", "D_s_p",
        "c_s_n_max", "c_s_p_max", "nu_n", "nu_p", "k_n", "k_p", "T", "F",
        "R_gas", "Q_nom", "c0_electrolyte", "eps_s",
    )
    for name in positive:
        value = getattr(p, name)
        _check(isinstance(value, (int, float)) and value > 0, f"{name} > 0 violated (got {value!r})")
    for name in ("nu_n_filler", "nu_p_filler", "R_l", "brugg"):
        _check(getattr(p, name) >= 0, f"{name} >= 0 violated")
    _check(0 <= p.t_plus < 1, "0 <= t_plus < 1 violated")
    _check(p.eps_s < 1, "eps_s < 1 violated")

    _check(0 < p.theta_n_0, "0 < theta_n_0 violated")
    _check(p.theta_n_0 < p.theta_n_100, "theta_n_0 < theta_n_100 violated")
    _check(p.theta_n_100 < 1, "theta_n_100 < 1 violated")
    _check(0 < p.theta_p_100, "0 < theta_p_100 violated")
    _check(p.theta_p_100 <= p.theta_p_alpha, "theta_p_100 <= theta_p_alpha violated")
    _check(p.theta_p_alpha < p.theta_p_beta, "theta_p_alpha < theta_p_beta violated")
    _check(p.theta_p_beta <= p.theta_p_0, "theta_p_beta <= theta_p_0 violated")
    _check(p.theta_p_0 < 1, "theta_p_0 < 1 violated")

    _check(0 < p.epsilon_init_frac <= 0.01, "0 < epsilon_init_frac <= 0.01 violated")
    _check(0 < p.rho_frac <= 0.01, "0 < rho_frac <= 0.01 violated")

    for name in _INT_FIELDS:
        _check(isinstance(getattr(p, name), int), f"{name} must be an integer")
    _check(p.N_r >= (4 if p.shell_scheme == "second_order" else 3),
           "N_r >= 4 violated (3 with the first-order shell scheme)")
    _check(p.N_rp >= 5, "N_rp >= 5 violated")
    _check(p.N_rn >= 5, "N_rn >= 5 violated")
    for name in ("n_xn", "n_xs", "n_xp"):
        _check(getattr(p, name) >= 3, f"{name} >= 3 violated")
    _check(p.transition_trigger in TRIGGERS, f"transition_trigger must be one of {TRIGGERS}")
    _check(p.shell_scheme in SHELL_SCHEMES, f"shell_scheme must be one of {SHELL_SCHEMES}")


def derive_geometry(p: CellParameters) -> DerivedGeometry:
    """Specific active area ``3*nu/R`` and porosity ``1 - nu - nu_filler`` per electrode."""
    eps_n = 1.0 - p.nu_n - p.nu_n_filler
    eps_p = 1.0 - p.nu_p - p.nu_p_filler
    for name, eps in (("eps_n", eps_n), ("eps_p", eps_p)):
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"non-physical porosity: {name} = {eps:.6g}")
    return DerivedGeometry(
        a_n=3.0 * p.nu_n / p.R_n,
        a_p=3.0 * p.nu_p / p.R_p,
        eps_n=eps_n,
        eps_s=p.eps_s,
        eps_p=eps_p,
    )


def capacity(p: CellParameters, electrode: str) -> float:
    """Electrode capacity in Ah from its stoichiometric window."""
    if electrode == "n":
        window = abs(p.theta_n_100 - p.theta_n_0)
        return p.nu_n * p.F * p.L_n * p.A_cell * p.c_s_n_max * window / 3600.0
    if electrode == "p":
        window = abs(p.theta_p_100 - p.theta_p_0)
        return p.nu_p * p.F * p.L_p * p.A_cell * p.c_s_p_max * window / 3600.0
    raise ValueError(f"unknown electrode {electrode!r}")


_FIELD_TYPES = {f.name: f for f in fields(CellParameters)}


def _coerce(name: str, value: Any) -> Any:
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be numeric (got {value!r})")
    if name in _INT_FIELDS:
        if float(value) != int(value):
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    return float(value)


def from_mapping(data: Mapping[str, Any]) -> CellParameters:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [name for name in REQUIRED_FIELDS if name not in data]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs = {name: _coerce(name, value) for name, value in data.items()}
    return CellParameters(**kwargs)


def load_config(path: str | Path) -> CellParameters:
    """Read a JSON config; unknown keys are rejected, optional keys take defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return from_mapping(data)


def save_config(p: CellParameters, path: str | Path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=2, sort_keys=True) + "\n")


def apply_overrides(p: CellParameters, overrides: Mapping[str, str]) -> CellParameters:
    """Apply ``key=value`` style string overrides, re-validating the result."""
    changes = {}
    for key, raw in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown override key {key!r}")
        if key in _STR_FIELDS:
            changes[key] = raw
        else:
            try:
                changes[key] = _coerce(key, json.loads(raw))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"override {key}={raw!r} is not a number") from exc
    return dataclasses.replace(p, **changes)


def example_config_path() -> Path:
    return Path(__file__).parent / "data" / "example_cell.json"


def example_parameters() -> CellParameters:
    return load_config(example_config_path())
