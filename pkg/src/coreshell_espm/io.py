"""CSV ingestion and emission, run manifests and derived plots.

CSV with SI-unit headers is the only interchange format; plots are written
for inspection and never read back.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import THETA_FIELDS, CellParameters
from .coreshell import Direction
from .identification import Dataset, DatasetError
from .simulator import CurrentProfile, SimulationTrace
from .voltage import ocp_negative, ocp_positive

DATASET_COLUMNS = ("t_s", "I_A", "V_V")
SCHEDULE_COLUMNS = ("t_s", "I_A")
BOUNDS_COLUMNS = ("symbol", "lower_bound", "upper_bound")
OCP_COLUMNS = ("theta", "U_p_discharge_V", "U_p_charge_V", "U_n_V")


def _read_table(path: str | Path, required: Sequence[str]) -> dict[str, np.ndarray]:
    """Read numeric columns by header name; errors carry the 1-based data row."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DatasetError(f"{path}: header must contain {', '.join(required)}; "
                               f"missing {', '.join(missing)}")
        index = [header.index(c) for c in required]
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise DatasetError(f"{path}: expected {len(header)} fields, got {len(row)}", row=row_no)
            try:
                rows.append([float(row[i]) for i in index])
            except ValueError as exc:
                raise DatasetError(f"{path}: {exc}", row=row_no) from exc
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows)
    return {c: data[:, k] for k, c in enumerate(required)}


def read_dataset(path: str | Path, direction: "Direction | str", Q_nom: float, soc0: float,
                 name: str | None = None) -> Dataset:
    """Load a ``t_s,I_A,V_V`` record. Validation failures raise :class:`DatasetError`."""
    cols = _read_table(path, DATASET_COLUMNS)
    try:
        return Dataset(cols["t_s"], cols["I_A"], cols["V_V"], direction, Q_nom, soc0,
                       name if name is not None else Path(path).stem)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    _write_columns(path, DATASET_COLUMNS, np.column_stack([dataset.t, dataset.I, dataset.V]))


def read_schedule(path: str | Path, V_min: float | None = None, V_max: float | None = None) -> CurrentProfile:
    """Load a ``t_s,I_A`` schedule; row ``k`` holds ``I_A`` until the next row's time.

    The last row only marks the end time, so its current is ignored.
    """
    cols = _read_table(path, SCHEDULE_COLUMNS)
    t, I = cols["t_s"], cols["I_A"]
    if len(t) < 2:
        raise DatasetError(f"{path}: a schedule needs at least two rows")
    bad = np.flatnonzero(np.diff(t) <= 0)
    if len(bad):
        raise DatasetError(f"{path}: time must be strictly increasing", row=int(bad[0]) + 2)
    return CurrentProfile(t - t[0], I[:-1], V_min=V_min, V_max=V_max)


def read_bounds(path: str | Path) -> dict[str, tuple[float, float]]:
    """Bounds CSV with ``symbol,lower_bound,upper_bound``; extra columns are ignored."""
    path = Path(path)
    bounds: dict[str, tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in reader.fieldnames or []]
        if any(c not in fields for c in BOUNDS_COLUMNS):
            raise DatasetError(f"{path}: header must contain {', '.join(BOUNDS_COLUMNS)}")
        for row_no, row in enumerate(reader, start=1):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            name = row["symbol"]
            if name not in THETA_FIELDS:
                continue  # e.g. the trailing J row of a results table
            try:
                bounds[name] = (float(row["lower_bound"]), float(row["upper_bound"]))
            except ValueError as exc:
                raise DatasetError(f"{path}: {exc}", row=row_no) from exc
    missing = [n for n in THETA_FIELDS if n not in bounds]
    if missing:
        raise DatasetError(f"{path}: no bounds for {', '.join(missing)}")
    return bounds


def _write_columns(path: str | Path, header: Sequence[str], data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def write_trace(trace: SimulationTrace, path: str | Path) -> None:
    header, data = trace.column_table()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["mode"])
        for row, mode in zip(data, trace.mode):
            writer.writerow([repr(float(v)) for v in row] + [str(mode)])


def ocp_table(p: CellParameters | str = "kumaresan2008", step: float = 1e-3) -> np.ndarray:
    """Both positive branches and the negative curve on the open stoichiometry grid."""
    n = int(round(1.0 / step)) - 1
    theta = step * np.arange(1, n + 1)
    return np.column_stack([
        theta,
        ocp_positive(theta, Direction.DISCHARGE),
        ocp_positive(theta, Direction.CHARGE),
        ocp_negative(theta, p),
    ])


def write_ocp(path: str | Path, p: CellParameters | str = "kumaresan2008", step: float = 1e-3) -> None:
    _write_columns(path, OCP_COLUMNS, ocp_table(p, step))


# ---- manifest ----------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {"coreshell_espm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path: str | Path, command: str, p: CellParameters | None,
                   overrides: Mapping[str, str], seed: int | None, arguments: Mapping[str, object],
                   inputs: Sequence[str | Path] = (), outputs: Sequence[str | Path] = ()) -> dict:
    """Everything needed to rerun a command and compare outputs byte for byte."""
    manifest = {
        "command": command,
        "arguments": dict(arguments),
        "overrides": dict(overrides),
        "seed": seed,
        "config_sha256": p.digest() if p is not None else None,
        "config": p.to_dict() if p is not None else None,
        "inputs": {str(f): file_digest(f) for f in inputs},
        "outputs": {Path(f).name: file_digest(f) for f in outputs},
        "versions": versions(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---- plots -------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_trace(trace: SimulationTrace, path: str | Path) -> None:
    """Voltage against capacity, SOC against time and interface radius against time."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    hours = trace.t / 3600.0
    axes[0].plot(np.abs(trace.q), trace.V)
    axes[0].set(xlabel="capacity [Ah]", ylabel="voltage [V]")
    axes[1].plot(hours, trace.soc_n, label="negative")
    axes[1].plot(hours, trace.soc_p, "--", label="positive")
    axes[1].set(xlabel="time [h]", ylabel="SOC [-]")
    axes[1].legend()
    axes[2].plot(hours, trace.rp_over_Rp)
    axes[2].set(xlabel="time [h]", ylabel="r_p / R_p [-]", ylim=(-0.02, 1.02))
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def plot_fit(dataset: Dataset, trace: SimulationTrace, path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    hours = dataset.t / 3600.0
    ax.plot(hours, dataset.V, ".", ms=2, label="data")
    ax.plot(trace.t / 3600.0, trace.V, label="model")
    ax.set(xlabel="time [h]", ylabel="voltage [V]", title=dataset.name)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


# ---- twin-experiment fixture -------------------------------------------------

def twin_fixture_dir() -> Path:
    """Bundled synthetic datasets generated from the example cell (2 mV noise, seed 0)."""
    return Path(__file__).parent / "data" / "twin"


def write_twin_fixture(directory: str | Path, p: CellParameters, noise: float = 2e-3, seed: int = 0) -> list[Path]:
    from .identification import twin_datasets

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in twin_datasets(p, noise=noise, seed=seed):
        paths.append(directory / f"{ds.name}.csv")
        write_dataset(ds, paths[-1])
    return paths
