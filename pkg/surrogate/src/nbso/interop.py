"""Interop with the wave toolkit through its published interfaces only:
YAML run configs, the ``usct`` command line, ``measurements.csv``, and
field containers.  Metric values for comparison tables come from
``usct metrics`` so both sides share one set of conventions.
"""
from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import yaml

from .dataset import GridGeometry, ring_positions

METRICS_COLUMNS = ["stage", "rrmse", "psnr_db", "ssim", "data_range"]

# mirrored defaults of the toolkit's config schema (documented in its README)
_DEFAULTS = {
    "grid": {"nx": 64, "ny": 64, "dx_m": 1.0e-3},
    "medium": {"c0_m_per_s": 1500.0},
    "source": {"frequency_hz": 187500.0},
    "ring": {"center_x_m": 0.0, "center_y_m": 0.0, "radius_m": 0.027, "count": 32},
    "plan": {"every_nth": 1},
    "fwi": {"mask_radius_fraction": 0.8},
}


def load_usct_config(path: str | Path) -> dict:
    """Subset of the toolkit config needed here, with its defaults."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        merged.update(raw.get(section, {}) or {})
        cfg[section] = merged
    return cfg


def geometry_from_config(cfg: dict) -> GridGeometry:
    g = cfg["grid"]
    return GridGeometry(nx=g["nx"], ny=g["ny"], dx=g["dx_m"])


def transducers_from_config(cfg: dict) -> tuple[np.ndarray, list[int]]:
    """All ring positions plus the firing-source indices of the plan."""
    r = cfg["ring"]
    positions = ring_positions((r["center_x_m"], r["center_y_m"]),
                               r["radius_m"], r["count"])
    step = cfg["plan"]["every_nth"]
    return positions, list(range(0, r["count"], step))


def usct_executable() -> list[str]:
    exe = shutil.which("usct")
    if exe:
        return [exe]
    return [sys.executable, "-m", "usct"]


def run_usct(*args: str, cwd: str | Path | None = None) -> str:
    cmd = usct_executable() + list(args)
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=cwd)
    if proc.returncode != 0:
        raise RuntimeError(f"{' '.join(cmd)} failed ({proc.returncode}):\n"
                           f"{proc.stdout}{proc.stderr}")
    return proc.stdout


def read_measurements(directory: str | Path) -> tuple[np.ndarray, dict]:
    """(K, R) complex matrix plus the sidecar metadata."""
    directory = Path(directory)
    meta = json.loads((directory / "measurements.json").read_text())
    rows = []
    with open(directory / "measurements.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        count = (len(header) - 1) // 2
        for row in reader:
            vals = np.array(row[1:], dtype=np.float64)
            rows.append(vals[0::2] + 1j * vals[1::2])
    y = np.stack(rows)
    if y.shape != (len(meta["source_indices"]), count):
        raise ValueError("measurements.csv shape disagrees with metadata")
    return y, meta


def usct_metrics(reference: str | Path, estimate: str | Path,
                 data_range: float | None = None) -> dict[str, float]:
    args = ["metrics", str(reference), str(estimate)]
    if data_range is not None:
        args += ["--data-range", repr(float(data_range))]
    out = run_usct(*args)
    values = {}
    for line in out.strip().splitlines():
        key, val = line.split(",")
        values[key] = float(val)
    return values


def write_metrics_table(path: str | Path, rows: list[dict]) -> None:
    """Delimited table with the toolkit's metrics.csv column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([row["stage"], f"{row['rrmse']:.6e}",
                             f"{row['psnr_db']:.4f}", f"{row['ssim']:.6f}",
                             f"{row['data_range']:.6e}"])
