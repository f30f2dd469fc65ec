"""Shared fixtures: a tiny toolkit-generated dataset and a small trained run.

Everything the toolkit produces here goes through its command line, so the
fixtures double as interchange checks.
"""
from __future__ import annotations

import subprocess
from pathlib import Path

import pytest

from nbso.cli import main as nbso_main
from nbso.interop import usct_executable

# 32^2, 3 transducers, 2 phantoms: large enough to exercise every code
# path, small enough to regenerate in seconds
TINY_CONFIG = """\
grid: {{nx: 32, ny: 32, dx_m: 1.0e-3}}
medium: {{c0_m_per_s: 1500.0}}
source: {{frequency_hz: 187500.0}}
ring: {{radius_m: 0.012, count: 3}}
plan: {{every_nth: 1}}
boundary: {{width_cells: 8}}
solver: {{tol: 1.0e-6, max_iter: 2000}}
phantom: {{kind: breast-like, count: 2, seed: 7, inclusion_contrast: 0.03}}
output: {{directory: {out}}}
"""

TINY_TRAIN_ARGS = ["--epochs", "2", "--layers", "2", "--width", "8",
                   "--modes", "4", "--batch-size", "2", "--seed", "3"]


def run_usct(*args: str) -> str:
    cmd = usct_executable() + list(args)
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, f"{cmd} failed:\n{proc.stdout}{proc.stderr}"
    return proc.stdout


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("tiny")
    out = root / "ds"
    cfg = root / "dataset.yaml"
    cfg.write_text(TINY_CONFIG.format(out=out))
    run_usct("gen-dataset", "-c", str(cfg))
    return out


@pytest.fixture(scope="session")
def tiny_observation(tmp_path_factory) -> Path:
    """Measurements of the tiny dataset's first phantom, same ring."""
    root = tmp_path_factory.mktemp("tiny_obs")
    out = root / "obs"
    cfg = root / "observe.yaml"
    cfg.write_text(TINY_CONFIG.format(out=out))
    run_usct("observe", "-c", str(cfg))
    return out


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tmp_path_factory) -> Path:
    """A short real training through the command line."""
    out = tmp_path_factory.mktemp("tiny_run")
    code = nbso_main(["train", str(tiny_dataset), "-o", str(out)]
                     + TINY_TRAIN_ARGS)
    assert code == 0
    return out
