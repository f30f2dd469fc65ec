"""Run configuration: one YAML document drives every CLI subcommand.

Keys carrying physical quantities embed their unit (dx_m, frequency_hz,
c0_m_per_s) so a config file can never be misread across unit systems.
Unknown keys are rejected rather than ignored; a typo should fail loudly,
not silently fall back to a default.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .array import SourcePlan, TransducerRing
from .fields import Grid2D, make_grid
from .fwi import FwiOptions
from .solver import BoundarySpec

__all__ = [
    "RunConfig",
    "ConfigError",
    "load_config",
    "config_sha256",
    "build_grid",
    "build_ring",
    "build_plan",
    "build_boundary",
    "build_fwi_options",
]


class ConfigError(ValueError):
    """Raised when a configuration file is missing, unparsable, or invalid."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    nx: int = 64
    ny: int = 64
    dx_m: float = 1.0e-3


class MediumConfig(_Strict):
    c0_m_per_s: float = 1500.0


class SourceConfig(_Strict):
    frequency_hz: float = 187500.0
    amplitude_re: float = 1.0
    amplitude_im: float = 0.0


class RingConfig(_Strict):
    center_x_m: float = 0.0
    center_y_m: float = 0.0
    radius_m: float = 0.027
    count: int = 32


class PlanConfig(_Strict):
    every_nth: int = 1


class BoundaryConfig(_Strict):
    width_cells: int = 16
    profile: str = "cubic"
    strength: float = 1.0


class PhantomConfig(_Strict):
    kind: str = "breast-like"
    count: int = 1
    organ_radius_fraction: float = 0.6
    inclusion_contrast: float = 0.03
    inclusion_count: tuple[int, int] = (1, 3)   # drawn uniformly from [lo, hi]
    seed: int = 0


class SolverConfig(_Strict):
    tol: float = 1.0e-6
    max_iter: int = 1000


class FwiConfig(_Strict):
    memory: int = 10
    max_iterations: int = 100
    grad_tol: float = 1.0e-6
    tikhonov_weight: float = 0.0
    mask_radius_fraction: float = 0.8   # of ring radius; inversion support


class NoiseConfig(_Strict):
    snr_db: float | None = None
    seed: int = 0


class OutputConfig(_Strict):
    directory: str = "out"


class RunConfig(_Strict):
    grid: GridConfig = Field(default_factory=GridConfig)
    medium: MediumConfig = Field(default_factory=MediumConfig)
    source: SourceConfig = Field(default_factory=SourceConfig)
    ring: RingConfig = Field(default_factory=RingConfig)
    plan: PlanConfig = Field(default_factory=PlanConfig)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    fwi: FwiConfig = Field(default_factory=FwiConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def omega(self) -> float:
        import math
        return 2.0 * math.pi * self.source.frequency_hz

    @property
    def amplitude(self) -> complex:
        return complex(self.source.amplitude_re, self.source.amplitude_im)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigError(f"invalid configuration: {exc}") from exc


def config_sha256(cfg: RunConfig) -> str:
    """Checksum of the canonical form, insensitive to file formatting."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_grid(cfg: RunConfig) -> Grid2D:
    return make_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.dx_m)


def build_ring(cfg: RunConfig) -> TransducerRing:
    return TransducerRing(center=(cfg.ring.center_x_m, cfg.ring.center_y_m),
                          radius=cfg.ring.radius_m, count=cfg.ring.count)


def build_plan(cfg: RunConfig) -> SourcePlan:
    return SourcePlan.every_nth(cfg.ring.count, cfg.plan.every_nth,
                                amplitude=cfg.amplitude)


def build_boundary(cfg: RunConfig) -> BoundarySpec:
    return BoundarySpec(width=cfg.boundary.width_cells,
                        profile=cfg.boundary.profile,
                        strength=cfg.boundary.strength)


def build_fwi_options(cfg: RunConfig) -> FwiOptions:
    return FwiOptions(memory=cfg.fwi.memory,
                      max_iterations=cfg.fwi.max_iterations,
                      grad_tol=cfg.fwi.grad_tol,
                      tikhonov_weight=cfg.fwi.tikhonov_weight)
