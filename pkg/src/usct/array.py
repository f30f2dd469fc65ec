"""Annular transducer arrays: geometry, delta sources, sampling, observation.

Sources and receivers share one bilinear weight rule, which makes
``sample_at`` and source splatting exact adjoints of each other:

    vdot(sample_at(u, P), g) == dx^2 * vdot(u.values, splat(g, P).values)

Gradient code depends on that identity holding to machine precision.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .fields import ComplexField, Grid2D
from .parallel import worker_count
from .solver import BoundarySpec, SoundSpeedMap, cbs_solve

__all__ = [
    "TransducerRing",
    "SourcePlan",
    "MeasurementSet",
    "ring_positions",
    "make_point_source",
    "splat",
    "sample_at",
    "simulate_observation",
    "add_noise",
]


@dataclass(frozen=True)
class TransducerRing:
    """``count`` transducers on a circle; element i at angle 2*pi*i/count."""

    center: tuple[float, float]
    radius: float
    count: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ring radius must be positive")
        if self.count < 3:
            raise ValueError(f"need at least 3 transducers, got {self.count}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "count", int(self.count))


@dataclass(frozen=True)
class SourcePlan:
    """Ordered emitter indices and the shared complex source amplitude."""

    source_indices: tuple[int, ...]
    amplitude: complex = 1.0 + 0.0j

    def __post_init__(self):
        idx = tuple(int(i) for i in self.source_indices)
        if len(set(idx)) != len(idx):
            raise ValueError("source indices must be unique")
        if any(i < 0 for i in idx):
            raise ValueError("source indices must be nonnegative")
        object.__setattr__(self, "source_indices", idx)
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    @classmethod
    def every_nth(cls, count: int, step: int, amplitude: complex = 1.0 + 0.0j) -> "SourcePlan":
        return cls(tuple(range(0, count, step)), amplitude)

    def validate_against(self, ring: TransducerRing) -> None:
        if any(i >= ring.count for i in self.source_indices):
            raise ValueError("source index out of range for this ring")


@dataclass(frozen=True)
class MeasurementSet:
    """Complex rows-by-receivers matrix; row k belongs to plan.source_indices[k].

    ``row_ok`` flags rows whose forward solve converged.  ``snr_db`` is the
    whole-matrix SNR convention: noise power = total signal power / 10^(snr/10)
    spread over all entries; None means no noise was added.
    """

    data: np.ndarray
    ring: TransducerRing
    plan: SourcePlan
    omega: float
    row_ok: np.ndarray
    snr_db: float | None = None
    noise_seed: int | None = None
    exclude_self: bool = True

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape != (len(self.plan.source_indices), self.ring.count):
            raise ValueError(
                f"data shape {data.shape} does not match plan x ring "
                f"({len(self.plan.source_indices)}, {self.ring.count})")
        if not np.all(np.isfinite(data)):
            raise ValueError("measurement matrix contains non-finite entries")
        row_ok = np.asarray(self.row_ok, dtype=bool).reshape(-1)
        if row_ok.size != data.shape[0]:
            raise ValueError("row_ok length must match the source count")
        data = data.copy(); data.setflags(write=False)
        row_ok = row_ok.copy(); row_ok.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "row_ok", row_ok)
        self.plan.validate_against(self.ring)

    @property
    def n_sources(self) -> int:
        return self.data.shape[0]


def ring_positions(ring: TransducerRing) -> np.ndarray:
    """(count, 2) array of transducer coordinates in meters."""
    theta = 2.0 * np.pi * np.arange(ring.count) / ring.count
    return np.stack([ring.center[0] + ring.radius * np.cos(theta),
                     ring.center[1] + ring.radius * np.sin(theta)], axis=1)


def _bilinear(grid: Grid2D, position) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of the 4 surrounding cells and their bilinear weights.

    Positions must lie inside the convex hull of cell centers so the four
    neighbors always exist (no extrapolation).
    """
    x = (float(position[0]) - grid.origin[0]) / grid.dx
    y = (float(position[1]) - grid.origin[1]) / grid.dx
    if not (0.0 <= x <= grid.nx - 1 and 0.0 <= y <= grid.ny - 1):
        raise ValueError(f"position {tuple(position)} outside the grid cell-center hull")
    i0 = min(int(np.floor(x)), grid.nx - 2)
    j0 = min(int(np.floor(y)), grid.ny - 2)
    fx, fy = x - i0, y - j0
    idx = np.array([j0 * grid.nx + i0, j0 * grid.nx + i0 + 1,
                    (j0 + 1) * grid.nx + i0, (j0 + 1) * grid.nx + i0 + 1])
    w = np.array([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx, w


def splat(grid: Grid2D, positions, weights) -> ComplexField:
    """Deposit complex weights as bilinear deltas; field integrates to sum(weights)."""
    values = np.zeros(grid.n_cells, dtype=np.complex128)
    scale = 1.0 / grid.dx ** 2
    for pos, g in zip(positions, weights):
        idx, w = _bilinear(grid, pos)
        values[idx] += (g * scale) * w
    return ComplexField(grid, values)


def make_point_source(grid: Grid2D, position, amplitude: complex = 1.0 + 0.0j) -> ComplexField:
    """Unit-integral delta at ``position`` scaled by ``amplitude``."""
    return splat(grid, [position], [complex(amplitude)])


def sample_at(u: ComplexField, positions) -> np.ndarray:
    """Bilinear interpolation of u at each position, in position order."""
    out = np.empty(len(positions), dtype=np.complex128)
    for n, pos in enumerate(positions):
        idx, w = _bilinear(u.grid, pos)
        out[n] = np.dot(u.values[idx], w)
    return out


def simulate_observation(c: SoundSpeedMap, ring: TransducerRing, plan: SourcePlan,
                         omega: float, spec: BoundarySpec | None = None,
                         tol: float = 1e-6, max_iter: int = 1000) -> MeasurementSet:
    """Activate each planned source in turn; sample all ring positions.

    Rows are solved in parallel (thread count from USCT_NUM_THREADS, else
    one per CPU) and assembled in plan order, so the worker count never
    changes the result.
    """
    plan.validate_against(ring)
    positions = ring_positions(ring)

    def row(src_index: int):
        rho = make_point_source(c.grid, positions[src_index], plan.amplitude)
        u, report = cbs_solve(c, rho, omega, spec, tol=tol, max_iter=max_iter)
        return sample_at(u, positions), report.converged

    n = len(plan.source_indices)
    with ThreadPoolExecutor(max_workers=worker_count(n)) as pool:
        results = list(pool.map(row, plan.source_indices))
    data = np.stack([r[0] for r in results])
    row_ok = np.array([r[1] for r in results])
    return MeasurementSet(data=data, ring=ring, plan=plan, omega=omega, row_ok=row_ok)


def add_noise(y: MeasurementSet, snr_db: float, seed: int) -> MeasurementSet:
    """Add circularly-symmetric complex Gaussian noise at a whole-matrix SNR.

    Noise power per entry = mean |y|^2 / 10^(snr_db/10), split evenly
    between real and imaginary parts.  +inf SNR is a no-op.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return replace(y, snr_db=None, noise_seed=int(seed))
    signal_power = float(np.mean(np.abs(y.data) ** 2))
    noise_power = signal_power * 10.0 ** (-snr_db / 10.0)
    sigma = np.sqrt(noise_power / 2.0)
    rng = np.random.default_rng(seed)
    noise = rng.normal(scale=sigma, size=y.data.shape) \
        + 1j * rng.normal(scale=sigma, size=y.data.shape)
    return replace(y, data=y.data + noise, snr_db=float(snr_db), noise_seed=int(seed))
