"""Regular-grid geometry and scalar fields shared by all physics modules.

Conventions fixed here and relied on everywhere else:

* storage is row-major with x fastest: ``index(i, j) = j * nx + i``, so a
  flat field reshapes to ``(ny, nx)`` with axis 0 = y and axis 1 = x;
* Fourier transforms use the unnormalized ``e^{-i p.x}`` forward kernel and
  the ``1/N`` inverse (numpy's default "backward" norm), with angular
  frequencies ``p = 2*pi*fftfreq(n, dx)`` in rad/m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid2D",
    "ComplexField",
    "RealField",
    "FourierSymbol",
    "make_grid",
    "fourier_symbol",
]


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2D grid; cell (i, j) center sits at ``origin + (i*dx, j*dx)``."""

    nx: int
    ny: int
    dx: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError(f"grid spacing must be positive, got {self.dx}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny, nx)`` of fields stored on this grid."""
        return (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        """Physical side lengths ``(nx*dx, ny*dx)`` in meters."""
        return (self.nx * self.dx, self.ny * self.dx)

    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    def y_coords(self) -> np.ndarray:
        return self.origin[1] + self.dx * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) cell-center coordinates, each of shape (ny, nx)."""
        return np.meshgrid(self.x_coords(), self.y_coords(), indexing="xy")


def make_grid(nx: int, ny: int, dx: float, origin: tuple[float, float] | None = None) -> Grid2D:
    """Build a grid; ``origin=None`` centers the cell pattern on (0, 0)."""
    if origin is None:
        origin = (-(nx - 1) * dx / 2.0, -(ny - 1) * dx / 2.0)
    return Grid2D(nx=nx, ny=ny, dx=dx, origin=origin)


def _check_values(grid: Grid2D, values: np.ndarray, dtype) -> np.ndarray:
    values = np.asarray(values, dtype=dtype).reshape(-1)
    if values.size != grid.n_cells:
        raise ValueError(f"expected {grid.n_cells} values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite entries")
    values = values.copy()
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ComplexField:
    """Complex scalar field on a grid, flat row-major (x fastest) storage."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, np.complex128))

    @classmethod
    def from_2d(cls, grid: Grid2D, arr: np.ndarray) -> "ComplexField":
        if arr.shape != grid.shape:
            raise ValueError(f"expected shape {grid.shape}, got {arr.shape}")
        return cls(grid, np.ascontiguousarray(arr).reshape(-1))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ComplexField":
        return cls(grid, np.zeros(grid.n_cells, dtype=np.complex128))

    def as_2d(self) -> np.ndarray:
        """(ny, nx) view; read-only."""
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class RealField:
    """Real scalar field on a grid, same layout as :class:`ComplexField`."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, np.float64))

    @classmethod
    def from_2d(cls, grid: Grid2D, arr: np.ndarray) -> "RealField":
        if arr.shape != grid.shape:
            raise ValueError(f"expected shape {grid.shape}, got {arr.shape}")
        return cls(grid, np.ascontiguousarray(arr).reshape(-1))

    @classmethod
    def full(cls, grid: Grid2D, value: float) -> "RealField":
        return cls(grid, np.full(grid.n_cells, value, dtype=np.float64))

    def as_2d(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class FourierSymbol:
    """Squared magnitude ``p_x^2 + p_y^2`` of the angular-frequency coordinates."""

    grid: Grid2D
    psq: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "psq", _check_values(self.grid, self.psq, np.float64))

    def as_2d(self) -> np.ndarray:
        return self.psq.reshape(self.grid.shape)


def fourier_symbol(grid: Grid2D) -> FourierSymbol:
    """p^2 per Fourier mode in rad^2/m^2, numpy fftfreq mode ordering."""
    px = 2.0 * np.pi * np.fft.fftfreq(grid.nx, d=grid.dx)
    py = 2.0 * np.pi * np.fft.fftfreq(grid.ny, d=grid.dx)
    psq = px[np.newaxis, :] ** 2 + py[:, np.newaxis] ** 2
    return FourierSymbol(grid, psq.reshape(-1))
