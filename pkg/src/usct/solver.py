"""Convergent Born series solver for the 2D heterogeneous Helmholtz equation.

Solves (lap + (omega/c(x))^2) u = -rho with time convention e^{-i omega t},
so the outgoing free-space response to a unit point source is
(i/4) H0^(1)(k r).  An open domain is emulated by padding the grid with an
absorbing layer: a smooth ramp of positive imaginary squared wavenumber
k^2 -> k^2 + i*alpha(x).

Discretization: the Laplacian is applied spectrally (exact Fourier symbol
-p^2), so the linear system being solved is

    H u = (L_spec + diag(k^2 + i*alpha)) u = -rho

on the padded periodic grid, with the layer soaking up the wrap-around.
H is complex symmetric, which downstream adjoint computations rely on.

Iteration (the convergent Born series): with kappa^2, epsilon fixed,

    v = k^2 + i*alpha - kappa^2 - i*epsilon
    G = IFFT . 1/(p^2 - kappa^2 - i*epsilon) . FFT
    q = i*v/epsilon
    u_{k+1} = q G (v u_k + rho) + (1 - q) u_k,   u_0 = q G rho

which contracts whenever epsilon >= max |k^2 + i*alpha - kappa^2|.  Setting
q = 1 recovers the plain Born iteration u_{k+1} = G(v u_k + rho), which
diverges at high contrast; it is kept behind a flag as a reference point.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .fields import ComplexField, Grid2D, RealField, fourier_symbol, make_grid

__all__ = [
    "SoundSpeedMap",
    "BoundarySpec",
    "BornParams",
    "ScatteringPotential",
    "CropDescriptor",
    "SolveReport",
    "SolverError",
    "choose_born_params",
    "build_potential",
    "green_apply",
    "pad_with_boundary",
    "apply_helmholtz",
    "cbs_solve",
]

# Round-trip amplitude surviving the absorbing layer at strength 1.  The
# layer amplitude is alpha_max = strength * (P+1) * k_bg * ln(1/R0) / width_m
# for ramp exponent P.
_LAYER_R0 = 1e-3

# Relative headroom of epsilon over max|k^2 + i*alpha - kappa^2|.  The
# headroom bounds the slowest error mode: components localized at the
# absorption peak contract by |1 - q| = 1/(1 + margin) per sweep, so a few
# percent here is the difference between hundreds and thousands of
# iterations.  Kept well above the contraction-threshold minimum on purpose.
_EPS_MARGIN = 5e-2
_EPS_FLOOR_FRAC = 1e-3   # homogeneous media: epsilon = this * kappa^2


class SolverError(RuntimeError):
    """Raised when an iteration produces non-finite values."""


@dataclass(frozen=True)
class SoundSpeedMap:
    """Sound speed c(x) in m/s over a constant background c0.

    When ``doi_mask`` (flat boolean array, True = inside the domain of
    interest) is given, the map must equal c0 outside it exactly.
    """

    field: RealField
    c0: float
    doi_mask: np.ndarray | None = None

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError(f"background speed must be positive, got {self.c0}")
        if np.any(self.field.values <= 0):
            raise ValueError("sound speeds must be positive everywhere")
        if self.doi_mask is not None:
            mask = np.asarray(self.doi_mask, dtype=bool).reshape(-1)
            if mask.size != self.field.grid.n_cells:
                raise ValueError("doi_mask size does not match grid")
            outside = self.field.values[~mask]
            if outside.size and not np.all(outside == self.c0):
                raise ValueError("speeds outside the domain of interest must equal c0")
            mask.setflags(write=False)
            object.__setattr__(self, "doi_mask", mask)
        object.__setattr__(self, "c0", float(self.c0))

    @property
    def grid(self) -> Grid2D:
        return self.field.grid

    @classmethod
    def homogeneous(cls, grid: Grid2D, c0: float) -> "SoundSpeedMap":
        return cls(RealField.full(grid, c0), c0)

    @classmethod
    def from_2d(cls, grid: Grid2D, arr: np.ndarray, c0: float,
                doi_mask: np.ndarray | None = None) -> "SoundSpeedMap":
        if doi_mask is not None:
            doi_mask = np.asarray(doi_mask).reshape(-1)
        return cls(RealField.from_2d(grid, arr), c0, doi_mask)

    def as_2d(self) -> np.ndarray:
        return self.field.as_2d()


@dataclass(frozen=True)
class BoundarySpec:
    """Absorbing layer: ``width`` cells per side (int or (wx, wy) pair),
    ``profile`` ramp family, dimensionless ``strength`` scale."""

    width: int | tuple[int, int] = 16
    profile: str = "cubic"
    strength: float = 1.0

    def __post_init__(self):
        w = self.width
        if isinstance(w, (int, np.integer)):
            w = (int(w), int(w))
        else:
            w = (int(w[0]), int(w[1]))
        if w[0] < 0 or w[1] < 0:
            raise ValueError(f"layer width must be nonnegative, got {w}")
        if self.profile not in ("cubic", "quadratic"):
            raise ValueError(f"unknown layer profile {self.profile!r}")
        if not self.strength > 0:
            raise ValueError("layer strength must be positive")
        object.__setattr__(self, "width", w)

    @property
    def ramp_exponent(self) -> int:
        return 3 if self.profile == "cubic" else 2


@dataclass(frozen=True)
class BornParams:
    """Series constants: shift kappa^2 and damping epsilon, both rad^2/m^2."""

    kappa_sq: float
    epsilon: float
    omega: float

    def __post_init__(self):
        if not self.kappa_sq > 0:
            raise ValueError("kappa_sq must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")


@dataclass(frozen=True)
class ScatteringPotential:
    """v = k^2 + i*alpha - kappa^2 - i*epsilon and preconditioner q = i*v/epsilon.

    The contraction requirement is |v + i*epsilon| <= epsilon pointwise
    (equivalently |1 - q| <= 1); without an absorbing layer imag(v) is
    exactly -epsilon, so the bound lands on |real(v)|.
    """

    v: ComplexField
    q: ComplexField

    @property
    def grid(self) -> Grid2D:
        return self.v.grid

    def contraction_margin(self, epsilon: float) -> float:
        """max |v + i*epsilon| / epsilon; <= 1 means the series contracts."""
        return float(np.max(np.abs(self.v.values + 1j * epsilon)) / epsilon)


@dataclass(frozen=True)
class CropDescriptor:
    """Maps a padded solve back onto the caller's grid.

    ``absorb_per_k`` lives on the padded grid, units 1/m; the solver turns
    it into the imaginary squared wavenumber alpha = (omega/c0) * absorb_per_k
    so the padding step itself stays frequency independent.
    """

    interior_grid: Grid2D
    padded_grid: Grid2D
    x0: int
    y0: int
    absorb_per_k: RealField

    def crop(self, padded: ComplexField | RealField) -> ComplexField | RealField:
        if padded.grid.shape != self.padded_grid.shape:
            raise ValueError("field does not live on the padded grid")
        block = padded.as_2d()[self.y0:self.y0 + self.interior_grid.ny,
                               self.x0:self.x0 + self.interior_grid.nx]
        cls = ComplexField if isinstance(padded, ComplexField) else RealField
        return cls.from_2d(self.interior_grid, block)


@dataclass(frozen=True)
class SolveReport:
    """Iteration diagnostics; padded state is attached only on request."""

    iterations: int
    residual_history: np.ndarray
    converged: bool
    wall_time: float
    padded_u: ComplexField | None = None
    padded_c: SoundSpeedMap | None = None
    crop: CropDescriptor | None = None


def choose_born_params(c: SoundSpeedMap, omega: float,
                       absorb_per_k: RealField | None = None) -> BornParams:
    """Pick kappa^2 (midpoint of the k^2 range) and epsilon (covering spread).

    epsilon = (1 + 1e-3) * max |k^2 + i*alpha - kappa^2|, floored at
    1e-3 * kappa^2 so q stays well defined for homogeneous media (where the
    spread is zero and q becomes exactly 1).
    """
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    ksq = (omega / c.field.values) ** 2
    kappa_sq = 0.5 * (ksq.max() + ksq.min())
    shifted = ksq - kappa_sq
    if absorb_per_k is not None:
        if absorb_per_k.grid.shape != c.grid.shape:
            raise ValueError("absorption map grid mismatch")
        shifted = shifted + 1j * (omega / c.c0) * absorb_per_k.values
    epsilon = (1.0 + _EPS_MARGIN) * float(np.max(np.abs(shifted)))
    epsilon = max(epsilon, _EPS_FLOOR_FRAC * kappa_sq)
    return BornParams(kappa_sq=float(kappa_sq), epsilon=epsilon, omega=float(omega))


def build_potential(c: SoundSpeedMap, params: BornParams,
                    absorb_per_k: RealField | None = None) -> ScatteringPotential:
    """Pointwise v = k^2 + i*alpha - kappa^2 - i*epsilon, q = i*v/epsilon."""
    if not params.epsilon > 0:
        raise ValueError("epsilon must be positive")
    ksq = (params.omega / c.field.values) ** 2
    alpha = 0.0 if absorb_per_k is None else (params.omega / c.c0) * absorb_per_k.values
    v = ksq + 1j * alpha - params.kappa_sq - 1j * params.epsilon
    q = 1j * v / params.epsilon
    return ScatteringPotential(ComplexField(c.grid, v), ComplexField(c.grid, q))


def green_apply(f: ComplexField, params: BornParams) -> ComplexField:
    """Apply G = IFFT . 1/(p^2 - kappa^2 - i*epsilon) . FFT to a field."""
    psq = fourier_symbol(f.grid).as_2d()
    fhat = scipy.fft.fft2(f.as_2d())
    fhat /= psq - params.kappa_sq - 1j * params.epsilon
    return ComplexField.from_2d(f.grid, scipy.fft.ifft2(fhat))


def _ramp_profile(n_pad: int, n_total: int, exponent: int) -> np.ndarray:
    """Per-axis ramp, 0 in the interior rising to 1 at the outer edge."""
    prof = np.zeros(n_total)
    if n_pad == 0:
        return prof
    # distance into the layer, measured in cells from the interior edge,
    # reaching 1 at the outermost cell center
    s = (np.arange(n_pad) + 1.0) / n_pad
    prof[n_pad - 1::-1] = s ** exponent
    prof[n_total - n_pad:] = s ** exponent
    return prof


def pad_with_boundary(c: SoundSpeedMap, rho: ComplexField, spec: BoundarySpec,
                      ) -> tuple[SoundSpeedMap, ComplexField, CropDescriptor]:
    """Extend the domain by spec.width cells per side, filled with c0.

    The returned descriptor carries the dimensionless absorption profile
    (max over axes, so corners absorb at least as strongly as edges).
    """
    if rho.grid.shape != c.grid.shape:
        raise ValueError("source and speed map grids differ")
    grid = c.grid
    wx, wy = spec.width
    c2d = c.as_2d()
    if wx == 0 and np.any(c2d[:, [0, -1]] != c.c0):
        raise ValueError("zero-width padding with heterogeneity at the domain edge")
    if wy == 0 and np.any(c2d[[0, -1], :] != c.c0):
        raise ValueError("zero-width padding with heterogeneity at the domain edge")
    nx, ny = grid.nx + 2 * wx, grid.ny + 2 * wy
    padded_grid = make_grid(
        nx, ny, grid.dx,
        origin=(grid.origin[0] - wx * grid.dx, grid.origin[1] - wy * grid.dx))

    c_pad = np.full((ny, nx), c.c0)
    c_pad[wy:wy + grid.ny, wx:wx + grid.nx] = c.as_2d()
    rho_pad = np.zeros((ny, nx), dtype=np.complex128)
    rho_pad[wy:wy + grid.ny, wx:wx + grid.nx] = rho.as_2d()

    # alpha = k_bg * absorb_per_k with
    # absorb_per_k = strength * (P+1) * ln(1/R0) / w_m * ramp(x)^P;
    # the (P+1) factor makes the integrated one-way attenuation independent
    # of the ramp exponent, so a strength-1 layer passes ~R0 round-trip
    # amplitude regardless of profile.
    amp = spec.strength * (spec.ramp_exponent + 1) * np.log(1.0 / _LAYER_R0)
    px = _ramp_profile(wx, nx, spec.ramp_exponent)
    py = _ramp_profile(wy, ny, spec.ramp_exponent)
    ax = px * (amp / (wx * grid.dx)) if wx else px
    ay = py * (amp / (wy * grid.dx)) if wy else py
    absorb = np.maximum(ax[np.newaxis, :], ay[:, np.newaxis])

    desc = CropDescriptor(
        interior_grid=grid, padded_grid=padded_grid, x0=wx, y0=wy,
        absorb_per_k=RealField.from_2d(padded_grid, absorb))
    return SoundSpeedMap.from_2d(padded_grid, c_pad, c.c0), \
        ComplexField.from_2d(padded_grid, rho_pad), desc


def apply_helmholtz(c: SoundSpeedMap, u: ComplexField, omega: float,
                    absorb_per_k: RealField | None = None) -> ComplexField:
    """Apply H = L_spec + diag(k^2 + i*alpha) to u; H u = -rho at convergence.

    This is the exact operator whose solution cbs_solve iterates toward,
    so it doubles as the residual check and as the column generator for a
    dense reference solve.
    """
    psq = fourier_symbol(u.grid).as_2d()
    lap = scipy.fft.ifft2(-psq * scipy.fft.fft2(u.as_2d()))
    ksq = (omega / c.field.values.reshape(c.grid.shape)) ** 2
    if absorb_per_k is not None:
        ksq = ksq + 1j * (omega / c.c0) * absorb_per_k.as_2d()
    return ComplexField.from_2d(u.grid, lap + ksq * u.as_2d())


def _iterate(c_pad: SoundSpeedMap, rho_pad: np.ndarray, params: BornParams,
             absorb: RealField, tol: float, max_iter: int,
             u0: np.ndarray | None, naive_born: bool,
             ) -> tuple[np.ndarray, list[float], bool]:
    pot = build_potential(c_pad, params, absorb)
    shape = c_pad.grid.shape
    v = pot.v.values.reshape(shape)
    q = np.ones(shape) if naive_born else pot.q.values.reshape(shape)
    one_minus_q = 1.0 - q
    gdenom = fourier_symbol(c_pad.grid).as_2d() - params.kappa_sq - 1j * params.epsilon

    def green(f):
        return scipy.fft.ifft2(scipy.fft.fft2(f) / gdenom)

    u = q * green(rho_pad) if u0 is None else u0.astype(np.complex128)
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        u_next = q * green(v * u + rho_pad) + one_minus_q * u
        du = np.linalg.norm(u_next - u)
        un = np.linalg.norm(u)
        rel = du / un if un > 0 else du
        if not np.isfinite(rel):
            raise SolverError(
                f"non-finite update at iteration {len(history) + 1} "
                f"(|u| = {un:.3e}); the series is diverging")
        history.append(float(rel))
        u = u_next
        if rel < tol:
            converged = True
            break
    return u, history, converged


def cbs_solve(c: SoundSpeedMap, rho: ComplexField, omega: float,
              spec: BoundarySpec | None = None, tol: float = 1e-6,
              max_iter: int = 1000, initial: ComplexField | None = None,
              naive_born: bool = False, keep_padded: bool = False,
              ) -> tuple[ComplexField, SolveReport]:
    """Solve (lap + (omega/c)^2) u = -rho; returns the interior field.

    ``initial`` (on the interior grid) warm-starts the iteration.
    ``naive_born`` disables the preconditioner (reference point; diverges at
    high contrast).  ``keep_padded`` attaches the padded field, speed map and
    crop descriptor to the report for residual checks.
    """
    t0 = time.perf_counter()
    if rho.grid.shape != c.grid.shape:
        raise ValueError("source and speed map grids differ")
    if not 0 < tol < 1:
        raise ValueError(f"tol must be in (0, 1), got {tol}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")

    ppw = 2.0 * np.pi * float(np.min(c.field.values)) / (omega * c.grid.dx)
    if ppw < 4.0:
        raise ValueError(f"grid resolves only {ppw:.2f} points per wavelength; need >= 4")
    if ppw < 6.0:
        warnings.warn(f"only {ppw:.2f} points per wavelength; accuracy degrades below 6")

    if spec is None:
        spec = BoundarySpec(width=int(np.ceil(2.0 * ppw)))
    wavelength_cells = 2.0 * np.pi * c.c0 / (omega * c.grid.dx)
    if min(spec.width) < 2.0 * wavelength_cells:
        warnings.warn(
            f"layer width {spec.width} is under two wavelengths "
            f"({2 * wavelength_cells:.1f} cells); expect reflections")

    if not np.any(rho.values):
        report = SolveReport(iterations=0, residual_history=np.zeros(0),
                             converged=True, wall_time=time.perf_counter() - t0)
        return ComplexField.zeros(c.grid), report

    c_pad, rho_pad, desc = pad_with_boundary(c, rho, spec)
    if naive_born:
        # plain Born split: expand about the background medium with only the
        # floor damping; the speed contrast and the absorbing layer both land
        # in the potential, with nothing keeping the series inside the unit
        # disk -- this is the reference point the preconditioner fixes
        kbg_sq = (omega / c.c0) ** 2
        params = BornParams(kappa_sq=kbg_sq, epsilon=_EPS_FLOOR_FRAC * kbg_sq,
                            omega=float(omega))
    else:
        params = choose_born_params(c_pad, omega, desc.absorb_per_k)

    u0 = None
    if initial is not None:
        if initial.grid.shape != c.grid.shape:
            raise ValueError("warm-start field must live on the interior grid")
        u0 = np.zeros(c_pad.grid.shape, dtype=np.complex128)
        u0[desc.y0:desc.y0 + c.grid.ny, desc.x0:desc.x0 + c.grid.nx] = initial.as_2d()

    u_pad, history, converged = _iterate(
        c_pad, rho_pad.as_2d(), params, desc.absorb_per_k, tol, max_iter,
        u0, naive_born)

    u_field = ComplexField.from_2d(c_pad.grid, u_pad)
    report = SolveReport(
        iterations=len(history), residual_history=np.asarray(history),
        converged=converged, wall_time=time.perf_counter() - t0,
        padded_u=u_field if keep_padded else None,
        padded_c=c_pad if keep_padded else None,
        crop=desc if keep_padded else None)
    return desc.crop(u_field), report
