"""Frequency-domain full-waveform inversion of the sound-speed map.

Loss: L(c) = sum_k sum_j |S u_k(c) - y_kj|^2 over planned sources k and
receivers j, with the self receiver (j = source) excluded by default; S is
bilinear sampling at the ring positions.  An optional Tikhonov term
(FwiOptions.tikhonov_weight, default 0) augments the objective; the
default objective is pure data misfit.

Gradient, derived exactly for the discrete system rather than transcribed
from the continuum: the solver's operator H = L_spec + diag(k^2 + i alpha)
is complex symmetric, so with one extra solve per source against the
conjugated residual splat,

    lam_k = solve(H, -splat(conj(r_k)))        (splat includes the 1/dx^2)
    dL/dc_n = -(4 w^2 dx^2 / c_n^3) * sum_k Re[lam_k(n) u_k(n)]

which matches central finite differences at the 1e-3 level demanded of it.
The adjoint solve reuses cbs_solve unchanged; symmetry of H is what makes
that legitimate.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .array import (MeasurementSet, make_point_source, ring_positions,
                    sample_at, splat)
from .fields import ComplexField, RealField
from .parallel import worker_count
from .solver import BoundarySpec, SolverError, SoundSpeedMap, cbs_solve

__all__ = [
    "FwiOptions",
    "FwiProblem",
    "FwiTrace",
    "misfit",
    "adjoint_source",
    "gradient",
    "reconstruct",
]


# margin above the solver's hard 4 points-per-wavelength limit
_MIN_PPW = 4.2


@dataclass(frozen=True)
class FwiOptions:
    """L-BFGS and line-search knobs.

    ``tikhonov_weight`` adds lam * sum((c - c_init)^2) over the masked cells
    to the objective; the default of 0 keeps the objective pure data misfit.
    """

    memory: int = 10
    max_iterations: int = 100
    grad_tol: float = 1e-6          # relative to the initial gradient norm
    ls_backtrack: float = 0.5
    ls_c1: float = 1e-4             # sufficient-decrease constant
    max_ls_steps: int = 25
    min_speed_frac: float = 0.5     # iterates keep c > frac * c0 (or the grid's sampling floor)
    first_step_frac: float = 5e-3   # first trial step moves c by this of c0
    tikhonov_weight: float = 0.0
    keep_iterates: bool = False


@dataclass(frozen=True)
class FwiProblem:
    """Observed data plus everything needed to evaluate and invert."""

    observed: MeasurementSet
    c_init: SoundSpeedMap
    inversion_mask: np.ndarray | None = None
    boundary: BoundarySpec | None = None
    solver_tol: float = 1e-6
    solver_max_iter: int = 1000
    options: FwiOptions = dc_field(default_factory=FwiOptions)

    def __post_init__(self):
        if self.inversion_mask is not None:
            mask = np.asarray(self.inversion_mask, dtype=bool).reshape(-1)
            if mask.size != self.c_init.grid.n_cells:
                raise ValueError("inversion mask size does not match the grid")
            mask = mask.copy(); mask.setflags(write=False)
            object.__setattr__(self, "inversion_mask", mask)

    @property
    def omega(self) -> float:
        return self.observed.omega

    def mask_vector(self) -> np.ndarray:
        if self.inversion_mask is None:
            return np.ones(self.c_init.grid.n_cells, dtype=bool)
        return self.inversion_mask


@dataclass
class FwiTrace:
    """Accepted-iterate history; ``status`` explains how the loop ended."""

    losses: list[float] = dc_field(default_factory=list)
    grad_norms: list[float] = dc_field(default_factory=list)
    step_sizes: list[float] = dc_field(default_factory=list)
    status: str = "running"
    iterates: list[np.ndarray] = dc_field(default_factory=list)


def _self_exclusion(y: MeasurementSet) -> np.ndarray:
    """Boolean (sources, receivers) matrix, True where the entry counts."""
    keep = np.ones(y.data.shape, dtype=bool)
    if y.exclude_self:
        for row, src in enumerate(y.plan.source_indices):
            keep[row, src] = False
    return keep


def misfit(y_obs: MeasurementSet, y_pred: MeasurementSet) -> tuple[float, np.ndarray]:
    """Sum of squared residual moduli and the residual rows (pred - obs).

    Excluded self-receiver entries are zeroed in the returned rows so the
    adjoint step inherits the exclusion for free.
    """
    if y_obs.data.shape != y_pred.data.shape:
        raise ValueError("measurement shapes differ")
    keep = _self_exclusion(y_obs)
    residual = np.where(keep, y_pred.data - y_obs.data, 0.0)
    return float(np.sum(np.abs(residual) ** 2)), residual


def adjoint_source(residual_row: np.ndarray, ring, grid) -> ComplexField:
    """Splat one residual row at the transducer positions (exact sample adjoint)."""
    positions = ring_positions(ring)
    if len(residual_row) != len(positions):
        raise ValueError("residual length does not match the ring")
    return splat(grid, positions, np.asarray(residual_row, dtype=np.complex128))


def _forward_row(c, problem, src_index, positions, amplitude, initial=None):
    rho = make_point_source(c.grid, positions[src_index], amplitude)
    u, report = cbs_solve(c, rho, problem.omega, problem.boundary,
                          tol=problem.solver_tol, max_iter=problem.solver_max_iter,
                          initial=initial)
    if not report.converged:
        raise SolverError(f"forward solve for source {src_index} did not converge "
                          f"({report.iterations} iterations)")
    return u, sample_at(u, positions)


def _predicted(c: SoundSpeedMap, problem: FwiProblem, cache: dict | None,
               ) -> tuple[np.ndarray, list[ComplexField]]:
    y = problem.observed
    positions = ring_positions(y.ring)

    def row(k_src):
        k, src = k_src
        init = cache.get(("u", src)) if cache is not None else None
        u, sampled = _forward_row(c, problem, src, positions, y.plan.amplitude, init)
        return u, sampled

    items = list(enumerate(y.plan.source_indices))
    with ThreadPoolExecutor(max_workers=worker_count(len(items))) as pool:
        results = list(pool.map(row, items))
    if cache is not None:
        for (k, src), (u, _) in zip(items, results):
            cache[("u", src)] = u
    data = np.stack([s for _, s in results])
    fields = [u for u, _ in results]
    return data, fields


def _penalty(c: SoundSpeedMap, problem: FwiProblem) -> tuple[float, np.ndarray]:
    """Tikhonov term and its gradient; (0, 0) when the hook is off."""
    lam = problem.options.tikhonov_weight
    if lam == 0.0:
        return 0.0, np.zeros(c.grid.n_cells)
    delta = np.where(problem.mask_vector(),
                     c.field.values - problem.c_init.field.values, 0.0)
    return lam * float(np.dot(delta, delta)), 2.0 * lam * delta


def _loss_at(c: SoundSpeedMap, problem: FwiProblem, cache: dict | None) -> float:
    data, _ = _predicted(c, problem, cache)
    y = problem.observed
    keep = _self_exclusion(y)
    residual = np.where(keep, data - y.data, 0.0)
    return float(np.sum(np.abs(residual) ** 2)) + _penalty(c, problem)[0]


def gradient(c: SoundSpeedMap, problem: FwiProblem, _cache: dict | None = None,
             ) -> tuple[RealField, float]:
    """Exact discrete loss gradient with respect to c, and the loss itself.

    A non-converged forward or adjoint solve raises; a silently wrong
    gradient is worse than a failed iteration.
    """
    y = problem.observed
    positions = ring_positions(y.ring)
    data, fields = _predicted(c, problem, _cache)
    keep = _self_exclusion(y)
    residual = np.where(keep, data - y.data, 0.0)
    loss = float(np.sum(np.abs(residual) ** 2))

    def adjoint_row(k_src):
        k, src = k_src
        adj = adjoint_source(np.conj(residual[k]), y.ring, c.grid)
        init = _cache.get(("lam", src)) if _cache is not None else None
        lam, report = cbs_solve(c, adj, problem.omega, problem.boundary,
                                tol=problem.solver_tol,
                                max_iter=problem.solver_max_iter, initial=init)
        if not report.converged:
            raise SolverError(f"adjoint solve for source {src} did not converge "
                              f"({report.iterations} iterations)")
        return lam

    items = list(enumerate(y.plan.source_indices))
    with ThreadPoolExecutor(max_workers=worker_count(len(items))) as pool:
        lams = list(pool.map(adjoint_row, items))
    if _cache is not None:
        for (k, src), lam in zip(items, lams):
            _cache[("lam", src)] = lam

    # fixed summation order over sources keeps the accumulation deterministic
    acc = np.zeros(c.grid.n_cells)
    for (k, src), lam in zip(items, lams):
        acc += np.real(lam.values * fields[k].values)

    dx = c.grid.dx
    g = -(4.0 * problem.omega ** 2 * dx ** 2 / c.field.values ** 3) * acc
    g = np.where(problem.mask_vector(), g, 0.0)
    pen, pen_grad = _penalty(c, problem)
    return RealField(c.grid, g + pen_grad), loss + pen


def _two_loop(g: np.ndarray, s_list: list[np.ndarray], y_list: list[np.ndarray]) -> np.ndarray:
    """Standard L-BFGS two-loop recursion; returns the descent direction."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / np.dot(yv, sv) for sv, yv in zip(s_list, y_list)]
    for sv, yv, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * np.dot(sv, q)
        alphas.append(a)
        q -= a * yv
    if s_list:
        gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
        q *= gamma
    for sv, yv, rho, a in zip(s_list, y_list, rhos, reversed(alphas)):
        b = rho * np.dot(yv, q)
        q += (a - b) * sv
    return -q


def reconstruct(problem: FwiProblem) -> tuple[SoundSpeedMap, FwiTrace]:
    """L-BFGS with backtracking line search over the masked speed map.

    Accepted iterates keep c above min_speed_frac * c0 and above the forward
    grid's sampling floor (just over 4 points per wavelength), whichever is
    higher, by capping the step length.  Forward and adjoint fields are
    reused as warm starts across iterations, which changes only solve
    iteration counts, never their fixed points.
    """
    opts = problem.options
    trace = FwiTrace()
    c0 = problem.c_init.c0
    # below ~4 points per wavelength the forward solver rejects the map, so
    # the floor must track the grid even when min_speed_frac allows less
    c_floor = max(opts.min_speed_frac * c0,
                  _MIN_PPW * problem.omega * problem.c_init.grid.dx / (2.0 * np.pi))
    mask = problem.mask_vector()
    cache: dict = {}

    def to_map(x: np.ndarray) -> SoundSpeedMap:
        return SoundSpeedMap(RealField(problem.c_init.grid, x), c0)

    x = problem.c_init.field.values.copy()
    g_field, loss = gradient(to_map(x), problem, cache)
    g = g_field.values.copy()
    g0_norm = float(np.linalg.norm(g))
    trace.losses.append(loss)
    trace.grad_norms.append(g0_norm)
    if opts.keep_iterates:
        trace.iterates.append(x.copy())
    if g0_norm == 0.0:
        trace.status = "stationary start"
        return to_map(x), trace

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    accepted_any = False

    for it in range(opts.max_iterations):
        d = _two_loop(g, s_list, y_list)
        slope = float(np.dot(g, d))
        if slope >= 0:
            # fall back to steepest descent if curvature info turned stale
            d = -g
            slope = -float(np.dot(g, g))
            s_list.clear(); y_list.clear()

        if s_list:
            t = 1.0
        else:
            t = opts.first_step_frac * c0 / float(np.max(np.abs(d)))
        # cap the step so the speed floor cannot be crossed mid-search
        viol = d < 0
        if np.any(viol):
            t_max = float(np.min((c_floor - x[viol]) / d[viol]))
            t = min(t, 0.95 * t_max)

        accepted = False
        for _ in range(opts.max_ls_steps):
            x_try = x + t * d
            try:
                loss_try = _loss_at(to_map(x_try), problem, cache)
            except SolverError:
                # a trial map the forward solver cannot converge on is
                # rejected like any other insufficient-decrease step
                t *= opts.ls_backtrack
                continue
            if loss_try < loss + opts.ls_c1 * t * slope:
                accepted = True
                break
            t *= opts.ls_backtrack
        if not accepted:
            trace.status = "line search failed" if accepted_any \
                else "line search failed before any accepted step"
            return to_map(x), trace

        g_new_field, _ = gradient(to_map(x_try), problem, cache)
        g_new = g_new_field.values.copy()
        s = x_try - x
        yv = g_new - g
        sy = float(np.dot(s, yv))
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_list.append(s); y_list.append(yv)
            if len(s_list) > opts.memory:
                s_list.pop(0); y_list.pop(0)

        # carry the line-search value forward: the gradient call re-solves the
        # same point only to solver tolerance, and recording its loss instead
        # could break the strict decrease the Armijo test just established
        x, g, loss = x_try, g_new, loss_try
        accepted_any = True
        trace.losses.append(loss)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        trace.step_sizes.append(t)
        if opts.keep_iterates:
            trace.iterates.append(x.copy())

        if np.linalg.norm(g) <= opts.grad_tol * g0_norm:
            trace.status = "gradient tolerance reached"
            return to_map(x), trace

    trace.status = "max iterations reached"
    return to_map(x), trace
