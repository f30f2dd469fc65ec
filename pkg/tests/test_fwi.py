"""Inversion building blocks: misfit, adjoint source, gradient, optimizer.

The gradient tests verify the analytic adjoint-state gradient against
central finite differences computed from the loss alone, built before the
optimizer was trusted with either.
"""
import os
import subprocess
import sys

import numpy as np
import pytest

from usct.array import (MeasurementSet, SourcePlan, TransducerRing,
                        add_noise, ring_positions, sample_at,
                        simulate_observation)
from usct.fields import ComplexField, RealField, make_grid
from usct.fwi import (FwiOptions, FwiProblem, _loss_at, adjoint_source,
                      gradient, misfit, reconstruct)
from usct.phantoms import PhantomSpec, gen_phantom
from usct.solver import BoundarySpec, SoundSpeedMap


# ---------------------------------------------------------------- fixtures

def _setup(n=32, count=6, seed=2, contrast=0.02, tol=1e-8):
    grid = make_grid(n, n, 1e-3)
    c0 = 1500.0
    omega = 2 * np.pi * c0 / (8 * grid.dx)
    spec = PhantomSpec(kind="inclusion-test", grid=grid, c0=c0,
                       organ_radius_fraction=0.6, inclusion_contrast=contrast,
                       seed=seed)
    c_true = gen_phantom(spec)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=count)
    plan = SourcePlan.every_nth(count, 1)
    bnd = BoundarySpec(width=16)
    y = simulate_observation(c_true, ring, plan, omega, bnd,
                             tol=tol, max_iter=3000)
    return grid, c0, c_true, ring, plan, bnd, y


def _fake_pair(seed, count=8, exclude_self=True):
    rng = np.random.default_rng(seed)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.01, count=count)
    plan = SourcePlan.every_nth(count, 1)
    shape = (count, count)

    def mk(data):
        return MeasurementSet(data=data, ring=ring, plan=plan, omega=1e6,
                              row_ok=np.ones(count, dtype=bool),
                              exclude_self=exclude_self)
    a = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    b = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return mk(a), mk(b)


# ------------------------------------------------------------------ misfit

def test_misfit_zero_for_identical_data():
    y, _ = _fake_pair(0)
    loss, residual = misfit(y, y)
    assert loss == 0.0
    assert np.all(residual == 0.0)


def test_misfit_single_entry_modulus():
    y, _ = _fake_pair(1)
    data = y.data.copy()
    data[2, 5] += 3.0 + 4.0j
    y2 = MeasurementSet(data=data, ring=y.ring, plan=y.plan, omega=y.omega,
                        row_ok=y.row_ok)
    loss, _ = misfit(y, y2)
    assert loss == pytest.approx(25.0, rel=1e-12)


@pytest.mark.parametrize("exclude_self", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_misfit_matches_double_loop(seed, exclude_self):
    y_obs, y_pred = _fake_pair(seed, exclude_self=exclude_self)
    loss, residual = misfit(y_obs, y_pred)
    want = 0.0
    for k, src in enumerate(y_obs.plan.source_indices):
        for j in range(y_obs.ring.count):
            if exclude_self and j == src:
                assert residual[k, j] == 0.0
                continue
            d = y_pred.data[k, j] - y_obs.data[k, j]
            assert residual[k, j] == d
            want += abs(d) ** 2
    assert loss == pytest.approx(want, rel=1e-12)


def test_misfit_shape_mismatch():
    y, _ = _fake_pair(0, count=8)
    z, _ = _fake_pair(0, count=6)
    with pytest.raises(ValueError):
        misfit(y, z)


# ---------------------------------------------------------- adjoint source

def test_adjoint_source_zero_residual():
    grid = make_grid(32, 32, 1e-3)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=8)
    f = adjoint_source(np.zeros(8, dtype=complex), ring, grid)
    assert np.all(f.values == 0.0)


def test_adjoint_source_single_entry_is_one_splat():
    grid = make_grid(32, 32, 1e-3)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=8)
    r = np.zeros(8, dtype=complex)
    r[3] = 2.0 - 1.0j
    f = adjoint_source(r, ring, grid)
    nz = np.flatnonzero(f.values)
    assert 1 <= len(nz) <= 4      # bilinear support of one position
    total = np.sum(f.values) * grid.dx ** 2
    np.testing.assert_allclose(total, 2.0 - 1.0j, rtol=1e-12)


def test_adjoint_source_is_exact_adjoint_of_sampling():
    grid = make_grid(32, 32, 1e-3)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=16)
    rng = np.random.default_rng(6)
    u = ComplexField(grid, rng.normal(size=grid.n_cells)
                     + 1j * rng.normal(size=grid.n_cells))
    r = rng.normal(size=16) + 1j * rng.normal(size=16)
    lhs = np.vdot(sample_at(u, ring_positions(ring)), r)
    rhs = grid.dx ** 2 * np.vdot(u.values, adjoint_source(r, ring, grid).values)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_adjoint_source_length_mismatch():
    grid = make_grid(32, 32, 1e-3)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=8)
    with pytest.raises(ValueError):
        adjoint_source(np.zeros(5, dtype=complex), ring, grid)


# ---------------------------------------------------------------- gradient

def _fd_loss(problem, base, pix, step):
    up = SoundSpeedMap(RealField(base.grid, base.field.values
                                 + step * (np.arange(base.grid.n_cells) == pix)),
                       base.c0)
    dn = SoundSpeedMap(RealField(base.grid, base.field.values
                                 - step * (np.arange(base.grid.n_cells) == pix)),
                       base.c0)
    return (_loss_at(up, problem, None) - _loss_at(dn, problem, None)) / (2 * step)


def _interior_pixels(grid, rng, k):
    xs, ys = grid.meshgrid()
    inside = np.flatnonzero((xs ** 2 + ys ** 2).reshape(-1) < 0.009 ** 2)
    return rng.choice(inside, size=k, replace=False)


def test_gradient_matches_finite_differences():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-8, solver_max_iter=3000)
    c_eval = problem.c_init
    g, _ = gradient(c_eval, problem)
    rng = np.random.default_rng(1)
    for pix in _interior_pixels(grid, rng, 4):
        fd = _fd_loss(problem, c_eval, pix, step=0.1)
        rel = abs(fd - g.values[pix]) / abs(fd)
        assert rel < 1e-3, f"pixel {pix}: fd {fd} vs grad {g.values[pix]}"


def test_gradient_with_tikhonov_matches_finite_differences():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    opts = FwiOptions(tikhonov_weight=1e-4)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-8, solver_max_iter=3000,
                         options=opts)
    # evaluate away from both the truth and the penalty reference so the
    # data term and the penalty term are simultaneously active
    xs, ys = grid.meshgrid()
    wobble = 3.0 * np.cos(400.0 * xs) * np.cos(300.0 * ys)
    c_eval = SoundSpeedMap(RealField(grid, c_true.field.values
                                     + wobble.reshape(-1)), c0)
    g, _ = gradient(c_eval, problem)
    rng = np.random.default_rng(2)
    for pix in _interior_pixels(grid, rng, 3):
        fd = _fd_loss(problem, c_eval, pix, step=0.1)
        rel = abs(fd - g.values[pix]) / abs(fd)
        assert rel < 1e-3, f"pixel {pix}: fd {fd} vs grad {g.values[pix]}"


def test_gradient_zero_outside_mask():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    xs, ys = grid.meshgrid()
    mask = ((xs ** 2 + ys ** 2) < 0.008 ** 2).reshape(-1)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         inversion_mask=mask, boundary=bnd, solver_tol=1e-6)
    g, _ = gradient(problem.c_init, problem)
    assert np.all(g.values[~mask] == 0.0)
    assert np.any(g.values[mask] != 0.0)


def test_gradient_vanishes_at_truth():
    # prediction at the truth repeats the observation solve bit for bit,
    # so residual, loss, and gradient are exactly zero
    grid, c0, c_true, ring, plan, bnd, y = _setup(tol=1e-6)
    problem = FwiProblem(observed=y, c_init=c_true, boundary=bnd,
                         solver_tol=1e-6, solver_max_iter=3000)
    g, loss = gradient(c_true, problem)
    assert loss <= 1e-20
    assert np.linalg.norm(g.values) <= 1e-8 * np.linalg.norm(y.data)


def test_gradient_directional_derivative():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-8, solver_max_iter=3000)
    c_eval = problem.c_init
    g, _ = gradient(c_eval, problem)
    rng = np.random.default_rng(3)
    xs, ys = grid.meshgrid()
    d = rng.normal(size=grid.n_cells)
    d *= ((xs ** 2 + ys ** 2) < 0.009 ** 2).reshape(-1)
    d /= np.max(np.abs(d))
    t = 0.05
    up = SoundSpeedMap(RealField(grid, c_eval.field.values + t * d), c0)
    dn = SoundSpeedMap(RealField(grid, c_eval.field.values - t * d), c0)
    fd = (_loss_at(up, problem, None) - _loss_at(dn, problem, None)) / (2 * t)
    rel = abs(fd - float(np.dot(g.values, d))) / abs(fd)
    assert rel < 1e-3


def test_gradient_deterministic_across_worker_counts():
    code = """
import os, sys
import numpy as np
os.environ["USCT_NUM_THREADS"] = sys.argv[1]
from usct.fields import make_grid
from usct.solver import SoundSpeedMap, BoundarySpec
from usct.array import TransducerRing, SourcePlan, simulate_observation
from usct.phantoms import PhantomSpec, gen_phantom
from usct.fwi import FwiProblem, gradient
grid = make_grid(32, 32, 1e-3)
c0 = 1500.0
omega = 2 * np.pi * c0 / (8 * grid.dx)
spec = PhantomSpec(kind="inclusion-test", grid=grid, c0=c0,
                   organ_radius_fraction=0.6, inclusion_contrast=0.02, seed=2)
c_true = gen_phantom(spec)
ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=4)
plan = SourcePlan.every_nth(4, 1)
bnd = BoundarySpec(width=16)
y = simulate_observation(c_true, ring, plan, omega, bnd, tol=1e-6)
prob = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                  boundary=bnd, solver_tol=1e-6)
g, loss = gradient(prob.c_init, prob)
sys.stdout.buffer.write(g.values.tobytes())
"""
    outs = []
    for workers in ("1", "3"):
        proc = subprocess.run([sys.executable, "-c", code, workers],
                              capture_output=True, check=True,
                              env={**os.environ, "PYTHONWARNINGS": "ignore"})
        outs.append(np.frombuffer(proc.stdout))
    scale = np.max(np.abs(outs[0]))
    assert np.max(np.abs(outs[0] - outs[1])) <= 1e-10 * scale


# --------------------------------------------------------------- optimizer

def test_reconstruct_stationary_at_truth():
    grid, c0, c_true, ring, plan, bnd, y = _setup(tol=1e-6)
    problem = FwiProblem(observed=y, c_init=c_true, boundary=bnd,
                         solver_tol=1e-6, solver_max_iter=3000)
    c_rec, trace = reconstruct(problem)
    assert trace.status == "stationary start"
    assert len(trace.losses) == 1
    np.testing.assert_array_equal(c_rec.field.values, c_true.field.values)


def test_reconstruct_loss_strictly_decreasing():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    opts = FwiOptions(max_iterations=4, keep_iterates=True)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-6, solver_max_iter=3000,
                         options=opts)
    c_rec, trace = reconstruct(problem)
    assert trace.status == "max iterations reached"
    assert len(trace.losses) == 5
    assert all(b < a for a, b in zip(trace.losses, trace.losses[1:]))
    assert all(t > 0 for t in trace.step_sizes)
    assert len(trace.step_sizes) == len(trace.losses) - 1
    assert len(trace.iterates) == len(trace.losses)
    # optimization actually helps
    err0 = np.linalg.norm(trace.iterates[0] - c_true.field.values)
    err1 = np.linalg.norm(trace.iterates[-1] - c_true.field.values)
    assert err1 < err0


@pytest.mark.filterwarnings("ignore:only .* points per wavelength")
def test_reconstruct_respects_speed_floor():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    y_noisy = add_noise(y, 0.0, seed=5)   # heavy noise invites wild updates
    opts = FwiOptions(max_iterations=6)
    problem = FwiProblem(observed=y_noisy,
                         c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-6, solver_max_iter=3000,
                         options=opts)
    c_rec, trace = reconstruct(problem)
    assert np.all(c_rec.field.values > 0.5 * c0)


@pytest.mark.filterwarnings("ignore:only .* points per wavelength")
def test_reconstruct_floor_tracks_grid_sampling_limit():
    # at 6 points per wavelength a 0.5 * c0 floor would let iterates cross
    # the solver's hard 4-per-wavelength limit and abort mid-reconstruction;
    # the sampling floor must bind first
    grid = make_grid(32, 32, 1e-3)
    c0 = 1500.0
    omega = 2 * np.pi * c0 / (6 * grid.dx)
    spec = PhantomSpec(kind="inclusion-test", grid=grid, c0=c0,
                       organ_radius_fraction=0.6, inclusion_contrast=0.03,
                       seed=2)
    c_true = gen_phantom(spec)
    ring = TransducerRing(center=(0.0, 0.0), radius=0.012, count=6)
    plan = SourcePlan.every_nth(6, 1)
    bnd = BoundarySpec(width=12)
    y = simulate_observation(c_true, ring, plan, omega, bnd, tol=1e-6,
                             max_iter=3000)
    y_noisy = add_noise(y, 0.0, seed=5)
    problem = FwiProblem(observed=y_noisy,
                         c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-6, solver_max_iter=3000,
                         options=FwiOptions(max_iterations=8))
    c_rec, trace = reconstruct(problem)
    floor = 4.2 * omega * grid.dx / (2 * np.pi)
    assert floor > 0.5 * c0
    assert np.min(c_rec.field.values) >= floor * (1 - 1e-12)
    assert trace.status in ("max iterations reached", "line search failed",
                            "gradient tolerance reached")


def test_line_search_rejects_failed_trial_evaluations(monkeypatch):
    # a trial step the forward solver cannot evaluate must be backtracked
    # past, not allowed to abort the reconstruction
    import usct.fwi as fwi_mod
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    real = fwi_mod._loss_at
    calls = {"n": 0}

    def flaky(c, problem, cache):
        calls["n"] += 1
        if calls["n"] == 1:
            raise fwi_mod.SolverError("trial map did not converge")
        return real(c, problem, cache)

    monkeypatch.setattr(fwi_mod, "_loss_at", flaky)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-6, solver_max_iter=3000,
                         options=FwiOptions(max_iterations=1))
    c_rec, trace = reconstruct(problem)
    assert calls["n"] >= 2
    assert trace.status == "max iterations reached"
    assert len(trace.step_sizes) == 1


def test_trace_losses_come_from_line_search_not_gradient_resolve(monkeypatch):
    # the gradient call re-evaluates the accepted point only to solver
    # tolerance; its loss must never enter the trace or the next Armijo
    # reference, or tolerance jitter could break strict decrease
    import usct.fwi as fwi_mod
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    real = fwi_mod.gradient
    state = {"n": 0, "l0": None}

    def jittered(c, problem, cache=None):
        g, loss = real(c, problem, cache)
        state["n"] += 1
        if state["l0"] is None:
            state["l0"] = loss
        elif state["n"] % 2 == 0:
            loss = loss + state["l0"]
        return g, loss

    monkeypatch.setattr(fwi_mod, "gradient", jittered)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-8, solver_max_iter=3000,
                         options=FwiOptions(max_iterations=4))
    c_rec, trace = reconstruct(problem)
    assert len(trace.losses) >= 3
    assert all(b < a for a, b in zip(trace.losses, trace.losses[1:]))


def test_reconstruct_strong_tikhonov_pins_to_reference():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    opts = FwiOptions(max_iterations=4, tikhonov_weight=1e8)
    problem = FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                         boundary=bnd, solver_tol=1e-6, solver_max_iter=3000,
                         options=opts)
    c_rec, trace = reconstruct(problem)
    assert np.max(np.abs(c_rec.field.values - c0)) < 0.01


def test_problem_mask_validation():
    grid, c0, c_true, ring, plan, bnd, y = _setup()
    with pytest.raises(ValueError):
        FwiProblem(observed=y, c_init=SoundSpeedMap.homogeneous(grid, c0),
                   inversion_mask=np.ones(7, dtype=bool))
