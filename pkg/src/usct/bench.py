"""Solver timing harness: per-solve wall time, mean and standard deviation.

Two row kinds: "single" times one forward solve at a time; "batched" runs
the full observation (all planned sources, threaded) and divides by the
source count, so the two rows expose the threading benefit directly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .array import make_point_source, ring_positions, simulate_observation
from .config import RunConfig, build_boundary, build_grid, build_plan, build_ring
from .solver import SoundSpeedMap, cbs_solve

__all__ = ["BenchRow", "bench_solver", "format_rows"]


@dataclass(frozen=True)
class BenchRow:
    label: str
    solves_per_run: int
    repeats: int
    mean_s: float      # per solve
    std_s: float       # per solve, over repeats

    def as_csv(self) -> str:
        return (f"{self.label},{self.solves_per_run},{self.repeats},"
                f"{self.mean_s:.6f},{self.std_s:.6f}")


def _stats(samples: list[float]) -> tuple[float, float]:
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std())


def bench_solver(cfg: RunConfig, repeats: int = 3) -> list[BenchRow]:
    """Time the forward solver on the configured homogeneous medium."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    grid = build_grid(cfg)
    ring = build_ring(cfg)
    plan = build_plan(cfg)
    boundary = build_boundary(cfg)
    omega = cfg.omega
    c = SoundSpeedMap.homogeneous(grid, cfg.medium.c0_m_per_s)
    positions = ring_positions(ring)
    rho = make_point_source(grid, positions[plan.source_indices[0]], plan.amplitude)

    # warm-up run keeps FFT planning and allocator effects out of the samples
    cbs_solve(c, rho, omega, boundary, tol=cfg.solver.tol,
              max_iter=cfg.solver.max_iter)

    single = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        cbs_solve(c, rho, omega, boundary, tol=cfg.solver.tol,
                  max_iter=cfg.solver.max_iter)
        single.append(time.perf_counter() - t0)

    n_src = len(plan.source_indices)
    batched = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        simulate_observation(c, ring, plan, omega, boundary,
                             tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
        batched.append((time.perf_counter() - t0) / n_src)

    m1, s1 = _stats(single)
    m2, s2 = _stats(batched)
    return [BenchRow("single", 1, repeats, m1, s1),
            BenchRow("batched", n_src, repeats, m2, s2)]


def format_rows(rows: list[BenchRow]) -> str:
    """Human-oriented table; one 'mean ± std' line per row."""
    lines = [f"{'mode':<10} {'solves':>6} {'repeats':>7}   per-solve wall time"]
    for r in rows:
        lines.append(f"{r.label:<10} {r.solves_per_run:>6} {r.repeats:>7}   "
                     f"{r.mean_s * 1e3:9.2f} ms ± {r.std_s * 1e3:.2f} ms")
    return "\n".join(lines)
