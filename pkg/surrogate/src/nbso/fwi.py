"""Surrogate-driven waveform inversion.

Every network evaluation uses a unit point source on the ring, which is
exactly the distribution the operator was trained on.  Forward data and
adjoint fields are both assembled from those per-transducer wavefields
outside the network: the adjoint field is the conjugate-residual
weighted sum of receiver-source fields, which matches the true adjoint
because the exact operator is linear in the source and symmetric under
this discretization.  Keeping the linear combination outside the model
means the surrogate never sees multi-point, residual-scaled sources it
was not trained on.  The optimizer is the same contract as the
toolkit's reconstruction: L-BFGS with two-loop recursion and a
backtracking line search on the actual surrogate misfit, so accepted
losses decrease strictly even though the gradient is the surrogate's
approximation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import GridGeometry, channels_to_complex, complex_to_channels
from .model import Nbso


@dataclass
class SurrogateProblem:
    model: Nbso
    geometry: GridGeometry
    c0: float
    omega: float
    positions: np.ndarray            # (R, 2) transducer coordinates
    source_indices: list[int]        # firing transducers, one row of y each
    y: np.ndarray                    # (K, R) measured complex matrix
    u_in: np.ndarray                 # (R, ny, nx) homogeneous fields per transducer
    mask: np.ndarray                 # flat bool, inversion support
    exclude_self: bool = True

    def __post_init__(self):
        if self.y.shape != (len(self.source_indices), len(self.positions)):
            raise ValueError("measurement matrix shape mismatch")
        if len(self.u_in) != len(self.positions):
            raise ValueError("one u_in record per transducer is required")


@dataclass
class SurrogateTrace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    status: str = "running"


@dataclass(frozen=True)
class SurrogateFwiOptions:
    memory: int = 10
    max_iterations: int = 40
    grad_tol: float = 1.0e-6
    ls_backtrack: float = 0.5
    ls_c1: float = 1.0e-4
    max_ls_steps: int = 30
    first_step_frac: float = 0.005
    min_speed_frac: float = 0.7


def _transducer_fields(problem: SurrogateProblem, c_flat: np.ndarray,
                       indices: list[int]) -> np.ndarray:
    """Surrogate wavefields for unit sources at the given transducers.

    One batched model call; every batch entry is a single-point unit
    source with its own homogeneous field, matching the training data.
    Returns a complex (len(indices), ny, nx) array.
    """
    g, scale = problem.geometry, problem.model.cfg.contrast_scale
    z = (c_flat.reshape(g.ny, g.nx) / problem.c0 - 1.0) * scale
    z_t = torch.from_numpy(z.astype(np.float32))[None, None]
    rho = np.stack([g.footprint(problem.positions[i]) for i in indices])
    with torch.no_grad():
        pred = problem.model(
            z_t.expand(len(indices), -1, -1, -1),
            complex_to_channels(rho),
            complex_to_channels(problem.u_in[indices]))
    return channels_to_complex(pred)


def _loss_and_gradient(problem: SurrogateProblem,
                       c_flat: np.ndarray) -> tuple[float, np.ndarray]:
    g = problem.geometry
    fields = _transducer_fields(problem, c_flat,
                                list(range(len(problem.positions))))
    loss = 0.0
    acc = np.zeros((g.ny, g.nx))
    for k, src in enumerate(problem.source_indices):
        u = fields[src]
        resid = g.sample(u, problem.positions) - problem.y[k]
        if problem.exclude_self:
            resid[src] = 0.0
        loss += float(np.sum(np.abs(resid) ** 2))
        # adjoint field by source linearity: conjugate-residual weighted
        # sum of the receiver-source fields already in the batch
        lam = np.einsum("j,jyx->yx", np.conj(resid), fields)
        acc += np.real(lam * u)
    grad = -(4.0 * problem.omega ** 2 * g.dx ** 2 / c_flat ** 3) * acc.reshape(-1)
    return loss, np.where(problem.mask, grad, 0.0)


def _loss_only(problem: SurrogateProblem, c_flat: np.ndarray) -> float:
    g = problem.geometry
    fields = _transducer_fields(problem, c_flat, list(problem.source_indices))
    loss = 0.0
    for k, src in enumerate(problem.source_indices):
        resid = g.sample(fields[k], problem.positions) - problem.y[k]
        if problem.exclude_self:
            resid[src] = 0.0
        loss += float(np.sum(np.abs(resid) ** 2))
    return loss


def _two_loop(grad, s_list, y_list):
    q = grad.copy()
    rhos = [1.0 / np.dot(yv, sv) for sv, yv in zip(s_list, y_list)]
    alphas = []
    for sv, yv, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * np.dot(sv, q)
        alphas.append(a)
        q -= a * yv
    if s_list:
        q *= np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
    for sv, yv, rho, a in zip(s_list, y_list, rhos, reversed(alphas)):
        q += (a - rho * np.dot(yv, q)) * sv
    return -q


def surrogate_reconstruct(problem: SurrogateProblem,
                          opts: SurrogateFwiOptions = SurrogateFwiOptions(),
                          ) -> tuple[np.ndarray, SurrogateTrace]:
    """Invert for the speed map; returns (c as (ny, nx), trace)."""
    trace = SurrogateTrace()
    c0 = problem.c0
    c_floor = opts.min_speed_frac * c0
    x = np.full(problem.geometry.ny * problem.geometry.nx, c0)
    loss, grad = _loss_and_gradient(problem, x)
    g0_norm = float(np.linalg.norm(grad))
    trace.losses.append(loss)
    trace.grad_norms.append(g0_norm)
    if g0_norm == 0.0:
        trace.status = "stationary start"
        return x.reshape(problem.geometry.ny, problem.geometry.nx), trace

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    accepted_any = False
    for _ in range(opts.max_iterations):
        d = _two_loop(grad, s_list, y_list)
        slope = float(np.dot(grad, d))
        if slope >= 0:
            d = -grad
            slope = -float(np.dot(grad, grad))
            s_list.clear(); y_list.clear()
        t = 1.0 if s_list else opts.first_step_frac * c0 / float(np.max(np.abs(d)))
        viol = d < 0
        if np.any(viol):
            t = min(t, 0.95 * float(np.min((c_floor - x[viol]) / d[viol])))
        accepted = False
        for _ in range(opts.max_ls_steps):
            x_try = x + t * d
            loss_try = _loss_only(problem, x_try)
            if loss_try < loss + opts.ls_c1 * t * slope:
                accepted = True
                break
            t *= opts.ls_backtrack
        if not accepted:
            trace.status = "line search failed" if accepted_any \
                else "line search failed before any accepted step"
            return x.reshape(problem.geometry.ny, problem.geometry.nx), trace
        loss_new, grad_new = _loss_and_gradient(problem, x_try)
        s, yv = x_try - x, grad_new - grad
        sy = float(np.dot(s, yv))
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_list.append(s); y_list.append(yv)
            if len(s_list) > opts.memory:
                s_list.pop(0); y_list.pop(0)
        # the recorded sequence is the line-search one, decreasing by construction
        x, grad, loss = x_try, grad_new, loss_try
        accepted_any = True
        trace.losses.append(loss)
        trace.grad_norms.append(float(np.linalg.norm(grad)))
        trace.step_sizes.append(t)
        if np.linalg.norm(grad) <= opts.grad_tol * g0_norm:
            trace.status = "gradient tolerance reached"
            return x.reshape(problem.geometry.ny, problem.geometry.nx), trace
    trace.status = "max iterations reached"
    return x.reshape(problem.geometry.ny, problem.geometry.nx), trace
