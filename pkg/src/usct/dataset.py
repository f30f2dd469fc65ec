"""Dataset generation: (sound-speed map, wavefield) pairs on disk.

Layout under the output directory:

    manifest.json                 index of everything below
    phantoms/p0000.field          sound-speed map, real 32-bit
    u_in/s000.field               homogeneous reference field, complex 64-bit
    fields/p0000_s000.field       heterogeneous wavefield, complex 64-bit

The homogeneous reference u_in depends only on the source, not on the
phantom, so it is solved once per source and shared by every record; the
per-record recomputation equals the shared file exactly because both are
the same deterministic solve.

The manifest is pure JSON with sorted keys and no timestamps: regenerating
with the same config and seeds reproduces it byte for byte.  Failed solves
stay in the record list with ok=false but are excluded from "valid_ids".
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .array import make_point_source, ring_positions
from .config import (RunConfig, build_boundary, build_grid, build_plan,
                     build_ring, config_sha256)
from .container import write_array
from .parallel import worker_count
from .phantoms import PhantomSpec, gen_phantom
from .solver import SoundSpeedMap, cbs_solve

__all__ = ["gen_dataset", "load_manifest"]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _solve_one(c: SoundSpeedMap, grid, position, amplitude, omega, boundary,
               tol, max_iter):
    rho = make_point_source(grid, position, amplitude)
    u, report = cbs_solve(c, rho, omega, boundary, tol=tol, max_iter=max_iter)
    return u, report.converged


def gen_dataset(cfg: RunConfig, out_dir: str | Path | None = None) -> Path:
    """Generate all records and write the manifest; returns the manifest path."""
    grid = build_grid(cfg)
    ring = build_ring(cfg)
    plan = build_plan(cfg)
    plan.validate_against(ring)
    boundary = build_boundary(cfg)
    omega = cfg.omega
    c0 = cfg.medium.c0_m_per_s
    positions = ring_positions(ring)
    tol, max_iter = cfg.solver.tol, cfg.solver.max_iter

    root = Path(out_dir if out_dir is not None else cfg.output.directory)
    for sub in ("phantoms", "u_in", "fields"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    phantoms = []
    for p in range(cfg.phantom.count):
        spec = PhantomSpec(kind=cfg.phantom.kind, grid=grid, c0=c0,
                           organ_radius_fraction=cfg.phantom.organ_radius_fraction,
                           inclusion_contrast=cfg.phantom.inclusion_contrast,
                           inclusion_count=cfg.phantom.inclusion_count,
                           seed=cfg.phantom.seed + p)
        phantoms.append((p, spec, gen_phantom(spec)))

    phantom_entries = {}
    for p, spec, c in phantoms:
        path = root / "phantoms" / f"p{p:04d}.field"
        write_array(path, c.field.as_2d().astype(np.float32), grid.dx, 0)
        phantom_entries[f"p{p:04d}"] = {
            "path": str(path.relative_to(root)),
            "sha256": _sha256(path),
            "kind": spec.kind,
            "seed": spec.seed,
        }

    c_hom = SoundSpeedMap.homogeneous(grid, c0)

    def solve_u_in(k_src):
        k, src = k_src
        return _solve_one(c_hom, grid, positions[src], plan.amplitude, omega,
                          boundary, tol, max_iter)

    items = list(enumerate(plan.source_indices))
    with ThreadPoolExecutor(max_workers=worker_count(len(items))) as pool:
        u_in_results = list(pool.map(solve_u_in, items))

    u_in_entries = {}
    for (k, src), (u, ok) in zip(items, u_in_results):
        if not ok:
            raise RuntimeError(f"homogeneous reference solve failed for source {src}")
        path = root / "u_in" / f"s{src:03d}.field"
        write_array(path, u.as_2d().astype(np.complex64), grid.dx, 1)
        u_in_entries[f"s{src:03d}"] = {
            "path": str(path.relative_to(root)),
            "sha256": _sha256(path),
            "source_index": src,
        }

    tasks = [(p, k, src) for p, _, _ in phantoms for k, src in items]

    def solve_record(task):
        p, k, src = task
        c = phantoms[p][2]
        return _solve_one(c, grid, positions[src], plan.amplitude, omega,
                          boundary, tol, max_iter)

    with ThreadPoolExecutor(max_workers=worker_count(len(tasks))) as pool:
        results = list(pool.map(solve_record, tasks))

    records = []
    valid_ids = []
    for (p, k, src), (u, ok) in zip(tasks, results):
        rec_id = f"p{p:04d}_s{src:03d}"
        entry = {
            "id": rec_id,
            "phantom": f"p{p:04d}",
            "source_index": src,
            "source_position_m": [float(positions[src][0]), float(positions[src][1])],
            "omega_rad_per_s": omega,
            "u_in": f"s{src:03d}",
            "ok": bool(ok),
            "solver_tol": tol,
            "seed": cfg.phantom.seed + p,
            "version": __version__,
        }
        if ok:
            path = root / "fields" / f"{rec_id}.field"
            write_array(path, u.as_2d().astype(np.complex64), grid.dx, 1)
            entry["path"] = str(path.relative_to(root))
            entry["sha256"] = _sha256(path)
            valid_ids.append(rec_id)
        records.append(entry)

    manifest = {
        "config_sha256": config_sha256(cfg),
        "version": __version__,
        "grid": {"nx": grid.nx, "ny": grid.ny, "dx_m": grid.dx},
        "c0_m_per_s": c0,
        "omega_rad_per_s": omega,
        "phantoms": phantom_entries,
        "u_in": u_in_entries,
        "records": records,
        "valid_ids": valid_ids,
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest_path


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())
