"""Command-line surface.

Every subcommand reads one YAML run configuration (see config.py) plus a
few flag overrides, writes delimited text and field containers under the
output directory, and exits nonzero with a one-line machine-parsable
``error: <category>: <message>`` on failure.  Exit codes: 2 configuration,
3 solver did not converge, 4 file I/O.
"""
from __future__ import annotations

import csv
import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .array import (SourcePlan, add_noise, make_point_source, ring_positions,
                    sample_at, simulate_observation)
from .bench import bench_solver, format_rows
from .config import (ConfigError, RunConfig, build_boundary, build_fwi_options,
                     build_grid, build_plan, build_ring, config_sha256,
                     load_config)
from .container import ContainerError, read_array, write_array, write_field
from .dataset import gen_dataset
from .fields import RealField
from .fwi import FwiProblem, reconstruct as run_reconstruct
from .metrics import psnr, rrmse, ssim
from .phantoms import PhantomSpec, contrast_stats, gen_phantom
from .reference import oracle_rrmse
from .solver import SolverError, SoundSpeedMap, cbs_solve

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _fail(category: str, message: str, code: int) -> None:
    one_line = " ; ".join(line.strip() for line in str(message).splitlines()
                          if line.strip())
    click.echo(f"error: {category}: {one_line}", err=True)
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail("config", str(exc), EXIT_CONFIG)
        except SolverError as exc:
            _fail("solver", str(exc), EXIT_SOLVER)
        except ContainerError as exc:
            _fail("io", str(exc), EXIT_IO)
        except OSError as exc:
            _fail("io", str(exc), EXIT_IO)
    return wrapper


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    root = Path(override) if override else Path(cfg.output.directory)
    root.mkdir(parents=True, exist_ok=True)
    return root


def _phantom(cfg: RunConfig, index: int = 0) -> SoundSpeedMap:
    spec = PhantomSpec(kind=cfg.phantom.kind, grid=build_grid(cfg),
                       c0=cfg.medium.c0_m_per_s,
                       organ_radius_fraction=cfg.phantom.organ_radius_fraction,
                       inclusion_contrast=cfg.phantom.inclusion_contrast,
                       inclusion_count=cfg.phantom.inclusion_count,
                       seed=cfg.phantom.seed + index)
    return gen_phantom(spec)


config_option = click.option("-c", "--config", "config_path", required=True,
                             type=click.Path(), help="run configuration YAML")
outdir_option = click.option("-o", "--out", "out_override", default=None,
                             type=click.Path(), help="output directory override")


@click.group()
@click.version_option(version=__version__, prog_name="usct")
def main():
    """Frequency-domain ultrasound tomography toolkit."""


@main.command("gen-phantoms")
@config_option
@outdir_option
@guarded
def gen_phantoms_cmd(config_path, out_override):
    """Generate the configured phantoms and write them as field containers."""
    cfg = load_config(config_path)
    out = _outdir(cfg, out_override)
    grid = build_grid(cfg)
    for p in range(cfg.phantom.count):
        c = _phantom(cfg, p)
        path = out / f"phantom_p{p:04d}.field"
        write_array(path, c.field.as_2d(), grid.dx, 2)
        stats = contrast_stats(c)
        click.echo(f"{path}  kind={cfg.phantom.kind} seed={cfg.phantom.seed + p} "
                   f"min={stats.c_min:.1f} max={stats.c_max:.1f} "
                   f"contrast={stats.rel_contrast:.4f}")


@main.command("simulate")
@config_option
@outdir_option
@click.option("--source", "source_pos", default=0, show_default=True,
              help="index into the source plan")
@click.option("--homogeneous", is_flag=True,
              help="solve on c = c0 and print the analytic-oracle RRMSE")
@click.option("--plot", is_flag=True, help="write PNG images of the results")
@guarded
def simulate_cmd(config_path, out_override, source_pos, homogeneous, plot):
    """Run a single forward solve for one planned source."""
    cfg = load_config(config_path)
    out = _outdir(cfg, out_override)
    grid = build_grid(cfg)
    ring = build_ring(cfg)
    plan = build_plan(cfg)
    plan.validate_against(ring)
    if not 0 <= source_pos < len(plan.source_indices):
        raise ConfigError(f"--source {source_pos} outside the plan "
                          f"(has {len(plan.source_indices)} sources)")
    src = plan.source_indices[source_pos]
    position = ring_positions(ring)[src]

    if homogeneous:
        # snap so the discrete source is a clean single-cell delta; the
        # analytic oracle is evaluated at the same snapped position
        from .reference import snap_to_node
        position = snap_to_node(grid, position)
        c = SoundSpeedMap.homogeneous(grid, cfg.medium.c0_m_per_s)
    else:
        c = _phantom(cfg)

    rho = make_point_source(grid, position, plan.amplitude)
    t0 = time.perf_counter()
    u, report = cbs_solve(c, rho, cfg.omega, build_boundary(cfg),
                          tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    wall = time.perf_counter() - t0
    if not report.converged:
        raise SolverError(f"forward solve did not converge in "
                          f"{report.iterations} iterations")

    path = out / f"simulated_s{src:03d}.field"
    write_field(path, u)
    click.echo(f"{path}  iterations={report.iterations} wall_s={wall:.3f}")
    if homogeneous:
        err = oracle_rrmse(u, cfg.omega, cfg.medium.c0_m_per_s, position,
                           plan.amplitude)
        click.echo(f"analytic-oracle RRMSE: {err:.6e}")

    if plot:
        from .plotting import save_complex_png, save_map_png
        save_complex_png(u, out / f"simulated_s{src:03d}.png", f"source {src}")
        save_map_png(c.field, out / "medium.png", "sound speed [m/s]")
        click.echo(f"wrote {out / f'simulated_s{src:03d}.png'} and {out / 'medium.png'}")


@main.command("observe")
@config_option
@outdir_option
@guarded
def observe_cmd(config_path, out_override):
    """Simulate the full measurement matrix and write it as CSV."""
    cfg = load_config(config_path)
    out = _outdir(cfg, out_override)
    c = _phantom(cfg)
    ring = build_ring(cfg)
    plan = build_plan(cfg)
    plan.validate_against(ring)
    y = simulate_observation(c, ring, plan, cfg.omega, build_boundary(cfg),
                             tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    if not y.row_ok.all():
        bad = [plan.source_indices[i] for i in np.flatnonzero(~y.row_ok)]
        raise SolverError(f"forward solves failed for sources {bad}")
    if cfg.noise.snr_db is not None:
        y = add_noise(y, cfg.noise.snr_db, cfg.noise.seed)

    csv_path = out / "measurements.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index"]
                        + [f"r{j:03d}_{part}" for j in range(ring.count)
                           for part in ("re", "im")])
        for k, src in enumerate(plan.source_indices):
            row = [src]
            for v in y.data[k]:
                row += [f"{v.real:.12e}", f"{v.imag:.12e}"]
            writer.writerow(row)

    meta = {
        "config_sha256": config_sha256(cfg),
        "omega_rad_per_s": cfg.omega,
        "ring_count": ring.count,
        "source_indices": list(plan.source_indices),
        "snr_db": cfg.noise.snr_db,
        "noise_seed": cfg.noise.seed if cfg.noise.snr_db is not None else None,
        "exclude_self": y.exclude_self,
    }
    (out / "measurements.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    click.echo(f"{csv_path}  sources={len(plan.source_indices)} receivers={ring.count} "
               f"snr_db={cfg.noise.snr_db}")


@main.command("gen-dataset")
@config_option
@outdir_option
@guarded
def gen_dataset_cmd(config_path, out_override):
    """Generate the phantom/wavefield dataset and its manifest."""
    cfg = load_config(config_path)
    manifest_path = gen_dataset(cfg, out_override)
    manifest = json.loads(manifest_path.read_text())
    click.echo(f"{manifest_path}  records={len(manifest['records'])} "
               f"valid={len(manifest['valid_ids'])}")


@main.command("reconstruct")
@config_option
@outdir_option
@click.option("--plot", is_flag=True, help="write PNG images of the results")
@guarded
def reconstruct_cmd(config_path, out_override, plot):
    """Full loop: phantom, observation, inversion, quality metrics."""
    cfg = load_config(config_path)
    out = _outdir(cfg, out_override)
    grid = build_grid(cfg)
    ring = build_ring(cfg)
    plan = build_plan(cfg)
    plan.validate_against(ring)
    boundary = build_boundary(cfg)
    c0 = cfg.medium.c0_m_per_s

    c_true = _phantom(cfg)
    y = simulate_observation(c_true, ring, plan, cfg.omega, boundary,
                             tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    if not y.row_ok.all():
        raise SolverError("observation stage had non-converged rows")
    if cfg.noise.snr_db is not None:
        y = add_noise(y, cfg.noise.snr_db, cfg.noise.seed)

    xs, ys = grid.meshgrid()
    r2 = (xs - ring.center[0]) ** 2 + (ys - ring.center[1]) ** 2
    mask = (r2 < (cfg.fwi.mask_radius_fraction * ring.radius) ** 2).reshape(-1)

    problem = FwiProblem(observed=y,
                         c_init=SoundSpeedMap.homogeneous(grid, c0),
                         inversion_mask=mask, boundary=boundary,
                         solver_tol=cfg.solver.tol,
                         solver_max_iter=cfg.solver.max_iter,
                         options=build_fwi_options(cfg))
    t0 = time.perf_counter()
    c_rec, trace = run_reconstruct(problem)
    wall = time.perf_counter() - t0
    click.echo(f"reconstruction: {trace.status} after {len(trace.losses) - 1} "
               f"iterations, {wall:.1f} s")

    write_field(out / "recon.field", c_rec.field)
    write_field(out / "truth.field", c_true.field)

    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "grad_norm", "step_size"])
        steps = [""] + [f"{s:.6e}" for s in trace.step_sizes]
        for i, (lo, gn) in enumerate(zip(trace.losses, trace.grad_norms)):
            writer.writerow([i, f"{lo:.12e}", f"{gn:.12e}", steps[i]])

    data_range = float(c_true.field.values.max() - c_true.field.values.min())
    rows = []
    for label, est in (("initial", problem.c_init.field), ("recon", c_rec.field)):
        rows.append((label, rrmse(c_true.field, est),
                     psnr(c_true.field, est, data_range=data_range),
                     ssim(c_true.field, est, data_range=data_range)))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "rrmse", "psnr_db", "ssim", "data_range"])
        for label, e_r, e_p, e_s in rows:
            writer.writerow([label, f"{e_r:.6e}", f"{e_p:.4f}", f"{e_s:.6f}",
                             f"{data_range:.6e}"])
    for label, e_r, e_p, e_s in rows:
        click.echo(f"{label:8s} rrmse={e_r:.4e} psnr_db={e_p:.2f} ssim={e_s:.4f}")

    if plot:
        from .plotting import save_loss_curve_png, save_map_png
        save_map_png(c_true.field, out / "truth.png", "true sound speed [m/s]")
        save_map_png(c_rec.field, out / "recon.png", "reconstruction [m/s]")
        err = RealField(grid, c_rec.field.values - c_true.field.values)
        save_map_png(err, out / "error.png", "reconstruction error [m/s]",
                     cmap="RdBu_r")
        save_loss_curve_png(trace.losses, out / "loss_curve.png", "data misfit")
        click.echo(f"wrote {out / 'truth.png'}, {out / 'recon.png'}, "
                   f"{out / 'error.png'}, {out / 'loss_curve.png'}")


@main.command("metrics")
@click.argument("reference", type=click.Path())
@click.argument("estimate", type=click.Path())
@click.option("--data-range", "data_range", type=float, default=None,
              help="range for PSNR/SSIM; default max - min of the reference")
@guarded
def metrics_cmd(reference, estimate, data_range):
    """Compare two real field containers; print metric,value rows."""
    ref_vals, ref_dx, _ = read_array(reference)
    est_vals, est_dx, _ = read_array(estimate)
    if ref_vals.shape != est_vals.shape or ref_dx != est_dx:
        raise ConfigError("reference and estimate grids differ")
    if np.iscomplexobj(ref_vals) or np.iscomplexobj(est_vals):
        raise ConfigError("metrics compare real-valued maps; got a complex field")
    from .fields import make_grid
    grid = make_grid(ref_vals.shape[1], ref_vals.shape[0], ref_dx)
    ref = RealField.from_2d(grid, ref_vals.astype(np.float64))
    est = RealField.from_2d(grid, est_vals.astype(np.float64))
    if data_range is None:
        data_range = float(ref.values.max() - ref.values.min())
        if data_range <= 0:
            raise ConfigError("reference has zero range; pass --data-range")
    click.echo(f"rrmse,{rrmse(ref, est):.6e}")
    click.echo(f"psnr_db,{psnr(ref, est, data_range=data_range):.4f}")
    click.echo(f"ssim,{ssim(ref, est, data_range=data_range):.6f}")
    click.echo(f"data_range,{data_range:.6e}")


@main.command("bench")
@config_option
@outdir_option
@click.option("--repeats", default=3, show_default=True,
              help="timing repetitions per row")
@guarded
def bench_cmd(config_path, out_override, repeats):
    """Time single and batched forward solves; report mean and std."""
    cfg = load_config(config_path)
    out = _outdir(cfg, out_override)
    rows = bench_solver(cfg, repeats=repeats)
    click.echo(format_rows(rows))
    csv_path = out / "bench.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write("mode,solves_per_run,repeats,mean_s,std_s\n")
        for r in rows:
            fh.write(r.as_csv() + "\n")
    click.echo(f"wrote {csv_path}")


if __name__ == "__main__":
    main()
