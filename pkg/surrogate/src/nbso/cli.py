"""Command line: train, evaluate, and invert with the surrogate.

Every command prints machine-parsable ``key,value`` rows or delimited
tables and writes field containers, so results slot into the same scripts
as the wave toolkit's own output.  Comparison metrics come from
``usct metrics`` rather than a reimplementation.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .dataset import ToyWavefieldDataset, incident_fields, split_by_phantom
from .fwi import SurrogateFwiOptions, SurrogateProblem, surrogate_reconstruct
from .interop import read_measurements, usct_metrics, write_metrics_table
from .model import NbsoConfig
from .containers import write_array
from .training import load_checkpoint, save_checkpoint, train


def _config_from_args(args: argparse.Namespace) -> NbsoConfig:
    return NbsoConfig(layers=args.layers, width=args.width, modes=args.modes,
                      epochs=args.epochs, batch_size=args.batch_size,
                      lr_max=args.lr_max, lr_min=args.lr_min,
                      weight_decay=args.weight_decay, seed=args.seed,
                      scattering_amplitude=not args.no_amplitude,
                      init_from_speed=not args.rho_only_init,
                      contrast_scale=args.contrast_scale,
                      val_fraction=args.val_fraction)


def cmd_train(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, report = train(args.dataset, cfg, log=print)
    dataset = ToyWavefieldDataset(args.dataset)
    ckpt = out / "checkpoint.pt"
    save_checkpoint(ckpt, model, report, dataset)
    with open(out / "training.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rel_l2", "val_rrmse"])
        for i, (tr, va) in enumerate(zip(report.train_history,
                                         report.val_history), start=1):
            writer.writerow([i, f"{tr:.6e}", f"{va:.6e}"])
    print(f"checkpoint,{ckpt}")
    print(f"status,{report.status}")
    print(f"steps,{report.steps}")
    print(f"wall_seconds,{report.wall_seconds:.1f}")
    if report.val_history:
        print(f"val_rrmse,{report.val_history[-1]:.6f}")
        print(f"best_val_rrmse,{report.best_val:.6f}")


def cmd_eval(args: argparse.Namespace) -> None:
    model, meta = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    if args.split == "all":
        ids = None
    else:
        train_ids, val_ids = split_by_phantom(args.dataset, cfg.val_fraction,
                                              cfg.seed)
        ids = train_ids if args.split == "train" else val_ids
    dataset = ToyWavefieldDataset(args.dataset, ids, cfg.contrast_scale)
    loader = torch.utils.data.DataLoader(dataset, batch_size=cfg.batch_size)

    ratios, baselines = [], []
    with torch.no_grad():
        for batch in loader:
            pred = model(batch["z"], batch["rho"], batch["u_in"])
            dims = tuple(range(1, pred.ndim))
            den = torch.linalg.vector_norm(batch["u"], dim=dims)
            ratios.append(torch.linalg.vector_norm(
                pred - batch["u"], dim=dims) / den)
            baselines.append(torch.linalg.vector_norm(
                batch["u_in"] - batch["u"], dim=dims) / den)
    print(f"records,{len(dataset)}")
    print(f"rrmse,{float(torch.cat(ratios).mean()):.6f}")
    print(f"baseline_rrmse,{float(torch.cat(baselines).mean()):.6f}")


def cmd_reconstruct(args: argparse.Namespace) -> None:
    model, meta = load_checkpoint(args.checkpoint)
    root = Path(args.dataset)
    manifest = json.loads((root / "manifest.json").read_text())
    for key in ("nx", "ny", "dx_m"):
        if manifest["grid"][key] != meta["grid"][key]:
            raise ValueError(f"dataset grid {key} differs from checkpoint")
    for key in ("c0_m_per_s", "omega_rad_per_s"):
        if not np.isclose(manifest[key], meta[key]):
            raise ValueError(f"dataset {key} differs from checkpoint")

    y, mmeta = read_measurements(args.measurements)
    if not np.isclose(mmeta["omega_rad_per_s"], meta["omega_rad_per_s"]):
        raise ValueError("measurement frequency differs from checkpoint")

    positions, u_in = incident_fields(root)
    if mmeta["ring_count"] != len(positions):
        raise ValueError(f"measurements expect {mmeta['ring_count']} ring "
                         f"transducers, dataset provides {len(positions)}")

    dataset = ToyWavefieldDataset(root, contrast_scale=model.cfg.contrast_scale)
    geometry = dataset.geometry
    center = positions.mean(axis=0)
    radius = float(np.hypot(*(positions - center).T).mean())
    x0, y0 = geometry.origin
    xs, ys = np.meshgrid(x0 + np.arange(geometry.nx) * geometry.dx,
                         y0 + np.arange(geometry.ny) * geometry.dx)
    r2 = (xs - center[0]) ** 2 + (ys - center[1]) ** 2
    mask = (r2 < (args.mask_radius_fraction * radius) ** 2).reshape(-1)

    problem = SurrogateProblem(model=model, geometry=geometry,
                               c0=dataset.c0, omega=dataset.omega,
                               positions=positions,
                               source_indices=list(mmeta["source_indices"]),
                               y=y, u_in=u_in, mask=mask,
                               exclude_self=mmeta["exclude_self"])
    opts = SurrogateFwiOptions(max_iterations=args.iterations)
    t0 = time.perf_counter()
    c_rec, trace = surrogate_reconstruct(problem, opts)
    wall = time.perf_counter() - t0
    print(f"reconstruction: {trace.status} after {len(trace.losses) - 1} "
          f"iterations, {wall:.1f} s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recon_path = out / "recon_surrogate.field"
    init_path = out / "init.field"
    write_array(recon_path, c_rec.astype(np.float64), geometry.dx)
    write_array(init_path,
                np.full((geometry.ny, geometry.nx), dataset.c0), geometry.dx)

    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "grad_norm", "step_size"])
        steps = [""] + [f"{s:.6e}" for s in trace.step_sizes]
        for i, (lo, gn) in enumerate(zip(trace.losses, trace.grad_norms)):
            writer.writerow([i, f"{lo:.12e}", f"{gn:.12e}", steps[i]])

    if args.truth is not None:
        rows = []
        for stage, path in (("initial", init_path), ("recon", recon_path)):
            scores = usct_metrics(args.truth, path, data_range=args.data_range)
            scores["stage"] = stage
            rows.append(scores)
        write_metrics_table(out / "results.csv", rows)
        for row in rows:
            print(f"{row['stage']:8s} rrmse={row['rrmse']:.4e} "
                  f"psnr_db={row['psnr_db']:.2f} ssim={row['ssim']:.4f}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nbso", description="toy neural Born series operator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a gen-dataset directory")
    p_train.add_argument("dataset", help="dataset directory with manifest.json")
    p_train.add_argument("-o", "--out", required=True, help="output directory")
    defaults = NbsoConfig()
    p_train.add_argument("--layers", type=int, default=defaults.layers)
    p_train.add_argument("--width", type=int, default=defaults.width)
    p_train.add_argument("--modes", type=int, default=defaults.modes)
    p_train.add_argument("--epochs", type=int, default=defaults.epochs)
    p_train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p_train.add_argument("--lr-max", type=float, default=defaults.lr_max)
    p_train.add_argument("--lr-min", type=float, default=defaults.lr_min)
    p_train.add_argument("--weight-decay", type=float,
                         default=defaults.weight_decay)
    p_train.add_argument("--seed", type=int, default=defaults.seed)
    p_train.add_argument("--val-fraction", type=float,
                         default=defaults.val_fraction)
    p_train.add_argument("--contrast-scale", type=float,
                         default=defaults.contrast_scale)
    p_train.add_argument("--no-amplitude", action="store_true",
                         help="decode the wavefield directly instead of "
                              "the (1 + u_out) * u_in product")
    p_train.add_argument("--rho-only-init", action="store_true",
                         help="blind the initial latent state to the medium")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="relative-L2 error on a dataset split")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--split", choices=("val", "train", "all"),
                        default="val")
    p_eval.set_defaults(fn=cmd_eval)

    p_rec = sub.add_parser(
        "reconstruct",
        help="surrogate-driven inversion of a measured observation")
    p_rec.add_argument("checkpoint")
    p_rec.add_argument("dataset",
                       help="dataset directory supplying u_in per transducer")
    p_rec.add_argument("measurements",
                       help="directory with measurements.csv/.json")
    p_rec.add_argument("-o", "--out", required=True)
    p_rec.add_argument("--truth", default=None,
                       help="reference field container; enables results.csv")
    p_rec.add_argument("--data-range", type=float, default=None)
    p_rec.add_argument("--mask-radius-fraction", type=float, default=0.8)
    p_rec.add_argument("--iterations", type=int,
                       default=SurrogateFwiOptions().max_iterations)
    p_rec.set_defaults(fn=cmd_reconstruct)

    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:   # one-line, machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
