"""Training loop: Adam + cosine annealing on the relative-L2 objective."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import ToyWavefieldDataset, split_by_phantom
from .model import Nbso, NbsoConfig, relative_l2


@dataclass
class TrainReport:
    train_history: list[float] = field(default_factory=list)   # epoch means
    val_history: list[float] = field(default_factory=list)     # epoch RRMSE
    status: str = "completed"
    steps: int = 0
    wall_seconds: float = 0.0

    @property
    def best_val(self) -> float:
        return min(self.val_history) if self.val_history else float("nan")


def _evaluate(model: Nbso, loader: torch.utils.data.DataLoader) -> float:
    """Dataset-mean relative L2 of the predicted wavefield."""
    model.eval()
    ratios = []
    with torch.no_grad():
        for batch in loader:
            pred = model(batch["z"], batch["rho"], batch["u_in"])
            dims = tuple(range(1, pred.ndim))
            num = torch.linalg.vector_norm(pred - batch["u"], dim=dims)
            den = torch.linalg.vector_norm(batch["u"], dim=dims)
            ratios.append((num / den))
    model.train()
    return float(torch.cat(ratios).mean())


def train(root: str | Path, cfg: NbsoConfig,
          train_ids: list[str] | None = None,
          val_ids: list[str] | None = None,
          log=None) -> tuple[Nbso, TrainReport]:
    """Train on a generated dataset directory; deterministic given cfg.seed."""
    if train_ids is None or val_ids is None:
        train_ids, val_ids = split_by_phantom(root, cfg.val_fraction, cfg.seed)
    train_ds = ToyWavefieldDataset(root, train_ids, cfg.contrast_scale)
    val_ds = ToyWavefieldDataset(root, val_ids, cfg.contrast_scale)

    model = Nbso(cfg, train_ds.geometry.nx)
    loader_rng = torch.Generator().manual_seed(cfg.seed + 1)
    train_loader = torch.utils.data.DataLoader(
        train_ds, batch_size=cfg.batch_size, shuffle=True, generator=loader_rng)
    val_loader = torch.utils.data.DataLoader(val_ds, batch_size=cfg.batch_size)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_max,
                                 weight_decay=cfg.weight_decay)
    total_steps = max(1, cfg.epochs * len(train_loader))
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=total_steps, eta_min=cfg.lr_min)

    report = TrainReport()
    last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
    t0 = time.time()
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for batch in train_loader:
            optimizer.zero_grad()
            pred = model(batch["z"], batch["rho"], batch["u_in"])
            loss = relative_l2(pred, batch["u"])
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                report.status = f"diverged at step {report.steps}; restored last epoch"
                report.wall_seconds = time.time() - t0
                return model, report
            loss.backward()
            optimizer.step()
            scheduler.step()
            report.steps += 1
            epoch_losses.append(float(loss.detach()))
        report.train_history.append(float(np.mean(epoch_losses)))
        report.val_history.append(_evaluate(model, val_loader))
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: train {report.train_history[-1]:.4f} "
                f"val {report.val_history[-1]:.4f}")
    report.wall_seconds = time.time() - t0
    return model, report


def save_checkpoint(path: str | Path, model: Nbso, report: TrainReport,
                    dataset: ToyWavefieldDataset) -> None:
    """Weights plus enough json metadata to rebuild and sanity-check."""
    meta = {
        "config": json.loads(json.dumps(model.cfg.__dict__)),
        "config_sha256": model.cfg.sha256(),
        "grid": {"nx": dataset.geometry.nx, "ny": dataset.geometry.ny,
                 "dx_m": dataset.geometry.dx},
        "c0_m_per_s": dataset.c0,
        "omega_rad_per_s": dataset.omega,
        "val_rrmse": report.val_history[-1] if report.val_history else None,
        "status": report.status,
    }
    torch.save({"meta_json": json.dumps(meta, sort_keys=True),
                "state_dict": model.state_dict()}, path)


def load_checkpoint(path: str | Path) -> tuple[Nbso, dict]:
    blob = torch.load(path, weights_only=True)
    meta = json.loads(blob["meta_json"])
    cfg = NbsoConfig(**meta["config"])
    if cfg.sha256() != meta["config_sha256"]:
        raise ValueError("checkpoint config hash mismatch")
    model = Nbso(cfg, meta["grid"]["nx"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, meta
