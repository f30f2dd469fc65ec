"""File-output plotting helpers for the CLI report paths.

Headless by construction: the Agg backend is forced before pyplot loads,
so these work in batch jobs with no display.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np

from .fields import ComplexField, RealField

__all__ = ["save_map_png", "save_complex_png", "save_loss_curve_png"]


def _imshow_extent(grid) -> tuple[float, float, float, float]:
    """Cell-edge bounds in millimeters for imshow."""
    xs, ys = grid.x_coords(), grid.y_coords()
    h = grid.dx / 2
    return ((xs[0] - h) * 1e3, (xs[-1] + h) * 1e3,
            (ys[0] - h) * 1e3, (ys[-1] + h) * 1e3)


def save_map_png(field: RealField, path: str | Path, title: str = "",
                 cmap: str = "viridis") -> Path:
    """Render a real field (sound speed, mask, error map) to a PNG file."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(field.as_2d(), origin="lower", cmap=cmap,
                   extent=_imshow_extent(field.grid))
    ax.set_xlabel("x [mm]"); ax.set_ylabel("y [mm]")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def save_complex_png(u: ComplexField, path: str | Path, title: str = "") -> Path:
    """Real part and magnitude of a wavefield, side by side."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    ext = _imshow_extent(u.grid)
    u2 = u.as_2d()
    for ax, data, label in ((axes[0], np.real(u2), "Re u"),
                            (axes[1], np.abs(u2), "|u|")):
        im = ax.imshow(data, origin="lower", cmap="RdBu_r" if label == "Re u" else "magma",
                       extent=ext)
        ax.set_title(f"{title} {label}".strip())
        ax.set_xlabel("x [mm]"); ax.set_ylabel("y [mm]")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def save_loss_curve_png(losses, path: str | Path, title: str = "loss") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(range(len(losses)), losses, marker=".")
    ax.set_xlabel("iteration"); ax.set_ylabel("misfit")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path
