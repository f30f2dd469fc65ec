"""Dataset access: manifest reading, geometry, and training tensors.

Consumes the wave toolkit's ``gen-dataset`` output purely through its
published artifacts: ``manifest.json`` plus field containers.  Complex
fields become 2-channel real tensors (channel 0 = real, channel 1 =
imaginary).  The source density ``rho`` is encoded as the bilinear
footprint of the point source scaled by the source amplitude; the fixed
1/dx^2 density factor of the solver's delta convention is omitted so the
input stays O(1).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .containers import read_array


@dataclass(frozen=True)
class GridGeometry:
    """Centered cell-center grid, identical conventions to the toolkit."""
    nx: int
    ny: int
    dx: float

    @property
    def origin(self) -> tuple[float, float]:
        return (-(self.nx - 1) * self.dx / 2.0, -(self.ny - 1) * self.dx / 2.0)

    def bilinear(self, position) -> tuple[np.ndarray, np.ndarray]:
        """4 neighbor flat indices (row-major, x fastest) and weights."""
        x = (float(position[0]) - self.origin[0]) / self.dx
        y = (float(position[1]) - self.origin[1]) / self.dx
        if not (0.0 <= x <= self.nx - 1 and 0.0 <= y <= self.ny - 1):
            raise ValueError(f"position {tuple(position)} outside the grid")
        i0 = min(int(np.floor(x)), self.nx - 2)
        j0 = min(int(np.floor(y)), self.ny - 2)
        fx, fy = x - i0, y - j0
        idx = np.array([j0 * self.nx + i0, j0 * self.nx + i0 + 1,
                        (j0 + 1) * self.nx + i0, (j0 + 1) * self.nx + i0 + 1])
        w = np.array([(1 - fx) * (1 - fy), fx * (1 - fy),
                      (1 - fx) * fy, fx * fy])
        return idx, w

    def footprint(self, position, weight: complex = 1.0 + 0.0j) -> np.ndarray:
        """Complex (ny, nx) image of a weighted bilinear delta footprint."""
        rho = np.zeros(self.ny * self.nx, dtype=np.complex128)
        idx, w = self.bilinear(position)
        rho[idx] = complex(weight) * w
        return rho.reshape(self.ny, self.nx)

    def sample(self, field_2d: np.ndarray, positions) -> np.ndarray:
        """Bilinear interpolation of a (ny, nx) complex field."""
        flat = field_2d.reshape(-1)
        out = np.empty(len(positions), dtype=np.complex128)
        for n, pos in enumerate(positions):
            idx, w = self.bilinear(pos)
            out[n] = np.dot(flat[idx], w)
        return out


def ring_positions(center: tuple[float, float], radius: float,
                   count: int) -> np.ndarray:
    """(count, 2) transducer coordinates, toolkit angle convention."""
    theta = 2.0 * np.pi * np.arange(count) / count
    return np.stack([center[0] + radius * np.cos(theta),
                     center[1] + radius * np.sin(theta)], axis=1)


def complex_to_channels(a: np.ndarray) -> torch.Tensor:
    """(..., ny, nx) complex -> (..., 2, ny, nx) float32 tensor."""
    return torch.from_numpy(
        np.stack([a.real, a.imag], axis=-3).astype(np.float32))


def channels_to_complex(t: torch.Tensor) -> np.ndarray:
    """(..., 2, ny, nx) tensor -> (..., ny, nx) complex128 array."""
    a = t.detach().cpu().numpy().astype(np.float64)
    return a[..., 0, :, :] + 1j * a[..., 1, :, :]


class ToyWavefieldDataset(torch.utils.data.Dataset):
    """Record-level dataset over a manifest's valid ids.

    Each item is a dict of tensors: ``z`` (1, H, W) scaled speed contrast,
    ``rho`` (2, H, W), ``u_in`` (2, H, W), ``u`` (2, H, W), plus the record
    id.  Fields are loaded lazily and cached per phantom/source file.
    """

    def __init__(self, root: str | Path, ids: list[str] | None = None,
                 contrast_scale: float = 20.0):
        self.root = Path(root)
        manifest = json.loads((self.root / "manifest.json").read_text())
        self.manifest = manifest
        g = manifest["grid"]
        self.geometry = GridGeometry(nx=g["nx"], ny=g["ny"], dx=g["dx_m"])
        self.c0 = float(manifest["c0_m_per_s"])
        self.omega = float(manifest["omega_rad_per_s"])
        self.contrast_scale = float(contrast_scale)
        self.records = {r["id"]: r for r in manifest["records"]}
        self.ids = list(manifest["valid_ids"]) if ids is None else list(ids)
        for rec_id in self.ids:
            if rec_id not in self.records or not self.records[rec_id]["ok"]:
                raise ValueError(f"record {rec_id} missing or not valid")
        self._cache: dict[str, np.ndarray] = {}

    def _load(self, relpath: str) -> np.ndarray:
        if relpath not in self._cache:
            values, dx = read_array(self.root / relpath)
            if abs(dx - self.geometry.dx) > 1e-15:
                raise ValueError(f"{relpath}: dx {dx} disagrees with manifest")
            self._cache[relpath] = values
        return self._cache[relpath]

    def phantom_ids(self) -> list[str]:
        return sorted({self.records[i]["phantom"] for i in self.ids})

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int) -> dict:
        rec = self.records[self.ids[index]]
        c = self._load(self.manifest["phantoms"][rec["phantom"]]["path"])
        u_in = self._load(self.manifest["u_in"][rec["u_in"]]["path"])
        u = self._load(rec["path"])
        z = (c.astype(np.float64) / self.c0 - 1.0) * self.contrast_scale
        rho = self.geometry.footprint(rec["source_position_m"])
        return {
            "id": rec["id"],
            "z": torch.from_numpy(z.astype(np.float32)).unsqueeze(0),
            "rho": complex_to_channels(rho),
            "u_in": complex_to_channels(u_in),
            "u": complex_to_channels(u),
        }


def incident_fields(root: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Transducer positions and homogeneous fields from a dataset.

    Returns ``(positions, u_in)`` with positions (R, 2) and u_in
    (R, ny, nx) complex, indexed by ring transducer number.  Requires the
    dataset's source plan to cover every ring position, since the adjoint
    assembly needs an incident field at each receiver.
    """
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    g = manifest["grid"]

    by_index: dict[int, str] = {}
    for entry in manifest["u_in"].values():
        by_index[int(entry["source_index"])] = entry["path"]
    count = max(by_index) + 1
    missing = sorted(set(range(count)) - set(by_index))
    if missing:
        raise ValueError(f"dataset plan skips ring transducers {missing}; "
                         "regenerate with every_nth: 1")

    positions = np.zeros((count, 2))
    seen = np.zeros(count, dtype=bool)
    for rec in manifest["records"]:
        positions[rec["source_index"]] = rec["source_position_m"]
        seen[rec["source_index"]] = True
    if not seen.all():
        raise ValueError("dataset records do not cover every transducer")

    fields = np.zeros((count, g["ny"], g["nx"]), dtype=np.complex128)
    for index, relpath in by_index.items():
        values, dx = read_array(root / relpath)
        if abs(dx - g["dx_m"]) > 1e-15:
            raise ValueError(f"{relpath}: dx {dx} disagrees with manifest")
        fields[index] = values
    return positions, fields


def split_by_phantom(root: str | Path, val_fraction: float,
                     seed: int) -> tuple[list[str], list[str]]:
    """Train/validation record ids, holding out whole phantoms."""
    ds = ToyWavefieldDataset(root)
    phantoms = ds.phantom_ids()
    rng = np.random.default_rng(seed)
    rng.shuffle(phantoms)
    n_val = max(1, int(round(val_fraction * len(phantoms))))
    val_set = set(phantoms[:n_val])
    train_ids = [i for i in ds.ids if ds.records[i]["phantom"] not in val_set]
    val_ids = [i for i in ds.ids if ds.records[i]["phantom"] in val_set]
    return train_ids, val_ids
