"""Bit-exact binary container for gridded arrays.

Byte layout (little-endian throughout):

======  ====  =====================================================
offset  size  content
======  ====  =====================================================
0       8     magic ``b"USCTFLD1"``
8       4     nx, unsigned 32-bit
12      4     ny, unsigned 32-bit
16      8     dx in meters, IEEE-754 binary64
24      1     dtype code (see ``DTYPE_CODES``)
25      --    payload, ``nx*ny`` row-major values (x fastest)
======  ====  =====================================================

dtype codes: 0 = real float32, 1 = complex64 (interleaved float32
re/im pairs), 2 = real float64, 3 = complex128.

Readers reconstruct geometry with a centered origin,
``origin = (-(n-1)*dx/2, ...)``; the container does not store one.
This file format is the only contract between the primary toolkit and
any downstream consumer -- a reader needs nothing but this module's
docstring.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fields import ComplexField, RealField, make_grid

__all__ = [
    "ContainerError",
    "MagicError",
    "TruncatedPayloadError",
    "UnknownDtypeError",
    "write_array",
    "read_array",
    "write_field",
    "read_field",
]

MAGIC = b"USCTFLD1"
HEADER_SIZE = 25

# code -> (numpy dtype, bytes per value)
DTYPE_CODES = {
    0: (np.dtype("<f4"), 4),
    1: (np.dtype("<c8"), 8),
    2: (np.dtype("<f8"), 8),
    3: (np.dtype("<c16"), 16),
}
_CODE_FOR_DTYPE = {dt: code for code, (dt, _) in DTYPE_CODES.items()}


class ContainerError(Exception):
    """Base class for container read/write failures."""


class MagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class UnknownDtypeError(ContainerError):
    pass


def write_array(path: str | Path, values: np.ndarray, dx: float, dtype_code: int) -> None:
    """Write a 2D array (shape (ny, nx), row-major) to ``path``.

    Narrowing conversions (e.g. complex128 -> code 1) happen exactly as
    requested via ``dtype_code``; callers opt into precision loss.
    """
    if dtype_code not in DTYPE_CODES:
        raise UnknownDtypeError(f"unknown dtype code {dtype_code}")
    values = np.asarray(values)
    if values.ndim != 2:
        raise ContainerError(f"expected a 2D array, got shape {values.shape}")
    dt, _ = DTYPE_CODES[dtype_code]
    if np.iscomplexobj(values) and dtype_code in (0, 2):
        raise ContainerError("refusing to drop imaginary parts; use a complex dtype code")
    ny, nx = values.shape
    payload = np.ascontiguousarray(values, dtype=dt)
    header = MAGIC + struct.pack("<IIdB", nx, ny, float(dx), dtype_code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_array(path: str | Path) -> tuple[np.ndarray, float, int]:
    """Read a container; returns ``(values (ny, nx), dx, dtype_code)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE or blob[:8] != MAGIC:
        raise MagicError(f"{path}: not a USCTFLD1 container")
    nx, ny, dx, code = struct.unpack("<IIdB", blob[8:HEADER_SIZE])
    if code not in DTYPE_CODES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    dt, width = DTYPE_CODES[code]
    expected = nx * ny * width
    payload = blob[HEADER_SIZE:]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype=dt).reshape(ny, nx)
    return values, dx, code


def write_field(path: str | Path, field: ComplexField | RealField, dtype_code: int | None = None) -> None:
    """Serialize a field. Default dtype preserves precision (2 or 3)."""
    if dtype_code is None:
        dtype_code = 3 if isinstance(field, ComplexField) else 2
    write_array(path, field.as_2d(), field.grid.dx, dtype_code)


def read_field(path: str | Path) -> ComplexField | RealField:
    """Read a field back; complex codes give ComplexField, real codes RealField.

    The grid origin is reconstructed centered (see module docstring).
    """
    values, dx, code = read_array(path)
    ny, nx = values.shape
    grid = make_grid(nx, ny, dx)
    if code in (1, 3):
        return ComplexField.from_2d(grid, values.astype(np.complex128))
    return RealField.from_2d(grid, values.astype(np.float64))
