"""Reader/writer for the usct field-container format.

The format is the interchange contract with the wave toolkit; this module
implements it from the published byte layout and shares no code with it.

Byte layout (little-endian):

======  ====  =====================================================
offset  size  content
======  ====  =====================================================
0       8     magic ``b"USCTFLD1"``
8       4     nx, unsigned 32-bit
12      4     ny, unsigned 32-bit
16      8     dx in meters, IEEE-754 binary64
24      1     dtype code
25      --    payload, ``nx*ny`` row-major values (x fastest)
======  ====  =====================================================

dtype codes: 0 = float32, 1 = complex64 (interleaved float32 re/im),
2 = float64, 3 = complex128.

Complex arrays map onto 2-channel real tensors as channel 0 = real
part, channel 1 = imaginary part; every tensor in this package follows
that convention.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"USCTFLD1"
HEADER = struct.Struct("<8sIIdB")

DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<c8"),
    2: np.dtype("<f8"),
    3: np.dtype("<c16"),
}
CODES = {dt: code for code, dt in DTYPES.items()}


class ContainerFormatError(Exception):
    """Raised when a file does not follow the container layout."""


def read_array(path: str | Path) -> tuple[np.ndarray, float]:
    """Return ``(values, dx)`` with values shaped (ny, nx), native dtype."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ContainerFormatError(f"{path}: shorter than the 25-byte header")
    magic, nx, ny, dx, code = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    if code not in DTYPES:
        raise ContainerFormatError(f"{path}: unknown dtype code {code}")
    dt = DTYPES[code]
    expected = HEADER.size + nx * ny * dt.itemsize
    if len(raw) != expected:
        raise ContainerFormatError(
            f"{path}: payload is {len(raw) - HEADER.size} bytes, "
            f"expected {expected - HEADER.size}")
    values = np.frombuffer(raw, dtype=dt, offset=HEADER.size).reshape(ny, nx)
    return values.copy(), dx


def write_array(path: str | Path, values: np.ndarray, dx: float) -> None:
    """Write a 2D array; dtype code is taken from the array's dtype."""
    values = np.ascontiguousarray(values)
    dt = values.dtype.newbyteorder("<")
    if dt not in CODES:
        raise ContainerFormatError(f"no container code for dtype {values.dtype}")
    ny, nx = values.shape
    header = HEADER.pack(MAGIC, nx, ny, float(dx), CODES[dt])
    Path(path).write_bytes(header + values.astype(dt).tobytes())
