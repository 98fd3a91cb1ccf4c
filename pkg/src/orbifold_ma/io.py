"""Binary and CSV serialisation of grid fields, and atomic file writes.

Binary layout: a 32-byte little-endian header ``<8sIIII8x`` (magic, n, resolution, group id,
payload kind) followed by row-major float64 values. Hermitian fields store interleaved
real/imaginary parts of their (..., n, n) coefficient arrays.
"""

from __future__ import annotations

import csv
import io as _io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .calculus import HermitianField
from .orbifold import GROUP_IDS, GridField, OrbifoldGrid, build_grid

HEADER = struct.Struct("<8sIIII8x")
FIELD_MAGIC = b"ORBFLD01"
HERMITIAN_MAGIC = b"ORBHRM01"
KIND_SCALAR, KIND_HERMITIAN = 0, 1
_GROUP_NAMES = {v: k for k, v in GROUP_IDS.items()}


class FormatError(ValueError):
    """Malformed or mismatched field file."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory and rename; the directory must exist."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _header(magic: bytes, grid: OrbifoldGrid, kind: int) -> bytes:
    return HEADER.pack(magic, grid.n, grid.resolution, grid.group.group_id, kind)


def field_to_bytes(f: GridField) -> bytes:
    body = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    return _header(FIELD_MAGIC, f.grid, KIND_SCALAR) + body


def hermitian_to_bytes(h: HermitianField) -> bytes:
    c = np.ascontiguousarray(h.coeffs, dtype=complex)
    inter = np.stack([c.real, c.imag], axis=-1).astype("<f8")
    return _header(HERMITIAN_MAGIC, h.grid, KIND_HERMITIAN) + inter.tobytes()


def _parse(data: bytes, magic: bytes, grid: OrbifoldGrid | None):
    if len(data) < HEADER.size:
        raise FormatError("file shorter than the header")
    got, n, res, gid, kind = HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if gid not in _GROUP_NAMES:
        raise FormatError(f"unknown group id {gid}")
    if grid is None:
        grid = build_grid(n, res, _GROUP_NAMES[gid])
    elif (grid.n, grid.resolution, grid.group.group_id) != (n, res, gid):
        raise FormatError("header does not match the supplied grid")
    return grid, np.frombuffer(data, dtype="<f8", offset=HEADER.size)


def field_from_bytes(data: bytes, grid: OrbifoldGrid | None = None) -> GridField:
    grid, body = _parse(data, FIELD_MAGIC, grid)
    if body.size != grid.size:
        raise FormatError(f"payload has {body.size} values, expected {grid.size}")
    return GridField(grid, body.reshape(grid.shape).astype(float))


def hermitian_from_bytes(data: bytes, grid: OrbifoldGrid | None = None) -> HermitianField:
    grid, body = _parse(data, HERMITIAN_MAGIC, grid)
    n = grid.n
    if body.size != 2 * grid.size * n * n:
        raise FormatError("payload size does not match the grid")
    pairs = body.reshape(grid.shape + (n, n, 2))
    return HermitianField(grid, pairs[..., 0] + 1j * pairs[..., 1])


def save_field(path, f: GridField) -> None:
    atomic_write_bytes(path, field_to_bytes(f))


def load_field(path, grid: OrbifoldGrid | None = None) -> GridField:
    return field_from_bytes(Path(path).read_bytes(), grid)


def save_hermitian(path, h: HermitianField) -> None:
    atomic_write_bytes(path, hermitian_to_bytes(h))


def load_hermitian(path, grid: OrbifoldGrid | None = None) -> HermitianField:
    return hermitian_from_bytes(Path(path).read_bytes(), grid)


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def field_to_csv(f: GridField) -> str:
    """One row per grid point: integer indices then the value (repr, so it round-trips)."""
    grid = f.grid
    idx = np.indices(grid.shape).reshape(grid.real_dim, -1).T
    names = [f"{a}{j + 1}" for j in range(grid.n) for a in ("ix", "iy")]
    rows = (list(map(int, i)) + [float(v)] for i, v in zip(idx, f.values.ravel()))
    return csv_text(names + ["value"], rows)


def field_from_csv(text: str, grid: OrbifoldGrid) -> GridField:
    reader = csv.reader(_io.StringIO(text))
    next(reader)
    vals = np.full(grid.shape, np.nan)
    for row in reader:
        vals[tuple(int(x) for x in row[:-1])] = float(row[-1])
    if np.isnan(vals).any():
        raise FormatError("CSV does not cover every grid point")
    return GridField(grid, vals)
