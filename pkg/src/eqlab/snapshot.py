"""EQLB1 binary field snapshots.

Layout (all little-endian)::

    b"EQLB1"                      5 bytes magic
    nx, ny                        uint64
    x0, y0, dx, dy, t             float64
    kind                          1 byte: 0 = real, 1 = complex
    payload                       row-major (i over x, j over y) float64
                                  singletons (real) or (re, im) pairs (complex)
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .fields import ComplexField, Grid2D, RealField

MAGIC = b"EQLB1"
_HEADER = struct.Struct("<5sQQdddddB")
KIND_REAL = 0
KIND_COMPLEX = 1


class SnapshotFormatError(ValueError):
    pass


def encode(f: ComplexField | RealField, t: float = 0.0) -> bytes:
    g = f.grid
    kind = KIND_COMPLEX if isinstance(f, ComplexField) else KIND_REAL
    head = _HEADER.pack(MAGIC, g.nx, g.ny, g.x0, g.y0, g.dx, g.dy, float(t), kind)
    if kind == KIND_COMPLEX:
        payload = np.ascontiguousarray(f.values, dtype="<c16").tobytes()
    else:
        payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    return head + payload


def decode(data: bytes, density: bool = False) -> tuple[ComplexField | RealField, float]:
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("truncated EQLB1 header")
    magic, nx, ny, x0, y0, dx, dy, t, kind = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    grid = Grid2D(int(nx), int(ny), x0, y0, dx, dy)
    body = memoryview(data)[_HEADER.size:]
    if kind == KIND_COMPLEX:
        expected = nx * ny * 16
        dtype = "<c16"
    elif kind == KIND_REAL:
        expected = nx * ny * 8
        dtype = "<f8"
    else:
        raise SnapshotFormatError(f"unknown field kind byte {kind}")
    if len(body) != expected:
        raise SnapshotFormatError(f"payload has {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype=dtype).reshape(nx, ny)
    if kind == KIND_COMPLEX:
        return ComplexField(grid, values), t
    return RealField(grid, values, is_density=density), t


def write_snapshot(path: str | os.PathLike, f: ComplexField | RealField, t: float = 0.0) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "wb") as fh:
        fh.write(encode(f, t))
    os.replace(tmp, path)
    return path


def read_snapshot(path: str | os.PathLike, density: bool = False):
    with open(path, "rb") as fh:
        return decode(fh.read(), density=density)


def read_header(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    magic, nx, ny, x0, y0, dx, dy, t, kind = _HEADER.unpack(head)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    return dict(nx=nx, ny=ny, x0=x0, y0=y0, dx=dx, dy=dy, t=t,
                kind="complex" if kind == KIND_COMPLEX else "real")

