"""Point-cloud files.

``xyz``: one ``x y z`` line per point, decimal ASCII.
``bin``: ``b"PQPC"``, little-endian u32 count, then count*3 little-endian f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PQPC"
_HEADER = struct.Struct("<4sI")


class PointFileError(ValueError):
    """Malformed point file; the message names the byte offset of the problem."""


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("xyz", "bin"):
        raise ValueError(f"{path}: unknown point-cloud format {fmt!r} (use xyz or bin)")
    return fmt


def encode_bin(points) -> bytes:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must be (N, 3), got {pts.shape}")
    return _HEADER.pack(MAGIC, len(pts)) + pts.astype("<f4").tobytes()


def decode_bin(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) == 0:
        raise PointFileError(f"{source}: empty file at byte 0")
    if len(buf) < _HEADER.size:
        raise PointFileError(f"{source}: truncated header, {len(buf)} of {_HEADER.size} bytes at byte 0")
    magic, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise PointFileError(f"{source}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if count == 0:
        raise PointFileError(f"{source}: point count 0 at byte 4")
    need = _HEADER.size + 12 * count
    if len(buf) < need:
        raise PointFileError(f"{source}: short payload, file ends at byte {len(buf)} "
                             f"but {count} points need {need} bytes")
    if len(buf) > need:
        raise PointFileError(f"{source}: {len(buf) - need} trailing bytes at byte {need}")
    pts = np.frombuffer(buf, dtype="<f4", count=3 * count, offset=_HEADER.size).reshape(count, 3)
    return pts.astype(np.float64)


def encode_xyz(points) -> bytes:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must be (N, 3), got {pts.shape}")
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode("ascii")


def decode_xyz(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf.strip()) == 0:
        raise PointFileError(f"{source}: empty file at byte 0")
    rows, offset = [], 0
    for line in buf.splitlines(keepends=True):
        text = line.strip()
        if text:
            parts = text.split()
            if len(parts) != 3:
                raise PointFileError(f"{source}: expected 3 values, found {len(parts)} at byte {offset}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise PointFileError(f"{source}: non-numeric value at byte {offset}") from None
        offset += len(line)
    pts = np.array(rows, dtype=np.float64)
    if not np.isfinite(pts).all():
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise PointFileError(f"{source}: non-finite coordinate on point {bad}")
    return pts


def read_pc(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = _format_of(path, fmt)
    buf = path.read_bytes()
    return decode_bin(buf, str(path)) if fmt == "bin" else decode_xyz(buf, str(path))


def write_pc(path, points, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _format_of(path, fmt)
    path.write_bytes(encode_bin(points) if fmt == "bin" else encode_xyz(points))


def pc_io(path, mode: str, fmt: str | None = None, points=None):
    """Single entry point: ``mode`` is ``read`` or ``write``."""
    if mode == "read":
        return read_pc(path, fmt)
    if mode == "write":
        if points is None:
            raise ValueError("pc_io: write mode needs points")
        write_pc(path, points, fmt)
        return np.asarray(points, dtype=np.float64)
    raise ValueError(f"pc_io: mode must be 'read' or 'write', got {mode!r}")
