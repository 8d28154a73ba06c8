"""On-disk formats: LSTF tensor container, LSCK checkpoint, LSPC point cloud, PGM.

All integers are little-endian.  LSTF is the one array container used
everywhere (samples, rasters, radar cubes, checkpoint payloads):

    "LSTF" | version u8 = 1 | rank u8 | rank x u32 dims | float32 payload

LSCK wraps a config blob plus named LSTF records:

    "LSCK" | version u8 = 1 | u32 config length | config UTF-8
          | u32 tensor count | per tensor: u16 name length, name, LSTF record

Adam state rides in the same tensor table under the reserved "adam." prefix.
LSPC is "LSPC" | u32 count | count x 3 float32 (x, y, z).
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "MalformedFileError",
    "write_lstf",
    "read_lstf",
    "lstf_bytes",
    "lstf_from_bytes",
    "write_lsck",
    "read_lsck",
    "write_lspc",
    "read_lspc",
    "write_pgm",
]

LSTF_MAGIC = b"LSTF"
LSCK_MAGIC = b"LSCK"
LSPC_MAGIC = b"LSPC"
ADAM_PREFIX = "adam."


class MalformedFileError(ValueError):
    """Raised when an input file fails structural validation."""


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise MalformedFileError(f"truncated file while reading {what}")
    return buf


# -- LSTF ---------------------------------------------------------------------


def lstf_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"unsupported rank {arr.ndim}")
    if arr.size == 0:
        raise ValueError("zero-sized dimensions are not representable")
    head = LSTF_MAGIC + struct.pack("<BB", 1, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.astype("<f4").tobytes()


def lstf_from_bytes(f) -> np.ndarray:
    if isinstance(f, (bytes, bytearray)):
        f = io.BytesIO(f)
    magic = _read_exact(f, 4, "magic")
    if magic != LSTF_MAGIC:
        raise MalformedFileError(f"bad magic {magic!r}, expected LSTF")
    version, rank = struct.unpack("<BB", _read_exact(f, 2, "header"))
    if version != 1:
        raise MalformedFileError(f"unrecognized LSTF version {version}")
    if rank < 1:
        raise MalformedFileError("rank must be at least 1")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
    count = 1
    for d in dims:
        if d < 1:
            raise MalformedFileError("zero-sized dimension")
        count *= d
    payload = _read_exact(f, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def write_lstf(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(lstf_bytes(arr))


def read_lstf(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr = lstf_from_bytes(f)
        if f.read(1):
            raise MalformedFileError("trailing bytes after LSTF payload")
    return arr


# -- LSCK ---------------------------------------------------------------------


def write_lsck(path, config_text: str, tensors: dict[str, np.ndarray]) -> None:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ValueError("tensor names must be unique")
    out = io.BytesIO()
    out.write(LSCK_MAGIC)
    out.write(struct.pack("<B", 1))
    blob = config_text.encode("utf-8")
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    out.write(struct.pack("<I", len(names)))
    for name in names:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(lstf_bytes(tensors[name]))
    Path(path).write_bytes(out.getvalue())


def read_lsck(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != LSCK_MAGIC:
            raise MalformedFileError(f"bad magic {magic!r}, expected LSCK")
        (version,) = struct.unpack("<B", _read_exact(f, 1, "version"))
        if version != 1:
            raise MalformedFileError(f"unrecognized LSCK version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config_text = _read_exact(f, cfg_len, "config blob").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            if name in tensors:
                raise MalformedFileError(f"duplicate tensor name {name!r}")
            tensors[name] = lstf_from_bytes(f)
        if f.read(1):
            raise MalformedFileError("trailing bytes after LSCK payload")
    return config_text, tensors


# -- LSPC ---------------------------------------------------------------------


def write_lspc(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be [N, 3], got {pts.shape}")
    with open(path, "wb") as f:
        f.write(LSPC_MAGIC)
        f.write(struct.pack("<I", pts.shape[0]))
        f.write(pts.astype("<f4").tobytes())


def read_lspc(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != LSPC_MAGIC:
            raise MalformedFileError(f"bad magic {magic!r}, expected LSPC")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
        payload = _read_exact(f, 12 * count, "points")
        if f.read(1):
            raise MalformedFileError("trailing bytes after LSPC payload")
    return np.frombuffer(payload, dtype="<f4").reshape(count, 3).astype(np.float32)


# -- PGM ----------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255), min-max scaled; constant nonzero maps to mid-gray."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM render expects a 2-D array")
    lo, hi = img.min(), img.max()
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    elif hi == 0.0:
        scaled = np.zeros_like(img)
    else:
        scaled = np.full_like(img, 128.0)
    data = scaled.astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())
