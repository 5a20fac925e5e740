"""On-disk formats: DDLY binary matrices and PGM atom mosaics.

DDLY layout (all little-endian)::

    bytes 0-3   magic b"DDLY"
    u32         version (1)
    u32 p       rows
    u32 q       columns stored
    u32 K       dictionary size of the experiment
    f64 * p*q   entries, column-major

Datasets store Y (p x q). Dictionary dumps reuse the header with q = K.

PGM mosaics are binary P5, 8-bit. Atoms are reshaped row-major into
``r x r`` tiles when p is a perfect square (otherwise ``p x 1`` strips),
min-max scaled per atom to 0..255 (constant atoms become 128), and laid out
row by row on a grid with ``ceil(sqrt(K))`` columns. A 1-pixel separator of
value 255 surrounds every tile.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DDLY"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
SEPARATOR = 255


def write_ddly(path, M, K: int | None = None) -> None:
    M = np.asarray(M, dtype="<f8")
    p, q = M.shape
    K = q if K is None else K
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, p, q, K))
        fh.write(M.tobytes(order="F"))


def read_ddly(path) -> tuple[np.ndarray, int]:
    """Return ``(matrix, K)`` from a DDLY file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated DDLY header")
    magic, version, p, q, K = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported DDLY version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * p * q:
        raise ValueError(f"{path}: expected {8 * p * q} payload bytes, found {len(body)}")
    M = np.frombuffer(body, dtype="<f8").reshape((p, q), order="F")
    return M.astype(np.float64), K


def tile_shape(p: int) -> tuple[int, int]:
    r = math.isqrt(p)
    return (r, r) if r * r == p else (p, 1)


def mosaic(D) -> np.ndarray:
    """uint8 image of all atoms, laid out as described in the module docstring."""
    D = np.asarray(D, dtype=np.float64)
    p, K = D.shape
    th, tw = tile_shape(p)
    cols = math.ceil(math.sqrt(K))
    rows = math.ceil(K / cols)
    img = np.full((rows * (th + 1) + 1, cols * (tw + 1) + 1), SEPARATOR, dtype=np.uint8)
    for k in range(K):
        atom = D[:, k]
        lo, hi = atom.min(), atom.max()
        if hi > lo:
            scaled = np.rint(255.0 * (atom - lo) / (hi - lo))
        else:
            scaled = np.full(p, 128.0)
        r, c = divmod(k, cols)
        y0, x0 = 1 + r * (th + 1), 1 + c * (tw + 1)
        img[y0:y0 + th, x0:x0 + tw] = scaled.reshape(th, tw).astype(np.uint8)
    return img


def write_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_mosaic(path, D) -> None:
    write_pgm(path, mosaic(D))
