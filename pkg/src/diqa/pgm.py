"""Binary greyscale PGM (P5) reading and writing."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


class PGMError(ValueError):
    pass


def quantize(image) -> np.ndarray:
    """Map [0, 1] floats to 8-bit values as round(x * 255)."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255 + 0.5).astype(np.uint8)


def encode(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise PGMError(f"expected a 2-d uint8 array, got {pixels.dtype} {pixels.shape}")
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def decode(data: bytes) -> np.ndarray:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise PGMError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields
    if magic != b"P5":
        raise PGMError(f"not a binary PGM: magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise PGMError("malformed PGM header") from None
    if not 0 < maxval < 256:
        raise PGMError(f"only 8-bit PGM is supported, maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise PGMError(f"PGM raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, pixels) -> Path:
    """Write uint8 pixels as-is, or a float image in [0, 1] after quantization."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        pixels = quantize(pixels)
    path = Path(path)
    path.write_bytes(encode(pixels))
    return path


def read_pgm(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
