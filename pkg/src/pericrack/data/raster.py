"""Projection of dump frames onto grayscale damage images, plus PGM export."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError, ParameterError
from ..scenario import DumpFrame


def rasterize(frame: DumpFrame, width: int = 64, height: int = 64, disk_radius: float = 0.012) -> np.ndarray:
    """Max-damage image of the frame projected along ``z``.

    The square ``[-R, R]^2`` is split into ``height x width`` bins; row 0 is
    the largest ``y``. Particles outside the square are dropped and empty
    bins stay 0.
    """
    if width < 8 or height < 8:
        raise ParameterError(f"image must be at least 8x8, got {width}x{height}")
    if not disk_radius > 0:
        raise ParameterError("disk_radius must be positive")
    img = np.zeros((height, width))
    if len(frame) == 0:
        return img
    x, y = frame.positions[:, 0], frame.positions[:, 1]
    col = np.floor((x + disk_radius) / (2 * disk_radius) * width).astype(np.int64)
    row = height - 1 - np.floor((y + disk_radius) / (2 * disk_radius) * height).astype(np.int64)
    ok = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    np.maximum.at(img, (row[ok], col[ok]), np.clip(frame.damage[ok], 0.0, 1.0))
    return img


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantise intensities in [0, 1] to uint8 (``round(v * 255)``)."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray, scale: float = 1.0) -> None:
    """Binary P5 greymap; ``scale`` maps that intensity to 255."""
    data = to_bytes(np.asarray(image) / scale)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 greymap as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    data = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8)
    if len(data) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes at offset {pos}, found {len(data)}")
    return data.reshape(h, w).astype(np.float64) / maxval
