"""Versioned binary container for named parameter arrays.

Layout (little-endian)::

    b"PCKP" | u32 version | u32 len + utf-8 arch string | u32 n_arrays
    per array: u32 len + utf-8 name | u8 dtype code | u8 ndim | u32 dims... | raw values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"PCKP"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _str(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<I", len(raw)) + raw


def dumps(arrays: dict, arch: str) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION), _str(arch), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise FormatError(f"unsupported dtype {arr.dtype} for {name!r}")
        out += [_str(name), struct.pack("<BB", _CODES[dt], arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr, dtype=dt).tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError(f"checkpoint truncated at offset {self.pos} (need {n} bytes)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def string(self):
        return self.take(self.u32()).decode()


def loads(raw: bytes) -> tuple[str, dict]:
    """Return ``(arch, arrays)``."""
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint (bad magic at offset 0)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
    arch = r.string()
    arrays = {}
    for _ in range(r.u32()):
        name = r.string()
        code, ndim = struct.unpack("<BB", r.take(2))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} at offset {r.pos - 2}")
        shape = tuple(np.atleast_1d(r.u32(ndim))) if ndim else ()
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape).copy()
    return arch, arrays


def save(path, arrays: dict, arch: str) -> None:
    Path(path).write_bytes(dumps(arrays, arch))


def load(path) -> tuple[str, dict]:
    return loads(Path(path).read_bytes())
