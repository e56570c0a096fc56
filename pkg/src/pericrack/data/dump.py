"""Plain-text dump frames.

Block layout::

    STEP <n>
    COUNT <m>
    <id> <x> <y> <z> <damage>      (m lines)

Floats are written with ``repr`` so that parsing restores them bit-exactly.
A dump file is a concatenation of blocks.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..scenario import DumpFrame


def write_dump(frame: DumpFrame) -> str:
    lines = [f"STEP {int(frame.step)}", f"COUNT {len(frame)}"]
    for pid, (x, y, z), d in zip(frame.ids.tolist(), frame.positions.tolist(), frame.damage.tolist()):
        lines.append(f"{pid} {x!r} {y!r} {z!r} {d!r}")
    return "\n".join(lines) + "\n"


def _header(line, key, lineno):
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(f"line {lineno}: expected '{key} <int>', got {line!r}")
    try:
        return int(parts[1])
    except ValueError:
        raise FormatError(f"line {lineno}: bad integer in {line!r}") from None


def _parse_blocks(lines, offset=0):
    frames = []
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        step = _header(lines[pos], "STEP", offset + pos + 1)
        if pos + 1 >= len(lines):
            raise FormatError(f"line {offset + pos + 2}: missing COUNT header")
        count = _header(lines[pos + 1], "COUNT", offset + pos + 2)
        if count < 0:
            raise FormatError(f"line {offset + pos + 2}: negative COUNT")
        body = lines[pos + 2: pos + 2 + count]
        if len(body) < count:
            raise FormatError(f"line {offset + pos + 3 + len(body)}: expected {count} particle lines, "
                              f"found {len(body)}")
        ids = np.empty(count, dtype=np.int64)
        values = np.empty((count, 4))
        for k, line in enumerate(body):
            parts = line.split()
            lineno = offset + pos + 3 + k
            if len(parts) != 5:
                raise FormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            try:
                ids[k] = int(parts[0])
                values[k] = [float(v) for v in parts[1:]]
            except ValueError:
                raise FormatError(f"line {lineno}: unparsable value in {line!r}") from None
            if not 0.0 <= values[k, 3] <= 1.0:
                raise FormatError(f"line {lineno}: damage {values[k, 3]!r} outside [0, 1]")
        try:
            frames.append(DumpFrame(step, ids, values[:, :3], values[:, 3]))
        except ValueError as exc:
            raise FormatError(f"line {offset + pos + 1}: {exc}") from None
        pos += 2 + count
    return frames


def parse_dump(text: str) -> DumpFrame:
    """Parse exactly one block."""
    frames = _parse_blocks(text.splitlines())
    if len(frames) != 1:
        raise FormatError(f"expected one dump block, found {len(frames)}")
    return frames[0]


def parse_dump_file(text: str) -> list[DumpFrame]:
    return _parse_blocks(text.splitlines())


def save_dump(path, frames) -> None:
    Path(path).write_text("".join(write_dump(f) for f in frames))


def load_dump(path) -> list[DumpFrame]:
    return parse_dump_file(Path(path).read_text())
