"""Shared text-layout helpers for the file-format readers and writers."""

from __future__ import annotations

import numpy as np

from ..errors import CountMismatch, NonFiniteValue


def require_finite(name, arr):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    return arr


def fmt_block(values, fmt: str, per_line: int = 5) -> str:
    """Format a flat array ``per_line`` values per line."""
    values = np.asarray(values, dtype=float).ravel()
    lines = []
    for start in range(0, values.size, per_line):
        chunk = values[start:start + per_line]
        lines.append("".join(fmt % v for v in chunk))
    return "\n".join(lines)


class FixedFieldReader:
    """Consume whitespace-agnostic Fortran output: fixed-width float fields
    packed ``per_line`` to a line."""

    def __init__(self, lines, width: int = 16, per_line: int = 5):
        self.lines = lines
        self.pos = 0
        self.width = width
        self.per_line = per_line

    def next_line(self) -> str:
        if self.pos >= len(self.lines):
            raise CountMismatch("unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def read_floats(self, count: int, what: str = "array") -> np.ndarray:
        out = np.empty(count)
        k = 0
        while k < count:
            line = self.next_line()
            take = min(self.per_line, count - k)
            for i in range(take):
                field = line[i * self.width:(i + 1) * self.width]
                if not field.strip():
                    raise CountMismatch(
                        f"{what}: expected {count} values, got {k}")
                try:
                    out[k] = float(field)
                except ValueError as exc:
                    raise CountMismatch(f"{what}: bad float field {field!r}") from exc
                k += 1
        return out


def read_value_column(lines, start: int, count: int, what: str):
    """Read ``count`` one-value-per-line floats starting at ``start``."""
    if start + count > len(lines):
        raise CountMismatch(f"{what}: expected {count} values, file too short")
    out = np.empty(count)
    for i in range(count):
        try:
            out[i] = float(lines[start + i].split()[0])
        except (ValueError, IndexError) as exc:
            raise CountMismatch(
                f"{what}: bad value line {lines[start + i]!r}") from exc
    return out
