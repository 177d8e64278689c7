from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import FormatError

UNITS = {"s": 1, "m": 60, "h": 3600}
_PATTERN = re.compile(r"([0-9]+)([smh])")


@dataclass(frozen=True, order=True)
class Duration:
    """Whole number of seconds, written as ``<int><unit>`` with unit s, m or h."""

    seconds: int = 0

    def __post_init__(self):
        if isinstance(self.seconds, bool) or not isinstance(self.seconds, int):
            raise TypeError(f"Duration seconds must be int, got {type(self.seconds).__name__}")
        if self.seconds < 0:
            raise ValueError(f"Duration must be non-negative, got {self.seconds}")

    def __str__(self) -> str:
        return format_duration(self)


def parse_duration(text: str) -> Duration:
    """Parse ``"20m"`` style literals. The unit is mandatory."""
    if not isinstance(text, str):
        raise FormatError(f"duration must be a string like '20m', got {text!r}")
    match = _PATTERN.fullmatch(text)
    if match is None:
        raise FormatError(f"invalid duration {text!r}; expected <int><s|m|h>")
    return Duration(int(match.group(1)) * UNITS[match.group(2)])


def format_duration(duration: Duration | int) -> str:
    """Most compact exact form: 1200 -> '20m', 90 -> '90s', 7200 -> '2h'."""
    seconds = duration.seconds if isinstance(duration, Duration) else int(duration)
    if seconds == 0:
        return "0s"
    for unit in ("h", "m"):
        if seconds % UNITS[unit] == 0:
            return f"{seconds // UNITS[unit]}{unit}"
    return f"{seconds}s"
