"""Virtual time in integer milliseconds."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

# Wall-clock anchor for rendering virtual instants as ISO-8601 strings.
EPOCH = datetime(2026, 3, 22, 0, 0, 0, tzinfo=timezone.utc)


class VirtualClock:
    """Monotone millisecond clock, advanced only by the simulator."""

    __slots__ = ("_now",)

    def __init__(self, start: int = 0) -> None:
        if start < 0:
            raise ValueError("clock cannot start before 0")
        self._now = int(start)

    @property
    def now(self) -> int:
        return self._now

    def advance_to(self, t: int) -> None:
        if t < self._now:
            raise ValueError(f"clock is monotone: {t} < {self._now}")
        self._now = int(t)

    def sleep(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("negative sleep")
        self._now += int(ms)

    def __repr__(self) -> str:
        return f"VirtualClock(now={self._now})"


def iso_timestamp(t_ms: int) -> str:
    """Render a virtual instant like ``2026-03-22T17:44:06Z``."""
    return (EPOCH + timedelta(milliseconds=int(t_ms))).strftime("%Y-%m-%dT%H:%M:%SZ")
