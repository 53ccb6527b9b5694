"""Injectable clocks. All hub/edge timing flows through one of these."""

from __future__ import annotations

import time
from datetime import datetime, timezone


class Clock:
    def now(self) -> float:
        """Seconds since the Unix epoch."""
        raise NotImplementedError

    def timestamp(self) -> str:
        """Current time as an RFC 3339 string (UTC)."""
        return rfc3339(self.now())

    def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimulatedClock(Clock):
    """Manually advanced clock for deterministic tests. sleep() advances it."""

    def __init__(self, start: float = 1_700_000_000.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock cannot go backwards")
        self._now += seconds

    def sleep(self, seconds: float) -> None:
        self.advance(max(seconds, 0.0))


def rfc3339(epoch_seconds: float) -> str:
    dt = datetime.fromtimestamp(round(epoch_seconds, 6), tz=timezone.utc)
    return dt.isoformat().replace("+00:00", "Z")
