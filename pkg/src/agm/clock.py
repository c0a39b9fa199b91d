"""Injectable time sources so the server runs on wall-clock or simulated time."""

from __future__ import annotations

import time

# Simulated runs start at a fixed epoch so reports are reproducible byte for byte.
SIM_EPOCH = 1704067200.0  # 2024-01-01T00:00:00Z


class WallClock:
    """Real time."""

    def now(self) -> float:
        return time.time()


class SimClock:
    """Manually advanced time, for deterministic simulation and tests."""

    def __init__(self, start: float = SIM_EPOCH):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("cannot advance a clock backwards")
        self._now += seconds
        return self._now

    def set_time(self, now: float) -> None:
        if now < self._now:
            raise ValueError("cannot set a clock backwards")
        self._now = now
