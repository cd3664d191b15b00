"""Injectable clocks.

Every component that reasons about time (replication delay, rate-limit
windows, reconnect backoff) takes a clock instead of calling ``time``
directly, so 72 hours or a 15 minute window can be simulated instantly.
"""

from __future__ import annotations

import threading
import time


class WallClock:
    """Real time, seconds since the epoch."""

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class SimClock:
    """Manually driven clock; ``sleep`` advances time instead of blocking."""

    def __init__(self, start: float = 0.0):
        self._t = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)

    def advance(self, seconds: float) -> float:
        with self._lock:
            self._t += seconds
            return self._t

    def set(self, t: float) -> None:
        with self._lock:
            if t < self._t:
                raise ValueError("SimClock cannot go backwards")
            self._t = float(t)


def now_ms(clock) -> int:
    return int(round(clock.now() * 1000))
