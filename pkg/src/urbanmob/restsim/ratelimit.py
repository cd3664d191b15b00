"""Fixed-window, per-(credential, method) request quotas."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

DEFAULT_QUOTAS = {"user_timeline": 180, "friends_ids": 15, "followers_ids": 15}


@dataclass
class RateLimitPolicy:
    window_s: float = 900.0
    quotas: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_QUOTAS))

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")
        for m, q in self.quotas.items():
            if q < 1:
                raise ValueError(f"quota for {m} must be >= 1")

    def window_start(self, t: float) -> float:
        """Epoch-aligned start of the window containing ``t``."""
        return math.floor(t / self.window_s) * self.window_s

    def window_end(self, t: float) -> float:
        return self.window_start(t) + self.window_s

    def quota(self, method: str) -> int:
        try:
            return self.quotas[method]
        except KeyError:
            raise KeyError(f"no quota for method {method!r}") from None

    def to_dict(self) -> dict:
        return {"window_s": self.window_s, "quotas": dict(self.quotas)}

    @classmethod
    def from_dict(cls, d: dict) -> "RateLimitPolicy":
        return cls(d.get("window_s", 900.0), dict(d.get("quotas", DEFAULT_QUOTAS)))


class FixedWindowLimiter:
    """Thread-safe counters; a request consumes one unit or is rejected."""

    def __init__(self, policy: RateLimitPolicy):
        self.policy = policy
        self._lock = threading.Lock()
        self._counts: dict[tuple[str, str], tuple[float, int]] = {}

    def acquire(self, credential: str, method: str, now: float) -> tuple[bool, float]:
        """Returns ``(granted, reset_at)``."""
        quota = self.policy.quota(method)
        start = self.policy.window_start(now)
        reset_at = start + self.policy.window_s
        with self._lock:
            w, n = self._counts.get((credential, method), (start, 0))
            if w != start:
                n = 0
            if n >= quota:
                self._counts[(credential, method)] = (start, n)
                return False, reset_at
            self._counts[(credential, method)] = (start, n + 1)
            return True, reset_at

    def used(self, credential: str, method: str, now: float) -> int:
        start = self.policy.window_start(now)
        with self._lock:
            w, n = self._counts.get((credential, method), (start, 0))
        return n if w == start else 0
