"""Rate-limit-compliant harvesting loop over the ranked selection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

from ..store import Cluster
from .client import RestClient
from .harvest import fetch_timeline_incremental, harvest_network
from .ratelimit import RateLimitPolicy
from .service import ApiError, NotFound, RateLimited, Unauthorized

logger = logging.getLogger(__name__)


@dataclass
class ScheduleEntry:
    timestamp: float
    method: str
    user_id: int
    outcome: str


@dataclass
class ScheduleLog:
    entries: list[ScheduleEntry] = field(default_factory=list)

    def record(self, t: float, method: str, user_id: int, outcome: str) -> None:
        self.entries.append(ScheduleEntry(t, method, user_id, outcome))

    def __len__(self):
        return len(self.entries)

    def count(self, method: Optional[str] = None, outcome: Optional[str] = None) -> int:
        return sum(1 for e in self.entries
                   if (method is None or e.method == method)
                   and (outcome is None or e.outcome == outcome))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["timestamp", "method", "user_id", "outcome"])
            for e in self.entries:
                w.writerow([f"{e.timestamp:.3f}", e.method, e.user_id, e.outcome])


class ClientBudget:
    """Client-side mirror of the server's fixed windows.

    Requests are withheld within ``guard_s`` of a window boundary, so a
    client clock that is off by less than ``guard_s`` still always agrees
    with the server about which window a request falls into.
    """

    def __init__(self, policy: RateLimitPolicy, guard_s: float = 1.0):
        if not 0 <= guard_s < policy.window_s / 2:
            raise ValueError("guard_s must lie in [0, window_s / 2)")
        self.policy = policy
        self.guard_s = guard_s
        self._used: dict[str, tuple[float, int]] = {}
        self.blocked_until: dict[str, float] = {}

    def _in_guard(self, now: float) -> bool:
        start = self.policy.window_start(now)
        return now - start < self.guard_s or start + self.policy.window_s - now <= self.guard_s

    def available(self, method: str, now: float, n: int = 1) -> bool:
        if now < self.blocked_until.get(method, float("-inf")) or self._in_guard(now):
            return False
        start = self.policy.window_start(now)
        w, used = self._used.get(method, (start, 0))
        if w != start:
            used = 0
        return used + n <= self.policy.quota(method)

    def consume(self, method: str, now: float) -> None:
        start = self.policy.window_start(now)
        w, used = self._used.get(method, (start, 0))
        self._used[method] = (start, (used if w == start else 0) + 1)

    def next_opening(self, now: float) -> float:
        """Earliest time after ``now`` at which a withheld request could go
        out, assuming every unblocked quota of the current window is spent."""
        start = self.policy.window_start(now)
        if now - start < self.guard_s:
            return start + self.guard_s
        t = start + self.policy.window_s + self.guard_s
        return min([t] + [b for b in self.blocked_until.values() if b > now])


@dataclass
class ScheduleConfig:
    timelines: bool = True
    network: bool = True
    guard_s: float = 1.0
    max_passes: Optional[int] = None


def schedule(selected, client: RestClient, cluster: Cluster, duration_s: float,
             config: Optional[ScheduleConfig] = None, log: Optional[ScheduleLog] = None,
             timeline_collection: str = "timeline",
             network_collection: str = "network") -> ScheduleLog:
    """Harvest timelines and networks for ``selected`` users, in rank order.

    Each task (timelines, network) walks the ranking round-robin on its own
    cursor and pauses while its methods have no budget left, continuing the
    other task meanwhile. ``selected`` is a :class:`SelectedUsers` (protected
    users found along the way are marked on it) or a plain ranked list.
    Runs on the client's clock until ``duration_s`` has elapsed.
    """
    cfg = config or ScheduleConfig()
    log = log if log is not None else ScheduleLog()
    policy = client.endpoint.policy if hasattr(client.endpoint, "policy") else RateLimitPolicy()
    budget = ClientBudget(policy, cfg.guard_s)
    clock = client.clock
    prev_hook = client.on_request

    # Charge requests to the window their availability check saw; a second
    # clock reading could fall on the other side of a boundary.
    checked_at = [clock.now()]

    def hook(t, method, uid, outcome):
        budget.consume(method, checked_at[0])
        log.record(t, method, uid, outcome)
        if prev_hook is not None:
            prev_hook(t, method, uid, outcome)

    client.on_request = hook
    mark = getattr(selected, "mark_protected", None)
    protected: set[int] = set()

    def on_protected(uid):
        protected.add(uid)
        if mark is not None:
            mark(uid)

    tasks = []
    if cfg.timelines:
        tasks.append({"methods": ("user_timeline",), "cursor": 0, "passes": 0})
    if cfg.network:
        tasks.append({"methods": ("friends_ids", "followers_ids"), "cursor": 0, "passes": 0})

    end = clock.now() + duration_s
    try:
        while clock.now() < end:
            users = [u for u in selected if u not in protected]
            if not users:
                break
            issued = False
            now = clock.now()
            for task in tasks:
                if issued:
                    now = clock.now()
                if now >= end:
                    break
                checked_at[0] = now
                if cfg.max_passes is not None and task["passes"] >= cfg.max_passes:
                    continue
                if not all(budget.available(m, now, 1) for m in task["methods"]):
                    continue
                if task["cursor"] >= len(users):
                    task["cursor"] = 0
                    task["passes"] += 1
                    if cfg.max_passes is not None and task["passes"] >= cfg.max_passes:
                        continue
                uid = users[task["cursor"]]
                task["cursor"] += 1
                issued = True
                try:
                    if task["methods"][0] == "user_timeline":
                        fetch_timeline_incremental(client, uid, cluster, timeline_collection,
                                                   on_protected=on_protected)
                    else:
                        harvest_network(client, uid, cluster, network_collection)
                except RateLimited as e:
                    logger.warning("unexpected rate limit on %s", e.method)
                    budget.blocked_until[e.method] = e.reset_at
                except Unauthorized:
                    on_protected(uid)
                except NotFound:
                    pass
                except ApiError as e:
                    logger.warning("request for %d failed: %s", uid, e)
            if cfg.max_passes is not None and all(t["passes"] >= cfg.max_passes for t in tasks):
                break
            if not issued:
                wake = min(budget.next_opening(now), end)
                clock.sleep(max(0.0, wake - now))
    finally:
        client.on_request = prev_hook
    return log
