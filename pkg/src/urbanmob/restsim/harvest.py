"""Incremental timeline fetches and friends/followers snapshots."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

from ..clock import now_ms
from ..store import Cluster
from .client import RestClient
from .service import MAX_COUNT, Unauthorized

logger = logging.getLogger(__name__)

SNAPSHOT_USER_BITS = 20


@dataclass
class FetchReport:
    user_id: int
    since_id: Optional[int] = None
    fetched: int = 0
    inserted: int = 0
    duplicates: int = 0
    gap_possible: bool = False
    protected: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def fetch_timeline_incremental(client: RestClient, user_id: int, cluster: Cluster,
                               collection: str = "timeline",
                               on_protected: Optional[Callable[[int], object]] = None
                               ) -> FetchReport:
    """One ``user_timeline`` call for statuses newer than what is stored.

    A full page (200) means older unseen statuses may have been skipped,
    reported as ``gap_possible``. A protected user triggers
    ``on_protected(user_id)`` (e.g. ``SelectedUsers.mark_protected``).
    RateLimited propagates to the caller.
    """
    since = cluster.max_tweet_id_for_user(collection, user_id)
    rep = FetchReport(user_id, since)
    try:
        statuses = client.user_timeline(user_id, count=MAX_COUNT, since_id=since)
    except Unauthorized:
        rep.protected = True
        if on_protected is not None:
            on_protected(user_id)
        return rep
    rep.fetched = len(statuses)
    rep.gap_possible = rep.fetched == MAX_COUNT
    for doc in statuses:
        if cluster.insert(collection, doc).inserted:
            rep.inserted += 1
        else:
            rep.duplicates += 1
    return rep


@dataclass(frozen=True)
class NetworkSnapshot:
    user_id: int
    friends: tuple
    followers: tuple
    captured_at: int  # ms

    def __post_init__(self):
        if len(set(self.friends)) != len(self.friends) or \
                len(set(self.followers)) != len(self.followers):
            raise ValueError("id lists must be duplicate-free")

    @property
    def snapshot_id(self) -> int:
        # Time-major so that key order is capture order.
        return (self.captured_at << SNAPSHOT_USER_BITS) | (self.user_id & ((1 << SNAPSHOT_USER_BITS) - 1))

    def to_document(self) -> dict:
        return {"id": self.snapshot_id, "user": {"id": self.user_id},
                "captured_at": self.captured_at,
                "friends": list(self.friends), "followers": list(self.followers)}

    @classmethod
    def from_document(cls, doc: dict) -> "NetworkSnapshot":
        return cls(doc["user"]["id"], tuple(doc["friends"]), tuple(doc["followers"]),
                   doc["captured_at"])


def _dedup(ids) -> tuple:
    return tuple(dict.fromkeys(int(i) for i in ids))


def harvest_network(client: RestClient, user_id: int, cluster: Cluster,
                    collection: str = "network") -> NetworkSnapshot:
    """Fetch both id lists and store a new snapshot next to earlier ones.

    ``captured_at`` is bumped past the user's latest stored snapshot so it
    strictly increases per user. Unauthorized and RateLimited propagate and
    store nothing.
    """
    friends = client.friends_ids(user_id)
    followers = client.followers_ids(user_id)
    captured = now_ms(client.clock)
    latest = cluster.max_tweet_id_for_user(collection, user_id)
    if latest is not None:
        captured = max(captured, (latest >> SNAPSHOT_USER_BITS) + 1)
    while True:
        snap = NetworkSnapshot(user_id, _dedup(friends), _dedup(followers), captured)
        if cluster.insert(collection, snap.to_document()).inserted:
            return snap
        captured += 1  # id collision with another user's snapshot in the same ms


def network_history(cluster: Cluster, user_id: int,
                    collection: str = "network") -> list[NetworkSnapshot]:
    snaps = [NetworkSnapshot.from_document(d) for d in cluster.find_by_user(collection, user_id)]
    return sorted(snaps, key=lambda s: s.captured_at)
