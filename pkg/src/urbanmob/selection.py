"""Pick mobile users inside a metro region and rank them by geo activity."""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .geodesy import GeoPoint, Region, haversine_miles, region_from_config, region_to_config
from .geoquery import covering_scan


@dataclass(frozen=True)
class SelectionConfig:
    region: Region
    spacing_miles: float = 1.0
    radius_miles: float = 1.0
    distinct_epsilon_miles: float = 0.0
    min_distinct_locations: int = 2
    collection: str = "stream"

    def __post_init__(self):
        if not (self.spacing_miles > 0 and self.radius_miles > 0):
            raise ValueError("spacing_miles and radius_miles must be positive")
        if self.distinct_epsilon_miles < 0:
            raise ValueError("distinct_epsilon_miles must be >= 0")
        if self.min_distinct_locations < 1:
            raise ValueError("min_distinct_locations must be >= 1")

    def to_dict(self) -> dict:
        return {"region": region_to_config(self.region), "spacing_miles": self.spacing_miles,
                "radius_miles": self.radius_miles,
                "distinct_epsilon_miles": self.distinct_epsilon_miles,
                "min_distinct_locations": self.min_distinct_locations,
                "collection": self.collection}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionConfig":
        d = dict(d)
        d["region"] = region_from_config(d["region"])
        return cls(**d)


@dataclass
class UserMobilityStats:
    user_id: int
    geo_count: int
    distinct_points: frozenset
    is_protected: bool = False
    doc_ids: frozenset = field(default_factory=frozenset)

    @property
    def distinct_locations(self) -> int:
        return len(self.distinct_points)


def cluster_points(points: Iterable[GeoPoint], epsilon_miles: float) -> frozenset:
    """Merge points closer than ``epsilon_miles`` (single linkage).

    Each group is represented by its smallest point. With epsilon 0 only
    identical coordinates merge.
    """
    pts = sorted(set(points))
    if epsilon_miles <= 0 or len(pts) < 2:
        return frozenset(pts)
    parent = list(range(len(pts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if haversine_miles(pts[i], pts[j]) <= epsilon_miles:
                a, b = find(i), find(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    return frozenset(pts[find(i)] for i in range(len(pts)) if find(i) == i)


def build_stats(view, config: SelectionConfig) -> dict[int, UserMobilityStats]:
    """Per-user in-region activity from a covering scan.

    ``view`` is a cluster (its ``config.collection`` geo view is used) or
    anything :func:`covering_scan` accepts.
    """
    if hasattr(view, "geo_view"):
        view = view.geo_view(config.collection)
    raw = covering_scan(view, config.region, config.spacing_miles, config.radius_miles)
    out = {}
    for uid, agg in raw.items():
        protected = any(view.fetch(d).get("user", {}).get("protected") is True
                        for d in agg.doc_ids)
        out[uid] = UserMobilityStats(
            user_id=uid,
            geo_count=agg.geo_count,
            distinct_points=cluster_points(agg.distinct_points, config.distinct_epsilon_miles),
            is_protected=protected,
            doc_ids=frozenset(agg.doc_ids),
        )
    return out


def select_users(stats: dict[int, UserMobilityStats], config: Optional[SelectionConfig] = None,
                 protected: Iterable[int] = ()) -> list[int]:
    """Movers ranked by geo_count descending, then user id ascending."""
    min_distinct = config.min_distinct_locations if config else 2
    excluded = set(protected)
    keep = [s for s in stats.values()
            if s.distinct_locations >= min_distinct and not s.is_protected
            and s.user_id not in excluded]
    keep.sort(key=lambda s: (-s.geo_count, s.user_id))
    return [s.user_id for s in keep]


class SelectedUsers:
    """Ranked selection that remembers protected users across re-ranking."""

    def __init__(self, ranked: Iterable[int] = (), protected: Iterable[int] = (),
                 stats: Optional[dict[int, UserMobilityStats]] = None):
        self.protected = set(protected)
        self.stats = stats or {}
        self._lock = threading.Lock()
        self.ranked = [u for u in ranked if u not in self.protected]

    def __contains__(self, user_id) -> bool:
        return user_id in self.ranked

    def __iter__(self):
        return iter(list(self.ranked))

    def __len__(self):
        return len(self.ranked)

    def mark_protected(self, user_id: int) -> "SelectedUsers":
        with self._lock:
            self.protected.add(user_id)
            if user_id in self.ranked:
                self.ranked.remove(user_id)
        return self

    def rerank(self, stats: dict[int, UserMobilityStats],
               config: Optional[SelectionConfig] = None) -> "SelectedUsers":
        with self._lock:
            self.stats = stats
            self.ranked = select_users(stats, config, self.protected)
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["rank", "user_id", "geo_count", "distinct_locations"])
            for rank, uid in enumerate(self.ranked, 1):
                s = self.stats.get(uid)
                w.writerow([rank, uid, s.geo_count if s else "",
                            s.distinct_locations if s else ""])

    @classmethod
    def from_csv(cls, path, protected: Iterable[int] = ()) -> "SelectedUsers":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        rows.sort(key=lambda r: int(r["rank"]))
        return cls([int(r["user_id"]) for r in rows], protected)


def mark_protected(selected: SelectedUsers, user_id: int) -> SelectedUsers:
    """Drop ``user_id`` from the selection; idempotent."""
    return selected.mark_protected(user_id)
