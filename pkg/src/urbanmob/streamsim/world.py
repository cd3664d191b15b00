"""Deterministic synthetic world: users with home/work places and a corpus
of Twitter-1.1-shaped status documents generated from them."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..docmodel import canonical_bytes, format_created_at
from ..geodesy import (
    GeoPoint,
    Region,
    miles_to_lat_degrees,
    region_from_config,
    region_to_config,
)

DEFAULT_METROS = {
    "london": {"sw": [51.28, -0.51], "ne": [51.69, 0.33]},
    "barcelona": {"sw": [41.32, 2.05], "ne": [41.47, 2.23]},
}
METRO_LABELS = {"london": "London, England", "barcelona": "Barcelona, Spain"}

# Twitter ids in mid-2013 were around 3.4e17.
FIRST_TWEET_ID = 340_000_000_000_000_000
START_MS = 1_370_044_800_000  # 2013-06-01T00:00:00Z

SOURCES = (
    '<a href="http://twitter.com/download/iphone" rel="nofollow">Twitter for iPhone</a>',
    '<a href="http://twitter.com/download/android" rel="nofollow">Twitter for Android</a>',
    "web",
    '<a href="http://foursquare.com" rel="nofollow">foursquare</a>',
    '<a href="http://instagram.com" rel="nofollow">Instagram</a>',
)
WORDS = ("morning", "train", "coffee", "rain", "match", "tube", "metro", "lunch", "home",
         "work", "park", "beach", "late", "again", "today", "tonight", "city", "street")


@dataclass
class SimUser:
    user_id: int
    screen_name: str
    home: GeoPoint
    work: GeoPoint
    activity_weight: float
    protected: bool = False
    always_same_location: bool = False
    metro: Optional[str] = None


@dataclass
class SyntheticWorld:
    seed: int
    users: list[SimUser]
    metro_regions: dict[str, Region]
    geolocated_fraction: float = 0.12
    friends: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.geolocated_fraction <= 1.0:
            raise ValueError("geolocated_fraction must lie in [0, 1]")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError("user ids must be unique")
        self._by_id = {u.user_id: u for u in self.users}

    def user(self, user_id: int) -> Optional[SimUser]:
        return self._by_id.get(user_id)

    def followers(self, user_id: int) -> list[int]:
        if not hasattr(self, "_followers"):
            inv: dict[int, list[int]] = {}
            for src, dsts in self.friends.items():
                for d in dsts:
                    inv.setdefault(d, []).append(src)
            self._followers = {k: sorted(v) for k, v in inv.items()}
        return self._followers.get(user_id, [])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "geolocated_fraction": self.geolocated_fraction,
            "metro_regions": {k: region_to_config(r) for k, r in self.metro_regions.items()},
            "users": [{
                "user_id": u.user_id, "screen_name": u.screen_name,
                "home": [u.home.lat, u.home.lon], "work": [u.work.lat, u.work.lon],
                "activity_weight": u.activity_weight, "protected": u.protected,
                "always_same_location": u.always_same_location, "metro": u.metro,
            } for u in self.users],
            "friends": {str(k): v for k, v in self.friends.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorld":
        users = [SimUser(u["user_id"], u["screen_name"], GeoPoint(*u["home"]),
                         GeoPoint(*u["work"]), u["activity_weight"], u["protected"],
                         u["always_same_location"], u["metro"]) for u in d["users"]]
        return cls(d["seed"], users,
                   {k: region_from_config(r) for k, r in d["metro_regions"].items()},
                   d["geolocated_fraction"], {int(k): v for k, v in d["friends"].items()})


def _clip_point(lat: float, lon: float) -> GeoPoint:
    lat = min(90.0, max(-90.0, lat))
    lon = ((lon + 180.0) % 360.0) - 180.0
    if lon == -180.0:
        lon = 180.0
    return GeoPoint(round(float(lat), 6), round(float(lon), 6))


def _offset(p: GeoPoint, miles_north: float, miles_east: float) -> GeoPoint:
    dlat = miles_to_lat_degrees(miles_north)
    dlon = miles_to_lat_degrees(miles_east) / max(1e-9, math.cos(math.radians(p.lat)))
    return _clip_point(p.lat + dlat, p.lon + dlon)


def _uniform_in(rng, region: Region) -> GeoPoint:
    sw, ne = region.bounds()
    while True:
        p = _clip_point(rng.uniform(sw.lat, ne.lat), rng.uniform(sw.lon, ne.lon))
        if region.contains(p):
            return p


def generate_world(seed: int, n_users: int = 2000, metro_regions: Optional[dict] = None,
                   metro_fraction: float = 0.6, bot_fraction: float = 0.05,
                   protected_fraction: float = 0.05, geolocated_fraction: float = 0.12,
                   mean_friends: float = 15.0) -> SyntheticWorld:
    """Users split between the metro regions and the rest of the globe.

    Movers tweet from home or from a work place 1-8 miles away; bots
    (``always_same_location``) always report one fixed coordinate.
    """
    rng = np.random.default_rng(seed)
    metros = {k: v if hasattr(v, "bounds") else region_from_config(v)
              for k, v in (metro_regions or DEFAULT_METROS).items()}
    names = sorted(metros)
    ids = set()
    while len(ids) < n_users:
        ids.update(int(x) for x in rng.integers(1_000, 2**40, n_users - len(ids)))
    ids = sorted(ids)
    rng.shuffle(ids)
    users = []
    for i, uid in enumerate(ids):
        bot = bool(rng.random() < bot_fraction)
        if names and rng.random() < metro_fraction:
            metro = names[int(rng.integers(len(names)))]
            home = _uniform_in(rng, metros[metro])
        else:
            metro = None
            home = _clip_point(rng.uniform(-55, 65), rng.uniform(-179.9, 179.9))
        if bot:
            work = home
        else:
            dist = rng.uniform(1.0, 8.0)
            ang = rng.uniform(0, 2 * math.pi)
            work = _offset(home, dist * math.sin(ang), dist * math.cos(ang))
            if metro is not None and not metros[metro].contains(work):
                work = _uniform_in(rng, metros[metro])
        weight = float(rng.lognormal(0.0, 1.0)) * (3.0 if bot else 1.0)
        users.append(SimUser(
            user_id=uid,
            screen_name=f"user{i}",
            home=home,
            work=work,
            activity_weight=round(weight, 6),
            protected=bool(rng.random() < protected_fraction),
            always_same_location=bot,
            metro=metro,
        ))
    friends = {}
    for u in users:
        k = min(len(users) - 1, int(rng.poisson(mean_friends)))
        picks = rng.choice(len(users), size=k + 1, replace=False) if k else []
        friends[u.user_id] = sorted({users[j].user_id for j in picks if users[j] is not u})[:k]
    return SyntheticWorld(seed, users, metros, geolocated_fraction, friends)


def _place(metro: Optional[str], region: Optional[Region]) -> Optional[dict]:
    if metro is None:
        return None
    sw, ne = region.bounds()
    ring = [[sw.lon, sw.lat], [ne.lon, sw.lat], [ne.lon, ne.lat], [sw.lon, ne.lat]]
    return {
        "id": f"{zlib.crc32(metro.encode()):08x}",
        "full_name": METRO_LABELS.get(metro, metro.title()),
        "place_type": "city",
        "bounding_box": {"type": "Polygon", "coordinates": [ring]},
    }


def iter_statuses(world: SyntheticWorld, n_events: int, start_ms: int = START_MS,
                  events_per_s: float = 50.0, first_id: int = FIRST_TWEET_ID) -> Iterator[dict]:
    """Status documents with strictly increasing ids and timestamps.

    Exactly ``round(geolocated_fraction * n_events)`` of them carry
    coordinates. Users are drawn in proportion to ``activity_weight``.
    """
    if n_events <= 0:
        return
    rng = np.random.default_rng([world.seed, 1])
    users = world.users
    w = np.array([u.activity_weight for u in users], dtype=float)
    who = rng.choice(len(users), size=n_events, p=w / w.sum())
    ids = first_id + np.cumsum(rng.integers(1, 4096, n_events))
    ts = start_ms + np.cumsum(1 + rng.integers(0, int(2000 / events_per_s) + 1, n_events))
    n_geo = int(round(world.geolocated_fraction * n_events))
    geo = np.zeros(n_events, dtype=bool)
    geo[rng.choice(n_events, size=n_geo, replace=False)] = True
    at_work = rng.random(n_events) < 0.5
    jitter = rng.normal(0.0, 0.15, (n_events, 2))
    n_tags = rng.choice([0, 0, 0, 1, 1, 2, 3], size=n_events)
    tag_ids = rng.zipf(1.6, size=(n_events, 3)) % 3000
    has_url = rng.random(n_events) < 0.2
    url_ids = rng.zipf(1.3, size=n_events) % 20000
    is_rt = rng.random(n_events) < 0.08
    is_reply = rng.random(n_events) < 0.1
    words = rng.integers(0, len(WORDS), (n_events, 5))
    src = rng.integers(0, len(SOURCES), n_events)
    rt_count = rng.poisson(0.5, n_events)
    recent: list[dict] = []
    for i in range(n_events):
        u = users[int(who[i])]
        tid = int(ids[i])
        ms = int(ts[i])
        tags = [f"tag{int(t)}" for t in tag_ids[i, : n_tags[i]]]
        text = " ".join(WORDS[int(k)] for k in words[i]) + "".join(f" #{t}" for t in tags)
        doc = {
            "id": tid,
            "id_str": str(tid),
            "created_at": format_created_at(ms),
            "timestamp_ms": str(ms),
            "text": text,
            "source": SOURCES[int(src[i])],
            "truncated": False,
            "retweeted": False,
            "retweet_count": int(rt_count[i]),
            "in_reply_to_status_id": None,
            "in_reply_to_user_id": None,
            "in_reply_to_screen_name": None,
            "contributors": None,
            "user": {"id": u.user_id, "id_str": str(u.user_id), "screen_name": u.screen_name,
                     "protected": u.protected},
            "coordinates": None,
            "place": None,
            "entities": {
                "hashtags": [{"text": t} for t in tags],
                "urls": ([{"url": f"http://t.co/{int(url_ids[i]):x}",
                           "expanded_url": f"http://example.org/{int(url_ids[i])}"}]
                         if has_url[i] else []),
            },
        }
        if geo[i]:
            if u.always_same_location:
                p = u.home
            else:
                base = u.work if at_work[i] else u.home
                p = _offset(base, jitter[i, 0], jitter[i, 1])
            doc["coordinates"] = {"type": "Point", "coordinates": [p.lon, p.lat]}
            doc["place"] = _place(u.metro, world.metro_regions.get(u.metro))
        if recent and is_reply[i]:
            parent = recent[int(rng.integers(len(recent)))]
            doc["in_reply_to_status_id"] = parent["id"]
            doc["in_reply_to_user_id"] = parent["user"]["id"]
            doc["in_reply_to_screen_name"] = parent["user"]["screen_name"]
        if recent and is_rt[i] and not geo[i]:
            parent = recent[int(rng.integers(len(recent)))]
            doc["retweeted_status"] = parent
            doc["text"] = f"RT @{parent['user']['screen_name']}: {parent['text']}"
            doc["entities"] = parent["entities"]
        if "retweeted_status" not in doc:
            recent.append(doc)
            if len(recent) > 500:
                recent.pop(0)
        yield doc


def generate_corpus(world: SyntheticWorld, n_events: int, path, **kwargs) -> Path:
    """Write ``n_events`` statuses to ``path`` as canonical NDJSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        for doc in iter_statuses(world, n_events, **kwargs):
            f.write(canonical_bytes(doc))
            f.write(b"\n")
    tmp.replace(path)
    return path
