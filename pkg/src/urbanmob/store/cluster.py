"""In-process sharded cluster of replica sets.

Routing goes through a chunk table (the config-server metadata). Each replica
set has one primary that takes every write and appends it to its oplog;
secondaries copy oplog entries once they are older than their replication
delay, which :meth:`Cluster.advance` drives from an explicit clock. A
delayed member is always hidden: it is never read from and never elected.
"""

from __future__ import annotations

import bisect
import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from sortedcontainers import SortedList

from ..clock import WallClock, now_ms
from ..docmodel import (
    DELETION_KEYS,
    DocKind,
    Document,
    DocumentError,
    canonical_bytes,
    classify,
    coordinates_of,
    shard_key,
    user_id_of,
)
from ..geodesy import GeoPoint
from ..geoquery import Geo2dIndex

logger = logging.getLogger(__name__)

KEY_MIN = -(2**63)
KEY_MAX = 2**63  # exclusive upper bound of the shard key space

STATUS, DELETION = 0, 1  # second half of a storage key

DEFAULT_COLLECTIONS = ("stream", "timeline", "network")
KNOWN_INDEXES = ("tweet_id", "user_id", "geo2d")


class ClusterError(Exception):
    pass


class NoPrimaryAvailable(ClusterError):
    pass


class NoEligibleMember(ClusterError):
    pass


class UnknownCollection(ClusterError, KeyError):
    pass


class Role(enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


class ReadPreference(enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass
class ClusterConfig:
    n_shards: int = 3
    members_per_set: int = 3
    n_config_servers: int = 3
    delayed_member_delay_ms: int = 72 * 3600 * 1000
    chunk_split_threshold_docs: int = 1000
    collections: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {c: KNOWN_INDEXES for c in DEFAULT_COLLECTIONS})
    geo_cell_size_deg: float = 0.02

    def validate(self) -> None:
        if self.n_shards < 1:
            raise ValueError("n_shards must be positive")
        if self.members_per_set < 3:
            raise ValueError("a replica set needs at least three members")
        if self.n_config_servers < 1:
            raise ValueError("n_config_servers must be positive")
        if self.delayed_member_delay_ms < 0:
            raise ValueError("delayed_member_delay_ms must be non-negative")
        if self.chunk_split_threshold_docs < 1:
            raise ValueError("chunk_split_threshold_docs must be positive")
        if not self.collections:
            raise ValueError("at least one collection is required")
        for name, idx in self.collections.items():
            unknown = set(idx) - set(KNOWN_INDEXES)
            if unknown:
                raise ValueError(f"collection {name!r}: unknown indexes {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "n_shards": self.n_shards,
            "members_per_set": self.members_per_set,
            "n_config_servers": self.n_config_servers,
            "delayed_member_delay_ms": self.delayed_member_delay_ms,
            "chunk_split_threshold_docs": self.chunk_split_threshold_docs,
            "collections": {k: list(v) for k, v in self.collections.items()},
            "geo_cell_size_deg": self.geo_cell_size_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        d = dict(d)
        if "collections" in d:
            cols = d["collections"]
            if isinstance(cols, list):
                cols = {c: KNOWN_INDEXES for c in cols}
            d["collections"] = {k: tuple(v) for k, v in cols.items()}
        return cls(**d)


@dataclass
class Chunk:
    min_key: int
    max_key: int  # exclusive
    shard_id: int
    doc_count: int = 0

    def __contains__(self, key: int) -> bool:
        return self.min_key <= key < self.max_key


@dataclass(frozen=True)
class OplogEntry:
    seq: int
    wall_time: int  # ms
    op: str  # "i" insert, "d" delete (chunk migration cleanup)
    collection: str
    key: tuple[int, int]
    payload: Any


class CollectionData:
    """One member's copy of one collection plus its secondary indexes."""

    def __init__(self, indexes: tuple[str, ...], cell_size_deg: float,
                 deletion_keys: tuple[str, ...] = DELETION_KEYS):
        self.deletion_keys = deletion_keys
        self.docs: dict[tuple[int, int], Document] = {}
        self.sizes: dict[tuple[int, int], int] = {}
        self.keys = SortedList()
        self.by_user: dict[int, set] = {} if "user_id" in indexes else None
        self.geo = Geo2dIndex(cell_size_deg) if "geo2d" in indexes else None

    def put(self, key, doc, size: Optional[int] = None) -> None:
        self.docs[key] = doc
        self.sizes[key] = size if size is not None else len(canonical_bytes(doc))
        self.keys.add(key)
        if self.by_user is not None:
            uid = user_id_of(doc, self.deletion_keys)
            if uid is not None:
                self.by_user.setdefault(uid, set()).add(key)
        if self.geo is not None and key[1] == STATUS:
            p = coordinates_of(doc)
            if p is not None:
                self.geo.add(key[0], p)

    def drop(self, key) -> Document:
        doc = self.docs.pop(key)
        del self.sizes[key]
        self.keys.remove(key)
        if self.by_user is not None:
            uid = user_id_of(doc, self.deletion_keys)
            if uid is not None:
                s = self.by_user[uid]
                s.discard(key)
                if not s:
                    del self.by_user[uid]
        if self.geo is not None and key[1] == STATUS:
            self.geo.remove(key[0])
        return doc

    def keys_in(self, lo: int, hi: int) -> list:
        return list(self.keys.irange((lo, -1), (hi, -1), inclusive=(True, False)))

    def count_in(self, lo: int, hi: int) -> int:
        return self.keys.bisect_left((hi, -1)) - self.keys.bisect_left((lo, -1))


class Member:
    def __init__(self, member_id: int, role: Role, hidden: bool, delay_ms: int,
                 collections: dict[str, tuple[str, ...]], cell_size_deg: float,
                 deletion_keys: tuple[str, ...] = DELETION_KEYS):
        self.member_id = member_id
        self.role = role
        self.hidden = hidden
        self.delay_ms = delay_ms
        self.down = False
        self.log: list[OplogEntry] = []
        self.data = {name: CollectionData(idx, cell_size_deg, deletion_keys)
                     for name, idx in collections.items()}
        self.lock = threading.RLock()

    @property
    def applied_seq(self) -> int:
        return self.log[-1].seq if self.log else 0

    @property
    def electable(self) -> bool:
        return not self.down and not self.hidden and self.delay_ms == 0

    def apply(self, e: OplogEntry, size: Optional[int] = None) -> None:
        coll = self.data[e.collection]
        if e.op == "i":
            coll.put(e.key, e.payload, size)
        else:
            coll.drop(e.key)
        self.log.append(e)

    def undo_to(self, n: int) -> list[OplogEntry]:
        """Roll the local log back to its first ``n`` entries."""
        undone = []
        while len(self.log) > n:
            e = self.log.pop()
            coll = self.data[e.collection]
            if e.op == "i":
                coll.drop(e.key)
            else:
                coll.put(e.key, e.payload)
            undone.append(e)
        return undone


class ReplicaSet:
    def __init__(self, shard_id: int, members: list[Member]):
        self.shard_id = shard_id
        self.members = members
        self.next_seq = 1
        self.repl_lock = threading.RLock()  # replication vs. failover

    @property
    def primary(self) -> Optional[Member]:
        for m in self.members:
            if m.role is Role.PRIMARY and not m.down:
                return m
        return None

    def member(self, member_id: int) -> Member:
        for m in self.members:
            if m.member_id == member_id:
                return m
        raise KeyError(member_id)

    def reader(self, pref: ReadPreference) -> Optional[Member]:
        """Member serving reads. Secondary reads fall back to the primary
        when no visible secondary is up; hidden members are never chosen."""
        if pref is ReadPreference.SECONDARY:
            for m in self.members:
                if m.role is Role.SECONDARY and not m.hidden and not m.down:
                    return m
        return self.primary


@dataclass
class InsertAck:
    doc_id: int
    shard_id: int
    inserted: bool  # False means "already present"

    @property
    def already_present(self) -> bool:
        return not self.inserted


@dataclass
class ElectionResult:
    shard_id: int
    old_primary: int
    new_primary: Optional[int]
    lost: list[tuple[str, tuple[int, int]]] = field(default_factory=list)

    @property
    def lost_count(self) -> int:
        return len(self.lost)


@dataclass
class Migration:
    collection: str
    min_key: int
    max_key: int
    from_shard: int
    to_shard: int
    docs: int


def _common_prefix(a: list[OplogEntry], b: list[OplogEntry]) -> int:
    # Sequence numbers are never reused, so equal seq means the same entry.
    n = min(len(a), len(b))
    if n and a[n - 1].seq == b[n - 1].seq:
        return n
    i = 0
    while i < n and a[i].seq == b[i].seq:
        i += 1
    return i


class Cluster:
    """Sharded, replicated document store.

    Documents handed to :meth:`insert` are stored as-is and shared between
    members; callers must not mutate them afterwards.
    """

    def __init__(self, config: Optional[ClusterConfig] = None, clock=None,
                 deletion_keys=DELETION_KEYS):
        self.config = config or ClusterConfig()
        self.config.validate()
        self.clock = clock or WallClock()
        self.deletion_keys = tuple(deletion_keys)
        self.meta_lock = threading.RLock()
        self.config_version = 0
        cfg = self.config
        self.sets: list[ReplicaSet] = []
        for s in range(cfg.n_shards):
            members = []
            for i in range(cfg.members_per_set):
                delayed = cfg.delayed_member_delay_ms > 0 and i == cfg.members_per_set - 1
                members.append(Member(
                    member_id=i,
                    role=Role.PRIMARY if i == 0 else Role.SECONDARY,
                    hidden=delayed,
                    delay_ms=cfg.delayed_member_delay_ms if delayed else 0,
                    collections=cfg.collections,
                    cell_size_deg=cfg.geo_cell_size_deg,
                    deletion_keys=self.deletion_keys,
                ))
            self.sets.append(ReplicaSet(s, members))
        self.chunks: dict[str, list[Chunk]] = {
            name: [Chunk(KEY_MIN, KEY_MAX, 0)] for name in cfg.collections
        }
        self._mins: dict[str, list[int]] = {}
        self._last_wall = 0
        self._ticker: Optional[threading.Thread] = None
        self._stop_ticker = threading.Event()

    # -- metadata / routing ------------------------------------------------

    def _chunks(self, collection: str) -> list[Chunk]:
        try:
            return self.chunks[collection]
        except KeyError:
            raise UnknownCollection(collection) from None

    def _chunk_for(self, collection: str, key: int) -> Chunk:
        chunks = self._chunks(collection)
        mins = self._mins.get(collection)
        if mins is None or len(mins) != len(chunks):
            mins = self._mins[collection] = [c.min_key for c in chunks]
        return chunks[bisect.bisect_right(mins, key) - 1]

    def route(self, key: int, collection: Optional[str] = None) -> int:
        """Shard owning ``key``; defaults to the first configured collection."""
        if collection is None:
            collection = next(iter(self.chunks))
        with self.meta_lock:
            return self._chunk_for(collection, key).shard_id

    def check_chunks(self, collection: str) -> None:
        chunks = self._chunks(collection)
        if chunks[0].min_key != KEY_MIN or chunks[-1].max_key != KEY_MAX:
            raise AssertionError("chunks do not span the key space")
        for a, b in zip(chunks, chunks[1:]):
            if a.max_key != b.min_key or a.min_key >= a.max_key:
                raise AssertionError(f"chunk gap or overlap at {a} / {b}")

    def split_chunk(self, collection: str, at: int) -> bool:
        """Split the chunk containing ``at`` so that ``at`` starts a new chunk."""
        with self.meta_lock:
            chunks = self._chunks(collection)
            c = self._chunk_for(collection, at)
            if at == c.min_key:
                return False
            i = chunks.index(c)
            primary = self.sets[c.shard_id].primary
            left_count = (primary.data[collection].count_in(c.min_key, at)
                          if primary else 0)
            left = Chunk(c.min_key, at, c.shard_id, left_count)
            right = Chunk(at, c.max_key, c.shard_id, c.doc_count - left_count)
            chunks[i:i + 1] = [left, right]
            self._mins.pop(collection, None)
            self.config_version += 1
            return True

    def _maybe_split(self, collection: str, c: Chunk, primary: Member) -> None:
        if c.doc_count <= self.config.chunk_split_threshold_docs:
            return
        keys = primary.data[collection].keys_in(c.min_key, c.max_key)
        if not keys:
            return
        median = keys[len(keys) // 2][0]
        if median == c.min_key:
            later = [k[0] for k in keys if k[0] > median]
            if not later:
                return
            median = later[0]
        self.split_chunk(collection, median)

    # -- writes ------------------------------------------------------------

    def _wall(self) -> int:
        t = max(now_ms(self.clock), self._last_wall)
        self._last_wall = t
        return t

    def _append(self, rs: ReplicaSet, op: str, collection: str, key, payload,
                size: Optional[int] = None) -> OplogEntry:
        e = OplogEntry(rs.next_seq, self._wall(), op, collection, key, payload)
        rs.next_seq += 1
        rs.primary.apply(e, size)
        return e

    def _storage_key(self, doc: Document) -> tuple[int, int]:
        kind = classify(doc, self.deletion_keys)
        if kind is DocKind.UNKNOWN:
            raise DocumentError("only statuses and deletion records can be stored")
        return shard_key(doc, self.deletion_keys), STATUS if kind is DocKind.STATUS else DELETION

    def insert(self, collection: str, doc: Document) -> InsertAck:
        skey = self._storage_key(doc)
        key = skey[0]
        size = len(canonical_bytes(doc))
        with self.meta_lock:
            c = self._chunk_for(collection, key)
            rs = self.sets[c.shard_id]
            primary = rs.primary
            if primary is None:
                raise NoPrimaryAvailable(f"shard {c.shard_id} has no primary")
            with primary.lock:
                if skey in primary.data[collection].docs:
                    return InsertAck(key, c.shard_id, False)
                self._append(rs, "i", collection, skey, doc, size)
            c.doc_count += 1
            self._maybe_split(collection, c, primary)
            return InsertAck(key, c.shard_id, True)

    # -- replication -------------------------------------------------------

    def advance(self, now: Optional[int] = None) -> dict[int, dict[int, int]]:
        """Apply every oplog entry with ``wall_time <= now - delay`` on each
        live secondary. ``now`` is in ms; defaults to the cluster clock.
        Returns ``{shard_id: {member_id: applied_seq}}``."""
        if now is None:
            now = now_ms(self.clock)
        report = {}
        for rs in self.sets:
            with rs.repl_lock:
                self._advance_set(rs, now)
            report[rs.shard_id] = {m.member_id: m.applied_seq for m in rs.members}
        return report

    def _advance_set(self, rs: ReplicaSet, now: int) -> None:
        primary = rs.primary
        if primary is None:
            return
        src = primary.log
        for m in rs.members:
            if m is primary or m.down:
                continue
            horizon = now - m.delay_ms
            with m.lock:
                pos = len(m.log)
                end = len(src)
                while pos < end and src[pos].wall_time <= horizon:
                    e = src[pos]
                    m.apply(e, primary.data[e.collection].sizes.get(e.key))
                    pos += 1

    def _sync_electable(self, rs: ReplicaSet) -> None:
        primary = rs.primary
        for m in rs.members:
            if m is not primary and m.electable:
                with m.lock:
                    for e in primary.log[len(m.log):]:
                        m.apply(e)

    def start_replication(self, interval_s: float = 0.05) -> None:
        """Background ticker calling :meth:`advance` (service mode)."""
        if self._ticker is not None:
            return
        self._stop_ticker.clear()

        def run():
            while not self._stop_ticker.wait(interval_s):
                self.advance()

        self._ticker = threading.Thread(target=run, name="replication", daemon=True)
        self._ticker.start()

    def stop_replication(self) -> None:
        if self._ticker is None:
            return
        self._stop_ticker.set()
        self._ticker.join()
        self._ticker = None

    # -- failover ----------------------------------------------------------

    def fail_primary(self, shard_id: int) -> ElectionResult:
        """Take the primary down and elect the most caught-up electable
        member (ties to the lowest member id). Writes the winner had not
        applied are rolled back everywhere and reported as lost."""
        rs = self.sets[shard_id]
        with self.meta_lock, rs.repl_lock:
            old = rs.primary
            if old is None:
                raise NoPrimaryAvailable(f"shard {shard_id} has no live primary")
            with old.lock:
                old.down = True
                old.role = Role.SECONDARY
            eligible = [m for m in rs.members if m.electable]
            if not eligible:
                raise NoEligibleMember(f"shard {shard_id}: no electable member")
            new = max(eligible, key=lambda m: (m.applied_seq, -m.member_id))
            n = _common_prefix(old.log, new.log)
            lost = [(e.collection, e.key) for e in old.log[n:]]
            with new.lock:
                new.undo_to(_common_prefix(new.log, old.log))
                new.role = Role.PRIMARY
            for m in rs.members:
                if m is new or m.down:
                    continue
                with m.lock:
                    m.undo_to(_common_prefix(m.log, new.log))
            self._recount(shard_id)
            self.config_version += 1
            logger.info("shard %d: member %d -> %d, %d writes lost",
                        shard_id, old.member_id, new.member_id, len(lost))
            return ElectionResult(shard_id, old.member_id, new.member_id, lost)

    def recover_member(self, shard_id: int, member_id: int) -> int:
        """Bring a downed member back as a secondary, rolling back writes the
        current primary never had. Returns how many entries were undone."""
        rs = self.sets[shard_id]
        with self.meta_lock, rs.repl_lock:
            m = rs.member(member_id)
            primary = rs.primary
            with m.lock:
                undone = m.undo_to(_common_prefix(m.log, primary.log) if primary else len(m.log))
                m.down = False
                m.role = Role.SECONDARY
            return len(undone)

    def _recount(self, shard_id: int) -> None:
        primary = self.sets[shard_id].primary
        for name, chunks in self.chunks.items():
            for c in chunks:
                if c.shard_id == shard_id:
                    c.doc_count = primary.data[name].count_in(c.min_key, c.max_key) if primary else 0

    # -- balancing ---------------------------------------------------------

    def _migrate(self, collection: str, c: Chunk, to_shard: int) -> Migration:
        src = self.sets[c.shard_id]
        dst = self.sets[to_shard]
        if src.primary is None or dst.primary is None:
            raise NoPrimaryAvailable("migration needs both primaries")
        with src.primary.lock, dst.primary.lock:
            keys = src.primary.data[collection].keys_in(c.min_key, c.max_key)
            for k in keys:
                doc = src.primary.data[collection].docs[k]
                self._append(dst, "i", collection, k, doc)
                self._append(src, "d", collection, k, doc)
        # Migrations wait for electable secondaries so failover cannot orphan them.
        self._sync_electable(src)
        self._sync_electable(dst)
        m = Migration(collection, c.min_key, c.max_key, c.shard_id, to_shard, len(keys))
        c.shard_id = to_shard
        self.config_version += 1
        return m

    def rebalance(self) -> list[Migration]:
        """Move whole chunks until per-shard chunk counts differ by at most one."""
        moves = []
        with self.meta_lock:
            for name, chunks in self.chunks.items():
                while True:
                    counts = {s: 0 for s in range(len(self.sets))}
                    for c in chunks:
                        counts[c.shard_id] += 1
                    hi = max(counts, key=lambda s: (counts[s], -s))
                    lo = min(counts, key=lambda s: (counts[s], s))
                    if counts[hi] - counts[lo] <= 1:
                        break
                    victim = next(c for c in chunks if c.shard_id == hi)
                    moves.append(self._migrate(name, victim, lo))
        return moves

    # -- reads -------------------------------------------------------------

    def _reader(self, shard_id: int, pref: ReadPreference) -> Member:
        m = self.sets[shard_id].reader(pref)
        if m is None:
            raise NoPrimaryAvailable(f"shard {shard_id} has no readable member")
        return m

    def _check(self, collection: str) -> None:
        if collection not in self.chunks:
            raise UnknownCollection(collection)

    def get_by_id(self, collection: str, doc_id: int,
                  pref: ReadPreference = ReadPreference.PRIMARY,
                  deletion: bool = False) -> Optional[Document]:
        """The status with tweet id ``doc_id`` or, with ``deletion=True``,
        the deletion record for that id."""
        self._check(collection)
        skey = (doc_id, DELETION if deletion else STATUS)
        with self.meta_lock:
            shard = self._chunk_for(collection, doc_id).shard_id
        m = self._reader(shard, pref)
        with m.lock:
            return m.data[collection].docs.get(skey)

    def _user_keys(self, collection: str, user_id: int, pref: ReadPreference):
        for rs in self.sets:
            m = self._reader(rs.shard_id, pref)
            with m.lock:
                data = m.data[collection]
                if data.by_user is None:
                    raise ClusterError(f"collection {collection!r} has no user_id index")
                for k in data.by_user.get(user_id, ()):
                    yield k, data.docs[k]

    def find_by_user(self, collection: str, user_id: int,
                     pref: ReadPreference = ReadPreference.PRIMARY) -> list[Document]:
        self._check(collection)
        return [d for _, d in sorted(self._user_keys(collection, user_id, pref),
                                     key=lambda kd: kd[0])]

    def max_tweet_id_for_user(self, collection: str, user_id: int,
                              pref: ReadPreference = ReadPreference.PRIMARY) -> Optional[int]:
        """Largest status id stored for the user (deletion records ignored)."""
        self._check(collection)
        ids = [k[0] for k, _ in self._user_keys(collection, user_id, pref) if k[1] == STATUS]
        return max(ids) if ids else None

    def iter_documents(self, collection: str,
                       pref: ReadPreference = ReadPreference.PRIMARY) -> Iterator[Document]:
        """Every document, shard by shard in key order (a snapshot per shard)."""
        self._check(collection)
        for rs in self.sets:
            m = self._reader(rs.shard_id, pref)
            with m.lock:
                docs = [m.data[collection].docs[k] for k in m.data[collection].keys]
            yield from docs

    def count(self, collection: str, pref: ReadPreference = ReadPreference.PRIMARY) -> int:
        self._check(collection)
        total = 0
        for rs in self.sets:
            m = self._reader(rs.shard_id, pref)
            with m.lock:
                total += len(m.data[collection].docs)
        return total

    def geo_view(self, collection: str, pref: ReadPreference = ReadPreference.SECONDARY
                 ) -> "GeoView":
        self._check(collection)
        return GeoView(self, collection, pref)

    def cluster_stats(self) -> dict:
        with self.meta_lock:
            sets = []
            for rs in self.sets:
                primary = rs.primary
                head = primary.applied_seq if primary else max(m.applied_seq for m in rs.members)
                sets.append({
                    "shard_id": rs.shard_id,
                    "primary": primary.member_id if primary else None,
                    "members": [{
                        "member_id": m.member_id,
                        "role": m.role.value,
                        "hidden": m.hidden,
                        "delay_ms": m.delay_ms,
                        "down": m.down,
                        "applied_seq": m.applied_seq,
                        "lag": head - m.applied_seq,
                    } for m in rs.members],
                })
            collections = {}
            for name, chunks in self.chunks.items():
                per_shard = {rs.shard_id: {"chunks": 0, "docs": 0} for rs in self.sets}
                for c in chunks:
                    per_shard[c.shard_id]["chunks"] += 1
                for rs in self.sets:
                    p = rs.primary
                    per_shard[rs.shard_id]["docs"] = len(p.data[name].docs) if p else 0
                collections[name] = {
                    "chunks": len(chunks),
                    "docs": sum(v["docs"] for v in per_shard.values()),
                    "shards": per_shard,
                }
            return {
                "n_config_servers": self.config.n_config_servers,
                "config_version": self.config_version,
                "replica_sets": sets,
                "collections": collections,
            }


class GeoView:
    """Scatter-gather view of one collection's geo indexes for geo_near."""

    def __init__(self, cluster: Cluster, collection: str, pref: ReadPreference):
        self.cluster = cluster
        self.collection = collection
        self.pref = pref

    def _members(self):
        for rs in self.cluster.sets:
            yield self.cluster._reader(rs.shard_id, self.pref)

    def candidates(self, center: GeoPoint, radius_miles: float):
        out = []
        for m in self._members():
            with m.lock:
                geo = m.data[self.collection].geo
                if geo is None:
                    raise ClusterError(f"collection {self.collection!r} has no geo2d index")
                out.extend(geo.candidates(center, radius_miles))
        return out

    def _find(self, doc_id: int):
        with self.cluster.meta_lock:
            shard = self.cluster._chunk_for(self.collection, doc_id).shard_id
        data = self.cluster._reader(shard, self.pref).data[self.collection]
        if (doc_id, STATUS) in data.docs:
            return data
        for m in self._members():
            data = m.data[self.collection]
            if (doc_id, STATUS) in data.docs:
                return data
        raise KeyError(doc_id)

    def size_of(self, doc_id: int) -> int:
        return self._find(doc_id).sizes[(doc_id, STATUS)]

    def fetch(self, doc_id: int) -> Document:
        return self._find(doc_id).docs[(doc_id, STATUS)]

    def point_of(self, doc_id: int) -> GeoPoint:
        return coordinates_of(self.fetch(doc_id))

    def points(self) -> list[GeoPoint]:
        pts = []
        for m in self._members():
            with m.lock:
                pts.extend(p for _, p in m.data[self.collection].geo.items())
        return pts
