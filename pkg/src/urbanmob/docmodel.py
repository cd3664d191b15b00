"""Tweet documents: parsing, classification, canonical bytes and projections.

Documents are kept as the plain ``dict``/``list`` trees produced by the JSON
decoder so that unknown attributes survive untouched. Two typed views sit on
top of them: :class:`TweetView`, a flat projection of the fields the
relational model cares about, and :class:`NormalizedRecordSet`, the rows that
projection turns into once entities are linked instead of embedded.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Iterator, Optional, Protocol

from .geodesy import GeoPoint

DELETION_KEYS: tuple[str, ...] = ("delete", "deleted")
EMIT_DELETION_KEY = "delete"

INT64_MAX = 2**63 - 1
INT64_MIN = -(2**63)

Document = Any  # dict / list / str / int / float / bool / None tree


class DocumentError(ValueError):
    pass


class MalformedDocument(DocumentError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at byte {offset}")
        self.offset = offset


class MissingField(DocumentError):
    def __init__(self, name: str):
        super().__init__(f"missing or invalid required field {name!r}")
        self.field = name


class DocKind(enum.Enum):
    STATUS = "status"
    DELETION = "deletion"
    UNKNOWN = "unknown"


def _parse_int(s: str) -> int:
    v = int(s)
    if not INT64_MIN <= v <= INT64_MAX:
        raise ValueError(f"integer {s} outside 64-bit range")
    return v


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def parse_document(raw: bytes | str) -> Document:
    if isinstance(raw, (bytes, bytearray, memoryview)):
        try:
            text = bytes(raw).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedDocument("invalid UTF-8", e.start) from e
    else:
        text = raw
    try:
        return json.loads(text, parse_int=_parse_int, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise MalformedDocument(e.msg, len(text[: e.pos].encode("utf-8"))) from e
    except ValueError as e:
        raise MalformedDocument(str(e), 0) from e


def canonical_bytes(doc: Document) -> bytes:
    """Sorted keys, no whitespace, UTF-8. Equal trees give identical bytes."""
    return json.dumps(
        doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def classify(doc: Document, deletion_keys: Iterable[str] = DELETION_KEYS) -> DocKind:
    if not isinstance(doc, dict):
        return DocKind.UNKNOWN
    if any(k in doc for k in deletion_keys):
        return DocKind.DELETION
    if "id" in doc:
        return DocKind.STATUS
    return DocKind.UNKNOWN


def _valid_id(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 < v <= INT64_MAX


def _require_id(v: Any, name: str) -> int:
    if not _valid_id(v):
        raise MissingField(name)
    return v


def _deletion_body(doc: dict, deletion_keys: Iterable[str]) -> tuple[str, dict]:
    for k in deletion_keys:
        if k in doc:
            body = doc[k]
            if not isinstance(body, dict):
                raise MissingField(k)
            return k, body
    raise MissingField("delete")


def deletion_ids(doc: dict, deletion_keys: Iterable[str] = DELETION_KEYS) -> tuple[int, int]:
    """(deleted tweet id, its user id) of a deletion record."""
    key, body = _deletion_body(doc, deletion_keys)
    status = body.get("status")
    if not isinstance(status, dict):
        raise MissingField(f"{key}.status")
    return (_require_id(status.get("id"), f"{key}.status.id"),
            _require_id(status.get("user_id"), f"{key}.status.user_id"))


def shard_key(doc: Document, deletion_keys: Iterable[str] = DELETION_KEYS) -> int:
    kind = classify(doc, deletion_keys)
    if kind is DocKind.STATUS:
        return _require_id(doc["id"], "id")
    if kind is DocKind.DELETION:
        return deletion_ids(doc, deletion_keys)[0]
    raise DocumentError("document is neither a status nor a deletion record")


def user_id_of(doc: Document, deletion_keys: Iterable[str] = DELETION_KEYS) -> Optional[int]:
    kind = classify(doc, deletion_keys)
    if kind is DocKind.DELETION:
        return deletion_ids(doc, deletion_keys)[1]
    if kind is DocKind.STATUS:
        user = doc.get("user")
        if isinstance(user, dict) and _valid_id(user.get("id")):
            return user["id"]
    return None


def coordinates_of(doc: Document) -> Optional[GeoPoint]:
    """GeoJSON-style ``coordinates`` field, which is ordered (lon, lat)."""
    if not isinstance(doc, dict):
        return None
    c = doc.get("coordinates")
    if not isinstance(c, dict):
        return None
    pair = c.get("coordinates")
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        return None
    lon, lat = pair
    if isinstance(lon, bool) or isinstance(lat, bool):
        return None
    if not isinstance(lon, (int, float)) or not isinstance(lat, (int, float)):
        return None
    try:
        return GeoPoint(float(lat), float(lon))
    except ValueError:
        return None


def make_deletion(tweet_id: int, user_id: int, timestamp_ms: Optional[int] = None,
                  key: str = EMIT_DELETION_KEY) -> dict:
    body: dict = {"status": {"id": tweet_id, "id_str": str(tweet_id),
                             "user_id": user_id, "user_id_str": str(user_id)}}
    if timestamp_ms is not None:
        body["timestamp_ms"] = str(timestamp_ms)
    return {key: body}


TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"


def format_created_at(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc).strftime(TWITTER_TIME_FORMAT)


def _timestamp_ms(obj: dict) -> Optional[int]:
    ts = obj.get("timestamp_ms")
    if ts is not None:
        try:
            return int(ts)
        except (TypeError, ValueError):
            pass
    created = obj.get("created_at")
    if isinstance(created, str):
        try:
            dt = datetime.strptime(created, TWITTER_TIME_FORMAT)
        except ValueError:
            return None
        return int(round(dt.timestamp() * 1000))
    return None


def _opt_int(v: Any) -> Optional[int]:
    return v if isinstance(v, int) and not isinstance(v, bool) else None


@dataclass(frozen=True)
class TweetView:
    tweet_id: int
    user_id: int
    coordinates: Optional[GeoPoint] = None
    created_at: Optional[int] = None  # ms since epoch, UTC
    text: str = ""
    source: str = ""
    is_deletion: bool = False
    retweet_parent_id: Optional[int] = None
    in_reply_to_status_id: Optional[int] = None
    in_reply_to_user_id: Optional[int] = None
    in_reply_to_screen_id: Optional[int] = None
    retweeted: bool = False
    truncated: bool = False
    retweet_count: Optional[int] = None
    hashtags: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()
    place_name: Optional[str] = None
    user_protected: bool = False
    contributors: Optional[str] = None
    parent: Optional["TweetView"] = field(default=None, repr=False)


def to_tweet_view(doc: Document, deletion_keys: Iterable[str] = DELETION_KEYS) -> TweetView:
    kind = classify(doc, deletion_keys)
    if kind is DocKind.UNKNOWN:
        raise DocumentError("cannot project a document that is neither status nor deletion")
    if kind is DocKind.DELETION:
        tid, uid = deletion_ids(doc, deletion_keys)
        _, body = _deletion_body(doc, deletion_keys)
        return TweetView(tweet_id=tid, user_id=uid, is_deletion=True,
                         created_at=_timestamp_ms(body) or _timestamp_ms(doc))

    tid = _require_id(doc.get("id"), "id")
    user = doc.get("user")
    if not isinstance(user, dict):
        raise MissingField("user")
    uid = _require_id(user.get("id"), "user.id")

    entities = doc.get("entities") if isinstance(doc.get("entities"), dict) else {}
    hashtags = tuple(h["text"] for h in entities.get("hashtags") or ()
                     if isinstance(h, dict) and isinstance(h.get("text"), str))
    urls = tuple((u.get("expanded_url") or u.get("url")) for u in entities.get("urls") or ()
                 if isinstance(u, dict) and isinstance(u.get("expanded_url") or u.get("url"), str))

    place = doc.get("place")
    place_name = None
    if isinstance(place, dict):
        place_name = place.get("full_name") or place.get("name")

    contributors = doc.get("contributors")
    if contributors is not None and not isinstance(contributors, str):
        contributors = canonical_bytes(contributors).decode("utf-8")

    parent = None
    rt = doc.get("retweeted_status")
    if isinstance(rt, dict):
        parent = to_tweet_view(rt, deletion_keys)

    return TweetView(
        tweet_id=tid,
        user_id=uid,
        coordinates=coordinates_of(doc),
        created_at=_timestamp_ms(doc),
        text=doc.get("text") if isinstance(doc.get("text"), str) else "",
        source=doc.get("source") if isinstance(doc.get("source"), str) else "",
        retweet_parent_id=parent.tweet_id if parent else None,
        in_reply_to_status_id=_opt_int(doc.get("in_reply_to_status_id")),
        in_reply_to_user_id=_opt_int(doc.get("in_reply_to_user_id")),
        in_reply_to_screen_id=_opt_int(doc.get("in_reply_to_screen_id")),
        retweeted=bool(doc.get("retweeted", False)),
        truncated=bool(doc.get("truncated", False)),
        retweet_count=_opt_int(doc.get("retweet_count")),
        hashtags=hashtags,
        urls=urls,
        place_name=place_name if isinstance(place_name, str) else None,
        user_protected=bool(user.get("protected", False)),
        contributors=contributors,
        parent=parent,
    )


# --- normalized (relational) projection ------------------------------------


class Lookup(Protocol):
    def lookup(self, table: str, key: Any) -> Optional[dict]: ...


class DictLookup:
    """Lookup backed by ``{table: {key: row}}``; handy for tests."""

    def __init__(self, tables: Optional[dict] = None):
        self.tables: dict[str, dict] = tables if tables is not None else {}
        self.calls = 0

    def lookup(self, table, key):
        self.calls += 1
        return self.tables.get(table, {}).get(key)

    def save(self, records: "NormalizedRecordSet") -> None:
        for table, key, row in records.new_rows():
            self.tables.setdefault(table, {})[key] = row


@dataclass
class NormalizedRecordSet:
    tweet_row: dict
    user_row: dict
    entities_row: dict
    place_row: Optional[dict] = None
    bounding_box_row: Optional[dict] = None
    hashtag_rows: list[dict] = field(default_factory=list)
    url_rows: list[dict] = field(default_factory=list)
    new: set = field(default_factory=set)  # {(table, key)} rows that must be inserted
    parent: Optional["NormalizedRecordSet"] = None

    def rows(self) -> Iterator[tuple[str, Any, dict]]:
        if self.parent is not None:
            yield from self.parent.rows()
        yield "user", self.user_row["user_id"], self.user_row
        for r in self.hashtag_rows:
            yield "hashtag", r["text"], r
        for r in self.url_rows:
            yield "url", r["url"], r
        if self.place_row is not None:
            yield "place", self.place_row["name"], self.place_row
        if self.bounding_box_row is not None:
            yield "bbox", self.bounding_box_row["bbox_id"], self.bounding_box_row
        yield "entities", self.entities_row["entities_id"], self.entities_row
        yield "tweet", self.tweet_row["twid"], self.tweet_row

    def new_rows(self) -> Iterator[tuple[str, Any, dict]]:
        seen = set()
        for table, key, row in self.rows():
            if (table, key) in self._all_new() and (table, key) not in seen:
                seen.add((table, key))
                yield table, key, row

    def _all_new(self) -> set:
        return self.new | (self.parent._all_new() if self.parent else set())


def bbox_key(p: GeoPoint) -> str:
    return f"{p.lat!r},{p.lon!r}"


def normalize(view: TweetView, existing: Lookup) -> tuple[NormalizedRecordSet, int]:
    """Link a status to existing rows, emitting new rows where none exist.

    Every referenced entity costs one call to ``existing.lookup``; the
    returned count feeds the insertion benchmark. For a non-retweet that is
    ``2 + len(hashtags) + len(urls) + (place) + (coordinates)``.
    """
    if view.is_deletion:
        raise DocumentError("deletion records have no relational projection")
    lookups = 0
    new: set = set()
    emitted: dict = {}

    def link(table: str, key: Any, fresh: dict) -> dict:
        nonlocal lookups
        lookups += 1
        row = existing.lookup(table, key)
        if row is not None:
            return row
        if (table, key) in emitted:
            return emitted[(table, key)]
        new.add((table, key))
        emitted[(table, key)] = fresh
        return fresh

    parent_rs = None
    if view.retweet_parent_id is not None:
        lookups += 1
        if existing.lookup("tweet", view.retweet_parent_id) is None and view.parent is not None:
            parent_rs, n = normalize(view.parent, existing)
            lookups += n

    user_row = link("user", view.user_id, {"user_id": view.user_id, "protected": view.user_protected})
    hashtag_rows = [link("hashtag", h, {"text": h}) for h in view.hashtags]
    url_rows = [link("url", u, {"url": u}) for u in view.urls]
    place_row = None
    if view.place_name is not None:
        place_row = link("place", view.place_name, {"name": view.place_name})
    bbox_row = None
    if view.coordinates is not None:
        k = bbox_key(view.coordinates)
        bbox_row = link("bbox", k, {"bbox_id": k, "lat": view.coordinates.lat,
                                    "lon": view.coordinates.lon})
    entities_row = link("entities", view.tweet_id, {
        "entities_id": view.tweet_id,
        "hashtags": list(view.hashtags),
        "urls": list(view.urls),
    })

    tweet_row = {
        "twid": view.tweet_id,
        "user_id": view.user_id,
        "entities_id": view.tweet_id,
        "place_id": view.place_name,
        "coordinates_id": bbox_row["bbox_id"] if bbox_row else None,
        "parent_id": view.retweet_parent_id,
        "text": view.text,
        "source": view.source,
        "created_at": view.created_at,
        "retweeted": view.retweeted,
        "truncated": view.truncated,
        "retweet_count": view.retweet_count,
        "in_reply_to_status_id": view.in_reply_to_status_id,
        "in_reply_to_user_id": view.in_reply_to_user_id,
        "in_reply_to_screen_id": view.in_reply_to_screen_id,
        "contributors": view.contributors,
        "deleted": False,
    }
    new.add(("tweet", view.tweet_id))
    rs = NormalizedRecordSet(
        tweet_row=tweet_row, user_row=user_row, entities_row=entities_row,
        place_row=place_row, bounding_box_row=bbox_row,
        hashtag_rows=hashtag_rows, url_rows=url_rows, new=new, parent=parent_rs,
    )
    return rs, lookups


def join(records: NormalizedRecordSet, existing: Optional[Lookup] = None) -> TweetView:
    """Rebuild the :class:`TweetView` a record set was produced from."""
    t = records.tweet_row
    parent = None
    if t["parent_id"] is not None:
        if records.parent is not None:
            parent = join(records.parent, existing)
        elif existing is not None:
            parent = join_persisted(existing, t["parent_id"])
    bbox = records.bounding_box_row
    return TweetView(
        tweet_id=t["twid"],
        user_id=records.user_row["user_id"],
        coordinates=GeoPoint(bbox["lat"], bbox["lon"]) if bbox else None,
        created_at=t["created_at"],
        text=t["text"],
        source=t["source"],
        retweet_parent_id=t["parent_id"],
        in_reply_to_status_id=t["in_reply_to_status_id"],
        in_reply_to_user_id=t["in_reply_to_user_id"],
        in_reply_to_screen_id=t["in_reply_to_screen_id"],
        retweeted=t["retweeted"],
        truncated=t["truncated"],
        retweet_count=t["retweet_count"],
        hashtags=tuple(records.entities_row["hashtags"]),
        urls=tuple(records.entities_row["urls"]),
        place_name=records.place_row["name"] if records.place_row else None,
        user_protected=records.user_row["protected"],
        contributors=t["contributors"],
        parent=parent,
    )


def join_persisted(existing: Lookup, twid: int) -> Optional[TweetView]:
    """Rebuild a view from rows already stored behind ``existing``."""
    t = existing.lookup("tweet", twid)
    if t is None:
        return None
    rs = NormalizedRecordSet(
        tweet_row=t,
        user_row=existing.lookup("user", t["user_id"]),
        entities_row=existing.lookup("entities", t["entities_id"]),
        place_row=existing.lookup("place", t["place_id"]) if t["place_id"] is not None else None,
        bounding_box_row=(existing.lookup("bbox", t["coordinates_id"])
                          if t["coordinates_id"] is not None else None),
    )
    return join(rs, existing)


def iter_ndjson(lines: Iterable[bytes | str]) -> Iterator[Document]:
    for line in lines:
        if isinstance(line, bytes):
            line = line.rstrip(b"\n")
        else:
            line = line.rstrip("\n")
        if line:
            yield parse_document(line)


def to_ndjson_line(doc: Document) -> bytes:
    return canonical_bytes(doc) + b"\n"
