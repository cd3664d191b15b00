"""Insertion targets for the benchmark.

:class:`NormalizedStore` is a single-node relational layout whose tables
and secondary indexes are sorted arrays (the leaf level of a B-tree without
the fan-out), so each insert pays an existence lookup per referenced entity
plus index maintenance that grows with table size.
:class:`DuplicatingStore` writes one flattened row per tweet with embedded
copies of everything and no lookups. :class:`DocumentTarget` inserts the
raw document into the cluster.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Any, Optional

from ..docmodel import (
    NormalizedRecordSet,
    normalize,
    to_tweet_view,
)
from ..store import Cluster

TABLES = ("tweet", "user", "hashtag", "url", "place", "bbox", "entities")


class SortedIndex:
    """Unique keys in a sorted Python list with a parallel value list."""

    __slots__ = ("keys", "values")

    def __init__(self):
        self.keys: list = []
        self.values: list = []

    def __len__(self):
        return len(self.keys)

    def get(self, key) -> Optional[Any]:
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            return self.values[i]
        return None

    def insert(self, key, value) -> bool:
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            return False
        self.keys.insert(i, key)
        self.values.insert(i, value)
        return True


class NormalizedStore:
    def __init__(self):
        self.tables = {t: SortedIndex() for t in TABLES}
        # Secondary / link-table indexes.
        self.tweet_by_user = SortedIndex()
        self.tweet_hashtag = SortedIndex()
        self.hashtag_tweet = SortedIndex()
        self.tweet_url = SortedIndex()
        self.url_tweet = SortedIndex()
        self.lookups = 0

    def lookup(self, table: str, key) -> Optional[dict]:
        self.lookups += 1
        return self.tables[table].get(key)

    def save(self, rs: NormalizedRecordSet) -> None:
        for table, key, row in rs.new_rows():
            self.tables[table].insert(key, row)
            if table == "tweet":
                twid = row["twid"]
                self.tweet_by_user.insert((row["user_id"], twid), None)
                ent = self.tables["entities"].get(row["entities_id"])
                for h in ent["hashtags"]:
                    self.tweet_hashtag.insert((twid, h), None)
                    self.hashtag_tweet.insert((h, twid), None)
                for u in ent["urls"]:
                    self.tweet_url.insert((twid, u), None)
                    self.url_tweet.insert((u, twid), None)

    def insert_document(self, doc: dict) -> bool:
        view = to_tweet_view(doc)
        if self.lookup("tweet", view.tweet_id) is not None:
            return False
        rs, _ = normalize(view, self)
        self.save(rs)
        return True

    def count(self) -> int:
        return len(self.tables["tweet"])


class DuplicatingStore:
    """One wide row per tweet; only the tweet-id primary key is indexed."""

    def __init__(self):
        self.pk = SortedIndex()

    def insert_document(self, doc: dict) -> bool:
        v = to_tweet_view(doc)
        row = {
            "twid": v.tweet_id, "text": v.text, "source": v.source,
            "created_at": v.created_at, "parent_id": v.retweet_parent_id,
            "user": {"user_id": v.user_id, "protected": v.user_protected},
            "hashtags": list(v.hashtags), "urls": list(v.urls), "place": v.place_name,
            "coordinates": [v.coordinates.lat, v.coordinates.lon] if v.coordinates else None,
        }
        return self.pk.insert(v.tweet_id, row)

    def count(self) -> int:
        return len(self.pk)


class DocumentTarget:
    def __init__(self, cluster: Cluster, collection: str = "stream"):
        self.cluster = cluster
        self.collection = collection

    def insert_document(self, doc: dict) -> bool:
        return self.cluster.insert(self.collection, doc).inserted

    def count(self) -> int:
        return self.cluster.count(self.collection)
