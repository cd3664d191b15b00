"""Cluster snapshot/restore to a directory of NDJSON files.

Layout::

    metadata.json                         chunks, members, sequence counters
    oplog-s{shard}-m{member}.ndjson       each member's applied oplog
    data-s{shard}-m{member}-{coll}.ndjson each member's documents, key order

Every file is written canonically, so snapshot -> restore -> snapshot
reproduces identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from ..docmodel import canonical_bytes, parse_document
from .cluster import Chunk, Cluster, ClusterConfig, OplogEntry, Role

FORMAT_VERSION = 1


def _write_lines(path: Path, items) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        for obj in items:
            f.write(canonical_bytes(obj))
            f.write(b"\n")
    os.replace(tmp, path)


def _read_lines(path: Path):
    with open(path, "rb") as f:
        for line in f:
            line = line.rstrip(b"\n")
            if line:
                yield parse_document(line)


def snapshot(cluster: Cluster, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with cluster.meta_lock:
        meta = {
            "format": FORMAT_VERSION,
            "config": cluster.config.to_dict(),
            "config_version": cluster.config_version,
            "deletion_keys": list(cluster.deletion_keys),
            "last_wall": cluster._last_wall,
            "chunks": {name: [[c.min_key, c.max_key, c.shard_id, c.doc_count] for c in chunks]
                       for name, chunks in cluster.chunks.items()},
            "sets": [],
        }
        for rs in cluster.sets:
            with rs.repl_lock:
                members = []
                for m in rs.members:
                    with m.lock:
                        members.append({"member_id": m.member_id, "role": m.role.value,
                                        "hidden": m.hidden, "delay_ms": m.delay_ms,
                                        "down": m.down})
                        _write_lines(d / f"oplog-s{rs.shard_id}-m{m.member_id}.ndjson", (
                            {"seq": e.seq, "wall_time": e.wall_time, "op": e.op,
                             "collection": e.collection, "key": list(e.key),
                             "payload": e.payload} for e in m.log))
                        for name, data in m.data.items():
                            _write_lines(
                                d / f"data-s{rs.shard_id}-m{m.member_id}-{name}.ndjson",
                                (data.docs[k] for k in data.keys))
                meta["sets"].append({"shard_id": rs.shard_id, "next_seq": rs.next_seq,
                                     "members": members})
    tmp = d / "metadata.json.tmp"
    tmp.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, d / "metadata.json")
    return d


def restore(directory, clock=None) -> Cluster:
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text())
    if meta.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot format {meta.get('format')!r}")
    cluster = Cluster(ClusterConfig.from_dict(meta["config"]), clock=clock,
                      deletion_keys=meta["deletion_keys"])
    cluster.config_version = meta["config_version"]
    cluster._last_wall = meta["last_wall"]
    cluster.chunks = {name: [Chunk(*c) for c in chunks] for name, chunks in meta["chunks"].items()}
    for sm in meta["sets"]:
        rs = cluster.sets[sm["shard_id"]]
        rs.next_seq = sm["next_seq"]
        shared: dict[int, OplogEntry] = {}
        for mm in sm["members"]:
            m = rs.member(mm["member_id"])
            m.role = Role(mm["role"])
            m.hidden = mm["hidden"]
            m.delay_ms = mm["delay_ms"]
            m.down = mm["down"]
            log = []
            for o in _read_lines(d / f"oplog-s{rs.shard_id}-m{m.member_id}.ndjson"):
                e = shared.get(o["seq"])
                if e is None:
                    e = OplogEntry(o["seq"], o["wall_time"], o["op"], o["collection"],
                                   tuple(o["key"]), o["payload"])
                    shared[e.seq] = e
                log.append(e)
            m.log = log
            for name, data in m.data.items():
                path = d / f"data-s{rs.shard_id}-m{m.member_id}-{name}.ndjson"
                for doc in _read_lines(path):
                    data.put(cluster._storage_key(doc), doc)
    return cluster
