"""Mock REST endpoints: user_timeline, friends_ids and followers_ids."""

from __future__ import annotations

import bisect
import json
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from ..clock import WallClock
from ..docmodel import DocKind, canonical_bytes, classify, iter_ndjson, user_id_of
from .ratelimit import FixedWindowLimiter, RateLimitPolicy

MAX_COUNT = 200
METHODS = ("user_timeline", "friends_ids", "followers_ids")


class ApiError(Exception):
    kind = "ApiError"

    def to_dict(self) -> dict:
        return {"type": self.kind, "message": str(self)}


class RateLimited(ApiError):
    kind = "RateLimited"

    def __init__(self, method: str, reset_at: float):
        super().__init__(f"rate limit exceeded for {method}; resets at {reset_at:.0f}")
        self.method = method
        self.reset_at = reset_at

    def to_dict(self) -> dict:
        return {**super().to_dict(), "method": self.method, "reset_at": self.reset_at}


class Unauthorized(ApiError):
    kind = "Unauthorized"


class NotFound(ApiError):
    kind = "NotFound"


class BadRequest(ApiError):
    kind = "BadRequest"


def error_from_dict(d: dict) -> ApiError:
    kind = d.get("type")
    if kind == "RateLimited":
        return RateLimited(d.get("method", "?"), float(d["reset_at"]))
    cls = {"Unauthorized": Unauthorized, "NotFound": NotFound}.get(kind, BadRequest)
    return cls(d.get("message", ""))


@dataclass
class TimelineSource:
    """Per-user statuses sorted by id, plus the follow graph.

    ``protected`` maps every known user to their protected flag; users
    absent from it are unknown (NotFound).
    """

    protected: dict[int, bool] = field(default_factory=dict)
    friends: dict[int, list[int]] = field(default_factory=dict)
    _ids: dict[int, list[int]] = field(default_factory=dict)
    _docs: dict[int, list[dict]] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.RLock()
        self._followers: Optional[dict[int, list[int]]] = None

    def add(self, doc: dict) -> None:
        if classify(doc) is not DocKind.STATUS:
            return
        uid = user_id_of(doc)
        with self._lock:
            if uid not in self.protected:
                self.protected[uid] = bool(doc.get("user", {}).get("protected", False))
            ids = self._ids.setdefault(uid, [])
            i = bisect.bisect_left(ids, doc["id"])
            if i < len(ids) and ids[i] == doc["id"]:
                return
            ids.insert(i, doc["id"])
            self._docs.setdefault(uid, []).insert(i, doc)

    def timeline(self, user_id: int, count: int = MAX_COUNT,
                 since_id: Optional[int] = None) -> list[dict]:
        """Newest ``count`` statuses with id > since_id, newest first."""
        with self._lock:
            ids = self._ids.get(user_id, [])
            lo = bisect.bisect_right(ids, since_id) if since_id is not None else 0
            hi = len(ids)
            lo = max(lo, hi - count)
            return self._docs.get(user_id, [])[lo:hi][::-1]

    def followers(self, user_id: int) -> list[int]:
        with self._lock:
            if self._followers is None:
                inv: dict[int, set] = {}
                for src, dsts in self.friends.items():
                    for d in dsts:
                        inv.setdefault(d, set()).add(src)
                self._followers = {k: sorted(v) for k, v in inv.items()}
            return self._followers.get(user_id, [])

    def set_friends(self, user_id: int, ids: Iterable[int]) -> None:
        with self._lock:
            self.friends[user_id] = sorted(set(ids))
            self._followers = None

    @classmethod
    def from_docs(cls, docs: Iterable[dict], world=None) -> "TimelineSource":
        src = cls()
        if world is not None:
            src.protected = {u.user_id: u.protected for u in world.users}
            src.friends = {k: sorted(set(v)) for k, v in world.friends.items()}
        for d in docs:
            src.add(d)
        return src

    @classmethod
    def from_ndjson(cls, path, world=None) -> "TimelineSource":
        with open(Path(path), "rb") as f:
            return cls.from_docs(iter_ndjson(f), world)


class RestService:
    """Dispatches API calls; quota is charged before any other check."""

    def __init__(self, source: TimelineSource, policy: Optional[RateLimitPolicy] = None,
                 clock=None):
        self.source = source
        self.policy = policy or RateLimitPolicy()
        self.clock = clock or WallClock()
        self.limiter = FixedWindowLimiter(self.policy)

    def handle(self, credential: str, method: str, params: dict):
        if method not in METHODS:
            raise NotFound(f"no such method {method!r}")
        granted, reset_at = self.limiter.acquire(credential, method, self.clock.now())
        if not granted:
            raise RateLimited(method, reset_at)
        try:
            uid = int(params["user_id"])
        except (KeyError, TypeError, ValueError):
            raise BadRequest("user_id required") from None
        if uid not in self.source.protected:
            raise NotFound(f"user {uid} not found")
        if self.source.protected[uid]:
            raise Unauthorized(f"user {uid} is protected")
        if method == "user_timeline":
            count = int(params.get("count", MAX_COUNT))
            if not 1 <= count <= MAX_COUNT:
                raise BadRequest(f"count must lie in [1, {MAX_COUNT}]")
            since = params.get("since_id")
            return self.source.timeline(uid, count, int(since) if since is not None else None)
        if method == "friends_ids":
            return {"ids": list(self.source.friends.get(uid, []))}
        return {"ids": self.source.followers(uid)}

    def user_timeline(self, credential: str, user_id: int, count: int = MAX_COUNT,
                      since_id: Optional[int] = None) -> list[dict]:
        return self.handle(credential, "user_timeline",
                           {"user_id": user_id, "count": count, "since_id": since_id})


class _RestHandler(socketserver.StreamRequestHandler):
    """One JSON request per line: {"credential", "path", "params"}."""

    def handle(self):
        service: RestService = self.server.service
        for line in self.rfile:
            try:
                req = json.loads(line)
                path = str(req.get("path", "")).strip("/").split("/")[-1]
                body = {"ok": service.handle(str(req.get("credential", "")), path,
                                             req.get("params") or {})}
            except ApiError as e:
                body = {"error": e.to_dict()}
            except ValueError as e:
                body = {"error": BadRequest(str(e)).to_dict()}
            self.wfile.write(canonical_bytes(body) + b"\n")
            self.wfile.flush()


class _ThreadingServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve_rest(service: RestService, host: str = "127.0.0.1", port: int = 0):
    server = _ThreadingServer((host, port), _RestHandler)
    server.service = service
    threading.Thread(target=server.serve_forever, name="rest-server", daemon=True).start()
    return server
