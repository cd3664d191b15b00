"""Mock sample-stream service.

Each credential sees its own independent sample of the corpus. Frames are
reordered inside a bounded window and deletion notices for sampled
statuses may overtake the status they delete. One standing connection per
credential: a new connection closes the previous one. Clients making too
many connection attempts per minute are refused for a ban period.
"""

from __future__ import annotations

import heapq
import json
import logging
import socketserver
import threading
import zlib
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from ..clock import WallClock
from ..docmodel import (
    DocKind,
    DocumentError,
    canonical_bytes,
    classify,
    make_deletion,
    parse_document,
    user_id_of,
)

logger = logging.getLogger(__name__)

# Disconnect codes carried in {"disconnect": {...}} control frames.
DISCONNECT_DUPLICATE = 7  # another connection opened with the same credential
DISCONNECT_EXHAUSTED = 1000  # simulator only: corpus fully delivered
DISCONNECT_BANNED = 420


@dataclass
class StreamConfig:
    sample_rate: float = 0.01
    shuffle_window: int = 16
    delete_probability: float = 0.02
    delete_before_original_probability: float = 0.3
    max_connect_attempts_per_minute: int = 5
    ban_duration_s: int = 300
    emit_rate_per_s: float = 0.0  # 0 = as fast as the reader consumes

    def __post_init__(self):
        for name in ("sample_rate", "delete_probability", "delete_before_original_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")
        if self.max_connect_attempts_per_minute < 1:
            raise ValueError("max_connect_attempts_per_minute must be >= 1")


class Banned(ConnectionError):
    def __init__(self, retry_after: float):
        super().__init__(f"banned for another {retry_after:.0f} s")
        self.retry_after = retry_after


class ConnectionDropped(ConnectionError):
    pass


def credential_seed(seed: int, credential: str) -> list[int]:
    return [seed, zlib.crc32(credential.encode("utf-8"))]


def plan_frames(corpus: Iterable[bytes], config: StreamConfig, seed) -> Iterator[bytes]:
    """Sample, add deletion notices and locally shuffle a corpus.

    The pre-shuffle frame at position ``i`` gets sort key ``i + U * window``
    with ``U`` uniform in [0, 1), so it can only be emitted fewer than
    ``window`` positions away from ``i``. Yields NDJSON lines without the
    trailing newline.
    """
    rng = np.random.default_rng(seed)
    w = config.shuffle_window
    heap: list[tuple[float, int, bytes]] = []
    i = 0

    def push(frame: bytes):
        nonlocal i
        heapq.heappush(heap, (i + rng.random() * w, i, frame))
        i += 1

    for line in corpus:
        line = line.rstrip(b"\n")
        if not line:
            continue
        if rng.random() >= config.sample_rate:
            continue
        frames = [line]
        if config.delete_probability and rng.random() < config.delete_probability:
            try:
                doc = parse_document(line)
            except DocumentError:
                doc = None  # passed through as-is; the client reports it
            uid = user_id_of(doc) if doc is not None else None
            if uid is not None and classify(doc) is DocKind.STATUS:
                ts = doc.get("timestamp_ms")
                deletion = canonical_bytes(make_deletion(
                    doc["id"], uid, int(ts) + 1 if str(ts).isdigit() else None))
                if rng.random() < config.delete_before_original_probability:
                    frames.insert(0, deletion)
                else:
                    frames.append(deletion)
        for f in frames:
            push(f)
            while heap and heap[0][0] < i:
                yield heapq.heappop(heap)[2]
    while heap:
        yield heapq.heappop(heap)[2]


class StreamConnection:
    """One open stream; iterate it for frames (bytes, no newline)."""

    def __init__(self, service: "StreamService", credential: str, conn_id: int):
        self.service = service
        self.credential = credential
        self.conn_id = conn_id
        self.closed = False
        self.end_reason: Optional[str] = None  # "superseded" | "exhausted" | "dropped" | "client"
        self.delivered = 0

    def close(self, reason: str = "client") -> None:
        if not self.closed:
            self.closed = True
            self.end_reason = reason
            self.service._release(self)

    def __iter__(self) -> Iterator[bytes]:
        svc = self.service
        st = svc._state(self.credential)
        while not self.closed:
            with st.lock:
                if self.closed:
                    break
                if st.drop_after is not None and self.delivered >= st.drop_after:
                    st.drop_after = None
                    self.close("dropped")
                    raise ConnectionDropped("stream dropped by server")
                frame = next(st.frames, None)
                if frame is None:
                    self.close("exhausted")
                    break
                self.delivered += 1
                st.delivered += 1
            yield frame
            if svc.config.emit_rate_per_s > 0:
                svc.clock.sleep(1.0 / svc.config.emit_rate_per_s)


class _CredentialState:
    def __init__(self, frames: Iterator[bytes]):
        self.frames = frames
        self.lock = threading.RLock()
        self.current: Optional[StreamConnection] = None
        self.delivered = 0
        self.drop_after: Optional[int] = None


class StreamService:
    """In-process sample-stream endpoint.

    ``corpus`` is a path to an NDJSON file or a sequence of NDJSON lines /
    documents. Each credential's frame sequence is fixed by ``seed`` and the
    credential, and a reconnecting client resumes where it left off.
    """

    def __init__(self, corpus: Union[str, Path, Sequence], config: Optional[StreamConfig] = None,
                 seed: int = 0, clock=None):
        self.corpus = corpus
        self.config = config or StreamConfig()
        self.seed = seed
        self.clock = clock or WallClock()
        self._lock = threading.RLock()
        self._states: dict[str, _CredentialState] = {}
        self._attempts: dict[str, deque] = {}
        self._banned_until: dict[str, float] = {}
        self._next_conn = 1
        self.max_open_per_credential = 0
        self.refused = 0

    def _lines(self) -> Iterator[bytes]:
        if isinstance(self.corpus, (str, Path)):
            with open(self.corpus, "rb") as f:
                yield from f
        else:
            for item in self.corpus:
                if isinstance(item, (bytes, bytearray)):
                    yield bytes(item)
                elif isinstance(item, str):
                    yield item.encode("utf-8")
                else:
                    yield canonical_bytes(item)

    def _state(self, credential: str) -> _CredentialState:
        with self._lock:
            st = self._states.get(credential)
            if st is None:
                st = _CredentialState(plan_frames(self._lines(), self.config,
                                                  credential_seed(self.seed, credential)))
                self._states[credential] = st
            return st

    def connect(self, credential: str, address: Optional[str] = None) -> StreamConnection:
        """Open the credential's stream, closing any connection it already has.

        Raises :class:`Banned` when ``address`` (defaults to the credential)
        has exceeded the connection-attempt limit.
        """
        addr = address or credential
        now = self.clock.now()
        with self._lock:
            until = self._banned_until.get(addr, 0.0)
            if now < until:
                self.refused += 1
                raise Banned(until - now)
            q = self._attempts.setdefault(addr, deque())
            q.append(now)
            while q and q[0] <= now - 60.0:
                q.popleft()
            if len(q) > self.config.max_connect_attempts_per_minute:
                self._banned_until[addr] = now + self.config.ban_duration_s
                q.clear()
                self.refused += 1
                logger.warning("banning %s for %d s", addr, self.config.ban_duration_s)
                raise Banned(float(self.config.ban_duration_s))
            st = self._state(credential)
            with st.lock:
                if st.current is not None:
                    st.current.close("superseded")
                conn = StreamConnection(self, credential, self._next_conn)
                self._next_conn += 1
                st.current = conn
                self.max_open_per_credential = max(self.max_open_per_credential,
                                                   self.open_connections(credential))
            return conn

    def _release(self, conn: StreamConnection) -> None:
        st = self._states.get(conn.credential)
        if st is not None and st.current is conn:
            st.current = None

    def open_connections(self, credential: str) -> int:
        st = self._states.get(credential)
        return int(st is not None and st.current is not None and not st.current.closed)

    def drop_after(self, credential: str, n_frames: int) -> None:
        """Fault injection: the credential's next connection fails after
        delivering ``n_frames`` more frames."""
        st = self._state(credential)
        with st.lock:
            base = st.current.delivered if st.current is not None else 0
            st.drop_after = base + n_frames

    def delivered(self, credential: str) -> int:
        st = self._states.get(credential)
        return st.delivered if st else 0


def control_frame(code: int, reason: str, **extra) -> bytes:
    return canonical_bytes({"disconnect": {"code": code, "reason": reason, **extra}})


class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: StreamService = self.server.service
        try:
            hello = json.loads(self.rfile.readline() or b"{}")
            credential = str(hello["credential"])
        except (ValueError, KeyError):
            return
        try:
            conn = service.connect(credential, address=self.client_address[0])
        except Banned as e:
            self.wfile.write(control_frame(DISCONNECT_BANNED, "banned",
                                           retry_after=round(e.retry_after, 3)) + b"\n")
            return
        try:
            for frame in conn:
                self.wfile.write(frame + b"\n")
                self.wfile.flush()
        except ConnectionDropped:
            return  # abrupt close, no control frame
        except OSError:
            conn.close("client")
            return
        if conn.end_reason == "superseded":
            msg = control_frame(DISCONNECT_DUPLICATE, "duplicate stream")
        elif conn.end_reason == "exhausted":
            msg = control_frame(DISCONNECT_EXHAUSTED, "end of corpus")
        else:
            return
        try:
            self.wfile.write(msg + b"\n")
        except OSError:
            pass


class _ThreadingServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve(service: StreamService, host: str = "127.0.0.1", port: int = 0):
    """Expose a :class:`StreamService` over TCP as LF-delimited frames.

    The client sends one line ``{"credential": "..."}`` and then reads.
    Returns the started server; ``server.server_address`` has the port.
    """
    server = _ThreadingServer((host, port), _StreamHandler)
    server.service = service
    t = threading.Thread(target=server.serve_forever, name="stream-server", daemon=True)
    t.start()
    return server
