"""Stream client: frame parsing, reconnect with exponential backoff."""

from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Union

from ..clock import WallClock
from ..docmodel import DocumentError, parse_document
from .service import (
    DISCONNECT_BANNED,
    DISCONNECT_DUPLICATE,
    DISCONNECT_EXHAUSTED,
    Banned,
    ConnectionDropped,
    StreamService,
)

logger = logging.getLogger(__name__)


class MalformedFrame(DocumentError):
    def __init__(self, payload: bytes, cause: Exception):
        super().__init__(f"malformed frame: {cause}")
        self.payload = payload
        self.cause = cause


class StreamInterrupted(ConnectionError):
    """The transport failed; the listener will reconnect."""


@dataclass
class Backoff:
    """Reconnect delays 1, 2, 4, ... seconds, capped; reset after a stable
    connection."""

    initial_s: float = 1.0
    factor: float = 2.0
    cap_s: float = 320.0
    stable_after_s: float = 60.0
    _next: float = field(default=0.0, init=False)

    def __post_init__(self):
        self._next = self.initial_s

    def next_delay(self) -> float:
        d = self._next
        self._next = min(self.cap_s, self._next * self.factor)
        return d

    def reset(self) -> None:
        self._next = self.initial_s

    def connection_lasted(self, seconds: float) -> None:
        if seconds >= self.stable_after_s:
            self.reset()


@dataclass
class CallbackHandler:
    on_data: Callable[[bytes, Any], None]
    on_error: Callable[[Exception], None] = lambda e: None


_EXHAUSTED = "exhausted"
_SUPERSEDED = "superseded"


def _control(doc) -> Optional[dict]:
    if isinstance(doc, dict) and len(doc) == 1 and isinstance(doc.get("disconnect"), dict):
        return doc["disconnect"]
    return None


class StreamListener:
    """Consumes one credential's stream, reconnecting until it ends.

    ``endpoint`` is an in-process :class:`StreamService` or a ``"host:port"``
    string. The handler gets ``on_data(raw, doc)`` for every well-formed
    frame in arrival order and ``on_error(exc)`` for malformed frames,
    transport failures and bans (:class:`Banned`, distinct from
    :class:`StreamInterrupted`). The listener stops when the corpus is
    exhausted, when another client takes over the credential, after
    ``max_frames`` frames, after ``max_reconnects`` reconnects or when
    :meth:`stop` is called.
    """

    def __init__(self, endpoint: Union[StreamService, str], credential: str, handler,
                 clock=None, backoff: Optional[Backoff] = None,
                 max_frames: Optional[int] = None, max_reconnects: Optional[int] = None,
                 timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.credential = credential
        self.handler = handler
        self.clock = clock or (endpoint.clock if isinstance(endpoint, StreamService) else WallClock())
        self.backoff = backoff or Backoff()
        self.max_frames = max_frames
        self.max_reconnects = max_reconnects
        self.timeout_s = timeout_s
        self.frames = 0
        self.connect_times: list[float] = []
        self.end_reason: Optional[str] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._close_current: Callable[[], None] = lambda: None

    # -- transports ----------------------------------------------------------

    def _open_local(self) -> Iterator[bytes]:
        conn = self.endpoint.connect(self.credential)
        self._close_current = conn.close
        try:
            yield from conn
        finally:
            if not conn.closed:
                conn.close("client")
        if conn.end_reason == "superseded":
            yield b'{"disconnect":{"code":%d}}' % DISCONNECT_DUPLICATE
        elif conn.end_reason == "exhausted":
            yield b'{"disconnect":{"code":%d}}' % DISCONNECT_EXHAUSTED

    def _open_tcp(self) -> Iterator[bytes]:
        host, _, port = self.endpoint.rpartition(":")
        try:
            sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=self.timeout_s)
        except OSError as e:
            raise StreamInterrupted(f"connect failed: {e}") from e
        self._close_current = lambda: sock.shutdown(socket.SHUT_RDWR)
        try:
            f = sock.makefile("rb")
            sock.sendall(json.dumps({"credential": self.credential}).encode() + b"\n")
            while True:
                line = f.readline()
                if not line:
                    raise ConnectionDropped("connection closed by server")
                if not line.endswith(b"\n"):
                    raise ConnectionDropped("connection closed mid-frame")
                yield line[:-1]
        except OSError as e:
            if self._stop.is_set():
                return
            raise StreamInterrupted(str(e)) from e
        finally:
            sock.close()

    def _open(self) -> Iterator[bytes]:
        if isinstance(self.endpoint, StreamService):
            return self._open_local()
        return self._open_tcp()

    # -- main loop -----------------------------------------------------------

    def _error(self, e: Exception) -> None:
        try:
            self.handler.on_error(e)
        except Exception:  # a faulty handler must not kill the stream
            logger.exception("on_error handler raised")

    def _consume(self, frames: Iterator[bytes]) -> Optional[str]:
        """Deliver frames; returns an end reason, or None if told to stop."""
        for raw in frames:
            if self._stop.is_set():
                return None
            try:
                doc = parse_document(raw)
            except DocumentError as e:
                self.frames += 1
                self._error(MalformedFrame(raw, e))
            else:
                ctl = _control(doc)
                if ctl is not None:
                    code = ctl.get("code")
                    if code == DISCONNECT_DUPLICATE:
                        return _SUPERSEDED
                    if code == DISCONNECT_EXHAUSTED:
                        return _EXHAUSTED
                    if code == DISCONNECT_BANNED:
                        raise Banned(float(ctl.get("retry_after", 0.0)))
                    raise StreamInterrupted(f"disconnect {ctl}")
                self.frames += 1
                self.handler.on_data(raw, doc)
            if self.max_frames is not None and self.frames >= self.max_frames:
                return "max_frames"
        raise StreamInterrupted("stream ended without a disconnect notice")

    def run(self) -> "StreamListener":
        reconnects = 0
        while not self._stop.is_set():
            if reconnects and self.max_reconnects is not None and reconnects > self.max_reconnects:
                self.end_reason = "max_reconnects"
                break
            started = self.clock.now()
            self.connect_times.append(started)
            frames = self._open()
            try:
                reason = self._consume(frames)
            except Banned as e:
                self._error(e)
                delay = max(self.backoff.next_delay(), e.retry_after)
            except (StreamInterrupted, ConnectionDropped) as e:
                self._error(e if isinstance(e, StreamInterrupted) else StreamInterrupted(str(e)))
                self.backoff.connection_lasted(self.clock.now() - started)
                delay = self.backoff.next_delay()
            else:
                self.end_reason = reason or "stopped"
                break
            finally:
                frames.close()
            reconnects += 1
            logger.info("reconnecting %s in %.0f s", self.credential, delay)
            if self._sleep(delay):
                self.end_reason = "stopped"
                break
        return self

    def _sleep(self, seconds: float) -> bool:
        """Sleep on the clock; True if stopped meanwhile."""
        if isinstance(self.clock, WallClock):
            return self._stop.wait(seconds)
        self.clock.sleep(seconds)
        return self._stop.is_set()

    def start(self) -> "StreamListener":
        self._thread = threading.Thread(target=self.run, name=f"listen-{self.credential}",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._close_current()
        except OSError:
            pass

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


def listen(endpoint, credential: str, handler, background: bool = False, **kwargs) -> StreamListener:
    """Open the credential's stream and feed ``handler``.

    Blocks until the stream ends unless ``background`` is set, in which
    case the listener runs on a daemon thread and is returned at once.
    """
    lst = StreamListener(endpoint, credential, handler, **kwargs)
    return lst.start() if background else lst.run()
