"""REST client over an in-process service or the line-JSON TCP framing."""

from __future__ import annotations

import json
import socket
import threading
from typing import Callable, Optional, Union

from ..clock import WallClock
from ..docmodel import parse_document
from .service import MAX_COUNT, ApiError, RestService, error_from_dict

RequestHook = Callable[[float, str, int, str], None]


class RestClient:
    """Calls the three API methods with one credential.

    ``on_request(t, method, user_id, outcome)`` is invoked after every
    request; ``outcome`` is ``"ok"`` or the error type name.
    """

    def __init__(self, endpoint: Union[RestService, str], credential: str, clock=None,
                 on_request: Optional[RequestHook] = None, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.credential = credential
        if clock is None:
            clock = endpoint.clock if isinstance(endpoint, RestService) else WallClock()
        self.clock = clock
        self.on_request = on_request
        self.timeout_s = timeout_s
        self._sock = None
        self._file = None
        self._lock = threading.Lock()

    def _remote(self, method: str, params: dict):
        with self._lock:
            if self._sock is None:
                host, _, port = self.endpoint.rpartition(":")
                self._sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                                      timeout=self.timeout_s)
                self._file = self._sock.makefile("rb")
            req = {"credential": self.credential, "path": f"/1.1/{method}", "params": params}
            self._sock.sendall(json.dumps(req).encode() + b"\n")
            line = self._file.readline()
        if not line:
            self.close()
            raise ConnectionError("REST server closed the connection")
        resp = parse_document(line)
        if "error" in resp:
            raise error_from_dict(resp["error"])
        return resp["ok"]

    def call(self, method: str, **params):
        t = self.clock.now()
        outcome = "ok"
        try:
            if isinstance(self.endpoint, RestService):
                return self.endpoint.handle(self.credential, method, params)
            return self._remote(method, params)
        except ApiError as e:
            outcome = e.kind
            raise
        finally:
            if self.on_request is not None:
                self.on_request(t, method, int(params.get("user_id", 0)), outcome)

    def user_timeline(self, user_id: int, count: int = MAX_COUNT,
                      since_id: Optional[int] = None) -> list[dict]:
        return self.call("user_timeline", user_id=user_id, count=count, since_id=since_id)

    def friends_ids(self, user_id: int) -> list[int]:
        return self.call("friends_ids", user_id=user_id)["ids"]

    def followers_ids(self, user_id: int) -> list[int]:
        return self.call("followers_ids", user_id=user_id)["ids"]

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                self._sock.close()
                self._sock = self._file = None
