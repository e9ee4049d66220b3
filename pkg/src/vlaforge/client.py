"""Synchronous native client mirroring the wire schema; used by the eval
harness for server-mode evaluation."""

from __future__ import annotations

from websockets.exceptions import WebSocketException
from websockets.sync.client import connect

from . import wire
from .core import ActionChunk, Observation
from .errors import ServerError, TransportError


class Client:
    def __init__(self, addr: str, retries: int = 3, timeout: float = 30.0):
        self.addr = addr
        self.retries = retries
        self.timeout = timeout
        self._ws = None
        self._counter = 0

    def _conn(self):
        if self._ws is None:
            self._ws = connect(
                self.addr, open_timeout=self.timeout, close_timeout=2.0,
                max_size=64 * 2**20,
            )
        return self._ws

    def close(self) -> None:
        if self._ws is not None:
            try:
                self._ws.close()
            finally:
                self._ws = None

    def _round_trip(self, data: bytes) -> dict:
        last_error: Exception | None = None
        for _ in range(self.retries):
            try:
                ws = self._conn()
                ws.send(data)
                return wire.decode_response(ws.recv(timeout=self.timeout))
            except (OSError, TimeoutError, WebSocketException) as e:
                last_error = e
                self.close()
        raise TransportError(f"gave up after {self.retries} attempts: {last_error}")

    def _request(self, kind: str, payload: dict | None = None) -> dict:
        self._counter += 1
        request_id = f"c{self._counter}"
        doc = self._round_trip(wire.encode_request(kind, request_id, payload))
        return self._check(doc)

    @staticmethod
    def _check(doc: dict) -> dict:
        if doc.get("status") == "error":
            body = doc.get("body", {})
            raise ServerError(body.get("code", "unknown"), body.get("message", ""))
        return doc

    def predict(self, obs: Observation, seed: int = 0) -> ActionChunk:
        self._counter += 1
        request_id = f"c{self._counter}"
        doc = self._round_trip(wire.encode_predict_request(request_id, obs, seed))
        return wire.chunk_from_response(self._check(doc))

    def health(self) -> dict:
        return self._request("health")["body"]

    def info(self) -> dict:
        return self._request("info")["body"]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
