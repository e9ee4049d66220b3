"""WebSocket policy service.

Connections are handled concurrently; policy evaluation is serialized through
a bounded queue (the model is CPU-bound and deterministic, and serialization
keeps the GR00T summary cadence reproducible). Requests beyond the queue
depth are answered with code "overloaded". Malformed frames produce an error
envelope and leave the connection open.
"""

from __future__ import annotations

import asyncio
import os
import time
from dataclasses import dataclass

from websockets.asyncio.server import serve as ws_serve

from . import mpack, wire
from .errors import FormatError
from .policy import Policy, policy_predict_action

ENV_PORT = "VLAFORGE_PORT"


@dataclass
class ServeOptions:
    host: str = "127.0.0.1"
    port: int = 8765
    queue_depth: int = 32


def resolve_port(config_port: int, flag_port: int | None = None) -> int:
    """Priority: explicit flag > VLAFORGE_PORT env var > config."""
    if flag_port is not None:
        return flag_port
    env = os.environ.get(ENV_PORT)
    if env:
        return int(env)
    return config_port


class PolicyServer:
    def __init__(self, policy: Policy, options: ServeOptions | None = None):
        self.policy = policy
        self.options = options or ServeOptions()
        self._server = None
        self._gate = asyncio.Semaphore(1)  # serializes policy evaluation
        self._pending = 0

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def start(self):
        self._server = await ws_serve(
            self._handle, self.options.host, self.options.port, max_size=64 * 2**20
        )
        return self

    async def stop(self):
        # drain: stop accepting new work, let queued inference finish
        for _ in range(100):
            if self._pending == 0:
                break
            await asyncio.sleep(0.05)
        self._server.close()
        await self._server.wait_closed()

    async def _handle(self, ws):
        async for message in ws:
            await ws.send(await self._respond(message))

    async def _respond(self, message) -> bytes:
        if isinstance(message, str):
            return wire.error_response("", "bad_request", "expected binary frame")
        try:
            doc = mpack.unpackb(message)
        except FormatError as e:
            return wire.error_response("", "bad_request", f"undecodable frame: {e}")
        if not isinstance(doc, dict):
            return wire.error_response("", "bad_request", "frame is not a map")
        request_id = doc.get("request_id", "")
        if not isinstance(request_id, str):
            request_id = ""
        kind = doc.get("kind")
        if kind == "health":
            return wire.info_body(request_id, {"ok": True})
        if kind == "info":
            cfg = self.policy.cfg
            return wire.info_body(
                request_id,
                {
                    "backbone_id": cfg.backbone_id,
                    "head_id": cfg.head_id,
                    "k": cfg.k,
                    "dims": 32,
                },
            )
        if kind != "predict":
            return wire.error_response(
                request_id, "bad_request", f"unknown kind {kind!r}"
            )
        try:
            obs, seed = wire.decode_observation(doc.get("payload"))
        except wire.PayloadError as e:
            return wire.error_response(request_id, e.code, e.message)
        if self._pending >= self.options.queue_depth:
            return wire.error_response(request_id, "overloaded", "queue full")
        self._pending += 1
        try:
            async with self._gate:
                loop = asyncio.get_running_loop()
                t0 = time.perf_counter()
                try:
                    out = await loop.run_in_executor(
                        None, policy_predict_action, self.policy, obs, seed
                    )
                except Exception as e:  # surfaced as a typed envelope
                    return wire.error_response(request_id, "inference_error", str(e))
                server_ms = (time.perf_counter() - t0) * 1e3
                return wire.ok_response(
                    request_id, out["normalized_actions"], server_ms
                )
        finally:
            self._pending -= 1


async def _serve_forever(policy: Policy, options: ServeOptions):
    server = PolicyServer(policy, options)
    await server.start()
    print(f"serving on ws://{options.host}:{server.port}", flush=True)
    await asyncio.Future()


def serve_blocking(policy: Policy, options: ServeOptions) -> None:
    """Run until interrupted (CLI entry)."""
    try:
        asyncio.run(_serve_forever(policy, options))
    except KeyboardInterrupt:
        pass
