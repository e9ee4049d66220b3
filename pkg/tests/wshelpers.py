"""Shared test helper: run a PolicyServer on a background event loop."""

import asyncio
import threading

from vlaforge.server import PolicyServer, ServeOptions


class ServerThread:
    def __init__(self, policy, queue_depth=32):
        self.policy = policy
        self.queue_depth = queue_depth
        self.port = None
        self._loop = None
        self._ready = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        server = PolicyServer(
            self.policy, ServeOptions(port=0, queue_depth=self.queue_depth)
        )
        self._loop.run_until_complete(server.start())
        self.port = server.port
        self._server = server
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(server.stop())
        self._loop.close()

    def __enter__(self):
        self._thread.start()
        assert self._ready.wait(10), "server failed to start"
        return self

    def __exit__(self, *exc):
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=10)

    @property
    def addr(self):
        return f"ws://127.0.0.1:{self.port}"
