"""Line-protocol TCP front end for an online embedding cache file.

Request ``GET <item_id>\\n``; response ``<generation> <base64 payload>\\n``
or ``MISS\\n``.  Anything else gets ``ERR <reason>\\n``.  The cache file is
re-read every ``refresh_interval`` seconds and a newer generation replaces
the served one in a single swap.
"""

from __future__ import annotations

import logging
import os
import socketserver
import threading
from pathlib import Path

from .cache import OnlineEmbeddingCache, encode_payload, load_generation
from .exceptions import CorruptFileError

log = logging.getLogger(__name__)


def handle_request(cache: OnlineEmbeddingCache, line: str) -> str:
    parts = line.strip().split()
    if len(parts) != 2 or parts[0] != "GET":
        return "ERR expected 'GET <item_id>'"
    entry = cache.lookup(parts[1])
    if entry is None:
        return "MISS"
    return f"{entry.generation} {encode_payload(entry.embedding)}"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            self.wfile.write((handle_request(self.server.cache, line) + "\n").encode("utf-8"))
            self.wfile.flush()


class CacheServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, cache_path, refresh_interval: float, host: str = "127.0.0.1", port: int = 0):
        self.cache_path = Path(cache_path)
        self.cache = OnlineEmbeddingCache(refresh_interval)
        self._mtime = None
        self.reload()
        self._stop = threading.Event()
        super().__init__((host, port), _Handler)
        self._watcher = threading.Thread(target=self._watch, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def reload(self) -> bool:
        """Adopt the file's generation if the file changed and holds a newer one."""
        try:
            mtime = os.stat(self.cache_path).st_mtime_ns
        except FileNotFoundError:
            return False
        if mtime == self._mtime:
            return False
        try:
            gen = load_generation(self.cache_path)
        except CorruptFileError as exc:
            log.warning("ignoring unreadable cache file %s: %s", self.cache_path, exc)
            return False
        self._mtime = mtime
        before = self.cache.generation
        self.cache.install(gen)
        return self.cache.generation != before

    def _watch(self):
        while not self._stop.wait(self.cache.refresh_interval):
            self.reload()

    def serve_forever(self, poll_interval: float = 0.5):
        if self.cache.refresh_interval and not self._watcher.is_alive():
            self._watcher.start()
        super().serve_forever(poll_interval)

    def server_close(self):
        self._stop.set()
        super().server_close()
