"""Instrumented local HTTP server used by the ingest tests.

Serves deterministic bytes at /photos/{photo_id}/original.{ext} and records
enough about incoming traffic to assert concurrency bounds, request rates,
and refetch counts. Failure injection knobs cover permanent errors (404),
transient errors that clear after a few attempts, and a server that starts
refusing everything after N good responses (stand-in for a killed run).
"""

from __future__ import annotations

import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def photo_bytes(photo_id: int, ext: str) -> bytes:
    # Deterministic, length varies with the id so truncation is detectable.
    chunk = f"photo-{photo_id}-{ext}\n".encode("ascii")
    return chunk * (1 + photo_id % 7)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # noqa: A002 - silence default logging
        pass

    def do_GET(self):
        server: MockPhotoServer = self.server.owner  # type: ignore[attr-defined]
        with server._lock:
            server.inflight += 1
            server.max_inflight = max(server.max_inflight, server.inflight)
            server.request_log.append((self.path, time.monotonic()))
            server.path_counts[self.path] = server.path_counts.get(self.path, 0) + 1
        try:
            self._respond(server)
        finally:
            with server._lock:
                server.inflight -= 1

    def _respond(self, server: "MockPhotoServer"):
        if server.response_delay > 0:
            time.sleep(server.response_delay)
        parts = self.path.strip("/").split("/")
        if len(parts) != 3 or parts[0] != "photos" or not parts[2].startswith("original."):
            self._send_status(404)
            return
        try:
            photo_id = int(parts[1])
        except ValueError:
            self._send_status(404)
            return
        ext = parts[2].split(".", 1)[1]

        with server._lock:
            if photo_id in server.fail_status:
                self._send_status(server.fail_status[photo_id])
                return
            remaining = server.flaky.get(photo_id, 0)
            if remaining > 0:
                server.flaky[photo_id] = remaining - 1
                self._send_status(503)
                return
            if server.fail_after is not None and server.ok_count >= server.fail_after:
                self._send_status(server.fail_with)
                return
            server.ok_count += 1

        body = photo_bytes(photo_id, ext)
        self.send_response(200)
        self.send_header("Content-Type", "image/jpeg")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_status(self, status: int):
        body = b"err"
        self.send_response(status)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class MockPhotoServer:
    def __init__(
        self,
        *,
        response_delay: float = 0.0,
        fail_status: dict[int, int] | None = None,
        flaky: dict[int, int] | None = None,
        fail_after: int | None = None,
        fail_with: int = 503,
    ):
        self.response_delay = response_delay
        self.fail_status = dict(fail_status or {})
        self.flaky = dict(flaky or {})  # photo_id -> number of 503s before success
        self.fail_after = fail_after
        self.fail_with = fail_with

        self._lock = threading.Lock()
        self.inflight = 0
        self.max_inflight = 0
        self.ok_count = 0
        self.request_log: list[tuple[str, float]] = []
        self.path_counts: dict[str, int] = {}

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        with self._lock:
            return len(self.request_log)

    def requests_for(self, photo_id: int) -> int:
        with self._lock:
            return sum(n for p, n in self.path_counts.items() if f"/photos/{photo_id}/" in p)

    def request_times(self) -> list[float]:
        with self._lock:
            return [t for _, t in self.request_log]

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
