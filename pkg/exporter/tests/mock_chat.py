"""Tiny loopback chat-completions server for exporter tests."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable


class MockChat:
    def __init__(
        self,
        responder: Callable[[dict], str] | None = None,
        status_script: list[int] | None = None,
    ) -> None:
        self.responder = responder or (lambda payload: "ok")
        self.status_script = list(status_script or [])
        self.total_requests = 0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args) -> None:
                pass

            def do_POST(self) -> None:
                with outer._lock:
                    outer.total_requests += 1
                    scripted = outer.status_script.pop(0) if outer.status_script else 200
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                if scripted != 200:
                    self.send_response(scripted)
                    self.end_headers()
                    return
                body = json.dumps(
                    {
                        "choices": [
                            {"message": {"role": "assistant", "content": outer.responder(payload)}}
                        ]
                    }
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> "MockChat":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
