"""Instrumented in-process mock of the InSAR job service.

Serves the same wire contract the ingest client speaks: POST /jobs to
submit, GET /jobs/{id} to poll, GET /products/{id} to download. Behavior is
scripted per pair key ("succeed" or "fail"); jobs turn terminal on the
second poll. The server counts jobs in flight (submitted but not yet
observed terminal) so tests can assert the client's concurrency bound.
"""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional


def _default_product(pair_key: str) -> bytes:
    # deterministic filler bytes; tests needing real rasters inject a factory
    seed = hashlib.sha256(pair_key.encode()).digest()
    return seed * 16


class MockHyp3:
    """Scriptable job service on 127.0.0.1 with an ephemeral port."""

    def __init__(
        self,
        behaviors: Optional[dict[str, str]] = None,
        token: Optional[str] = None,
        polls_to_terminal: int = 2,
        product_factory: Callable[[str], bytes] = _default_product,
    ):
        self.behaviors = behaviors or {}
        self.token = token
        self.polls_to_terminal = polls_to_terminal
        self.product_factory = product_factory
        self.lock = threading.Lock()
        self.jobs: dict[str, dict] = {}
        self.submissions = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        assert self._server is not None
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockHyp3":
        state = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _json(self, code: int, body: dict):
                payload = json.dumps(body).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def _authorized(self) -> bool:
                if state.token is None:
                    return True
                return self.headers.get("Authorization") == f"Bearer {state.token}"

            def do_POST(self):
                if self.path != "/jobs":
                    self._json(404, {"error": "not found"})
                    return
                if not self._authorized():
                    self._json(401, {"error": "bad token"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                key = f"{body.get('reference')}__{body.get('secondary')}"
                with state.lock:
                    state.submissions += 1
                    job_id = f"job-{state.submissions:05d}"
                    state.jobs[job_id] = {
                        "pair_key": key,
                        "behavior": state.behaviors.get(key, "succeed"),
                        "polls": 0,
                        "reported_terminal": False,
                    }
                    state.in_flight += 1
                    state.max_in_flight = max(state.max_in_flight, state.in_flight)
                self._json(200, {"job_id": job_id})

            def do_GET(self):
                if not self._authorized():
                    self._json(401, {"error": "bad token"})
                    return
                if self.path.startswith("/jobs/"):
                    self._poll(self.path.removeprefix("/jobs/"))
                elif self.path.startswith("/products/"):
                    self._product(self.path.removeprefix("/products/"))
                else:
                    self._json(404, {"error": "not found"})

            def _poll(self, job_id: str):
                with state.lock:
                    job = state.jobs.get(job_id)
                    if job is None:
                        self._json(404, {"error": "unknown job"})
                        return
                    job["polls"] += 1
                    terminal = job["polls"] >= state.polls_to_terminal
                    if terminal and not job["reported_terminal"]:
                        job["reported_terminal"] = True
                        state.in_flight -= 1
                    if not terminal:
                        status = {"job_id": job_id, "state": "running", "attempts": job["polls"]}
                    elif job["behavior"] == "fail":
                        status = {"job_id": job_id, "state": "failed", "attempts": job["polls"]}
                    else:
                        product = state.product_factory(job["pair_key"])
                        status = {
                            "job_id": job_id,
                            "state": "succeeded",
                            "attempts": job["polls"],
                            "product_url": f"{state.url}/products/{job_id}",
                            "sha256": hashlib.sha256(product).hexdigest(),
                        }
                self._json(200, status)

            def _product(self, job_id: str):
                with state.lock:
                    job = state.jobs.get(job_id)
                    if job is None:
                        self._json(404, {"error": "unknown job"})
                        return
                    product = state.product_factory(job["pair_key"])
                self.send_response(200)
                self.send_header("Content-Type", "application/octet-stream")
                self.send_header("Content-Length", str(len(product)))
                self.end_headers()
                self.wfile.write(product)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockHyp3":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
