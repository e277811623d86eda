"""JSON-over-HTTP prediction API and a black-box client for it.

``POST /predict`` takes ``{"inputs": [[...], ...]}`` and answers
``{"outputs": [[...], ...]}``; ``GET /meta`` answers
``{"d_in", "d_out", "task_kind"}``. Reals are written with 17 significant
digits, so values survive the round trip bit-exactly.
"""
from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .textio import dumps

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024 * 1024


class TransportError(ConnectionError):
    pass


class RemoteError(ValueError):
    """The server rejected a request (HTTP 4xx)."""


def encode_rows(key: str, rows) -> bytes:
    return dumps({key: np.asarray(rows, dtype=np.float64)}, indent=None).encode("utf-8")


def decode_rows(body: dict, key: str, width: int) -> np.ndarray:
    rows = body.get(key) if isinstance(body, dict) else None
    if not isinstance(rows, list) or not rows:
        raise ValueError(f"`{key}` must be a non-empty array of rows")
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            got = len(row) if isinstance(row, list) else type(row).__name__
            raise ValueError(f"row {i} has width {got}, expected {width}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise ValueError(f"row {i} contains non-numeric entries")
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"`{key}` contains non-finite values")
    return arr


def _make_handler(model):
    meta = dumps({"d_in": model.d_in, "d_out": model.d_out, "task_kind": model.task_kind},
                 indent=None).encode("utf-8")

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, code: int, body: bytes):
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, code: int, msg: str):
            self._send(code, json.dumps({"error": msg}).encode("utf-8"))

        def do_GET(self):
            if self.path != "/meta":
                return self._error(404, f"unknown path {self.path}")
            self._send(200, meta)

        def do_POST(self):
            if self.path != "/predict":
                return self._error(404, f"unknown path {self.path}")
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                return self._error(400, "bad Content-Length")
            if length <= 0 or length > MAX_BODY:
                return self._error(400, "missing or oversized body")
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw)
                x = decode_rows(body, "inputs", model.d_in)
            except json.JSONDecodeError as exc:
                return self._error(400, f"malformed JSON: {exc.msg}")
            except ValueError as exc:
                return self._error(400, f"dimension/format error: {exc}")
            self._send(200, encode_rows("outputs", model.predict(x)))

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return Handler


class ServerHandle:
    def __init__(self, server: ThreadingHTTPServer, thread: threading.Thread | None):
        self.server = server
        self.thread = thread

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self.thread is not None:
            self.thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(model, host: str = "127.0.0.1", port: int = 0, block: bool = False) -> ServerHandle:
    """Expose ``model.predict`` over HTTP; ``port=0`` picks a free port.

    With ``block=False`` the server runs on a daemon thread and the handle
    is returned immediately.
    """
    server = ThreadingHTTPServer((host, port), _make_handler(model))
    server.daemon_threads = True
    if block:
        handle = ServerHandle(server, None)
        try:
            server.serve_forever()
        finally:
            server.server_close()
        return handle
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return ServerHandle(server, thread)


class RemoteModel:
    """A remote prediction endpoint presented as a black-box model."""

    def __init__(self, url: str, timeout: float = 10.0, retries: int = 3, max_batch: int = 64,
                 backoff: float = 0.05, d_in: int | None = None, d_out: int | None = None):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.max_batch = max_batch
        self.backoff = backoff
        meta = self._request("GET", "/meta")
        self.d_in, self.d_out = int(meta["d_in"]), int(meta["d_out"])
        self.task_kind = meta.get("task_kind")
        if (d_in is not None and d_in != self.d_in) or (d_out is not None and d_out != self.d_out):
            raise ValueError(f"{self.url}/meta reports dims ({self.d_in}, {self.d_out}), "
                             f"expected ({d_in}, {d_out})")

    def _request(self, method: str, path: str, body: bytes | None = None) -> dict:
        url = self.url + path
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(url, data=body, method=method,
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read())
            except urllib.error.HTTPError as exc:
                if 400 <= exc.code < 500:
                    try:
                        msg = json.loads(exc.read()).get("error", "")
                    except (ValueError, AttributeError):
                        msg = ""
                    raise RemoteError(f"{url}: HTTP {exc.code}: {msg}") from None
                last = exc
            except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
                last = exc
            if attempt < self.retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise TransportError(f"{url}: request failed after {self.retries + 1} attempts: {last}")

    def predict(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"batch shape {x.shape} does not match d_in={self.d_in}")
        outs = []
        for start in range(0, len(x), self.max_batch):
            body = self._request("POST", "/predict", encode_rows("inputs", x[start:start + self.max_batch]))
            chunk = decode_rows(body, "outputs", self.d_out)
            outs.append(chunk)
        return np.concatenate(outs, axis=0)


def remote_blackbox(url: str, timeout: float = 10.0, retries: int = 3, **kw) -> RemoteModel:
    return RemoteModel(url, timeout=timeout, retries=retries, **kw)
