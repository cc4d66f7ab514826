"""HTTP frame service: compress once per ratio, render per request.

Endpoints (documented with worked examples in docs/formats.md):
  GET  /info    -> JSON {n_gaussians, trained_ratios, bounds}
  GET  /healthz -> JSON {status}
  POST /render  -> image/png; JSON body {ratio, camera (4x4 world-to-camera,
                   row-major), width, height, fx?, fy?}

Malformed bodies answer 400 with {"error": reason, "field": key}; a ratio
outside (0, 1] answers 422. Ratios are quantized to 3 decimals and the
compacted model is cached per quantized ratio, so slider scrubbing pays for
selection once and rendering per frame.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .core import Camera
from .errors import InvalidRatioError
from .infer import CompactModel, compress
from .io import encode_png
from .render import RenderOptions, render_image
from .validation import check_ratio


class RequestError(Exception):
    """Maps a bad request onto an HTTP status and a machine-readable body."""

    def __init__(self, status: int, reason: str, field: str | None = None):
        super().__init__(reason)
        self.status = status
        self.reason = reason
        self.field = field

    def body(self) -> dict:
        out = {"error": self.reason}
        if self.field is not None:
            out["field"] = self.field
        return out


class CompressCache:
    """Per-ratio compacted models; immutable once inserted.

    Reads are lock-free (a dict lookup is atomic); the lock only serializes
    writers, and the double check inside it keeps a losing writer from
    recomputing an entry that appeared while it waited.
    """

    def __init__(self, bundle):
        self.bundle = bundle
        self._cache: dict[float, CompactModel] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(ratio: float) -> float:
        return round(check_ratio(ratio), 3)

    def get(self, ratio: float) -> CompactModel:
        key = self.key(ratio)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                hit = compress(self.bundle, key)
                self._cache[key] = hit
            return hit

    def __len__(self) -> int:
        return len(self._cache)


def _require(body: dict, key: str):
    if key not in body:
        raise RequestError(400, f"missing key {key!r}", field=key)
    return body[key]


def _parse_number(body: dict, key: str, minimum: float, maximum: float) -> float:
    raw = _require(body, key)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise RequestError(400, f"{key} must be a number", field=key)
    value = float(raw)
    if not minimum <= value <= maximum:
        raise RequestError(400, f"{key} must lie in [{minimum}, {maximum}]", field=key)
    return value


def parse_render_request(raw: bytes, default_background: tuple) -> tuple:
    """(ratio, camera, options) from a /render body, or RequestError."""
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise RequestError(400, f"body is not valid JSON: {exc.msg}") from exc
    if not isinstance(body, dict):
        raise RequestError(400, "body must be a JSON object")

    ratio_raw = _require(body, "ratio")
    if isinstance(ratio_raw, bool) or not isinstance(ratio_raw, (int, float)):
        raise RequestError(400, "ratio must be a number", field="ratio")
    try:
        ratio = check_ratio(ratio_raw)
    except InvalidRatioError as exc:
        raise RequestError(422, str(exc), field="ratio") from exc

    matrix = _require(body, "camera")
    try:
        w2c = np.asarray(matrix, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise RequestError(400, "camera must be a 4x4 number matrix",
                           field="camera") from exc
    if w2c.shape != (4, 4) or not np.all(np.isfinite(w2c)):
        raise RequestError(400, "camera must be a finite 4x4 matrix", field="camera")

    width = int(_parse_number(body, "width", 1, 4096))
    height = int(_parse_number(body, "height", 1, 4096))
    default_f = 1.2 * min(width, height)
    fx = body.get("fx", default_f)
    fy = body.get("fy", fx)
    for name, value in (("fx", fx), ("fy", fy)):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            raise RequestError(400, f"{name} must be a positive number", field=name)

    camera = Camera(
        world_to_camera=w2c, fx=float(fx), fy=float(fy),
        cx=width / 2.0, cy=height / 2.0, width=width, height=height,
    )
    return ratio, camera, RenderOptions(background=default_background)


class FrameHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    cache: CompressCache
    quiet = True

    def log_message(self, fmt, *log_args):
        if not self.quiet:
            super().log_message(fmt, *log_args)

    def _send_json(self, status: int, payload: dict) -> None:
        raw = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def _send_png(self, raw: bytes) -> None:
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def do_GET(self):
        if self.path == "/healthz":
            self._send_json(200, {"status": "ok"})
        elif self.path == "/info":
            bundle = self.cache.bundle
            lo, hi = bundle.model.bounding_box()
            self._send_json(200, {
                "n_gaussians": bundle.model.n,
                "trained_ratios": list(bundle.config.ratios),
                "bounds": {"lo": lo.tolist(), "hi": hi.tolist()},
            })
        else:
            self._send_json(404, {"error": f"no such path {self.path!r}"})

    def do_POST(self):
        if self.path != "/render":
            self._send_json(404, {"error": f"no such path {self.path!r}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            ratio, camera, options = parse_render_request(
                self.rfile.read(length),
                tuple(self.cache.bundle.config.background),
            )
        except RequestError as exc:
            self._send_json(exc.status, exc.body())
            return
        compact = self.cache.get(ratio)
        image = render_image(compact.model, camera, options=options)
        self._send_png(encode_png(image))

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()


def run_server(bundle, host: str = "127.0.0.1", port: int = 8000,
               quiet: bool = True) -> ThreadingHTTPServer:
    """Bound, ready-to-serve HTTP server; call serve_forever to run it."""
    cache = CompressCache(bundle)
    handler = type("BoundFrameHandler", (FrameHandler,),
                   {"cache": cache, "quiet": quiet})
    server = ThreadingHTTPServer((host, port), handler)
    server.cache = cache
    return server
