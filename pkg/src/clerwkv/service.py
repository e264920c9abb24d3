"""HTTP inference service.

POST /enhance  {"image": <base64 PNG>, "beta": <decimal string>}
               -> {"image": <base64 PNG>, "mean_luminance": float, "millis": int}
GET  /health   -> 200 "ok"
GET  /info     -> model config, checkpoint digest, trained control range

Requests above 4 MB are refused (413); an out-of-range control value is a
client error (400), never clamped. Inference runs over immutable weights, so
concurrent requests are independent and identical requests return identical
bytes.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .hvi import luma
from .model import CleRwkvModel, enhance, load_checkpoint

MAX_BODY_BYTES = 4 * 1024 * 1024


def _png_bytes(img01: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.round(img01 * 255).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # state injected by make_server
    model: CleRwkvModel = None
    info: dict = None
    cors: bool = False

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _headers(self, code, ctype, length):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(length))
        if self.cors:
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()

    def _send(self, code, payload, ctype="application/json"):
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self._headers(code, ctype, len(body))
        self.wfile.write(body)

    def do_OPTIONS(self):
        self._headers(204, "text/plain", 0)

    def do_GET(self):
        if self.path == "/health":
            self._send(200, b"ok", ctype="text/plain")
        elif self.path == "/info":
            self._send(200, self.info)
        else:
            self._send(404, {"error": "unknown path"})

    def do_POST(self):
        if self.path != "/enhance":
            self._send(404, {"error": "unknown path"})
            return
        length = int(self.headers.get("Content-Length", 0))
        if length > MAX_BODY_BYTES:
            remaining = length  # drain so the keep-alive connection stays sane
            while remaining > 0:
                remaining -= len(self.rfile.read(min(remaining, 1 << 20)))
            self._send(413, {"error": "payload too large"})
            return
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            beta = float(body["beta"])
            image = _decode_png(base64.b64decode(body["image"]))
        except Exception:
            self._send(400, {"error": "malformed request"})
            return
        if not 0.0 <= beta <= 1.0:
            self._send(400, {"error": "beta out of [0, 1]"})
            return
        try:
            t0 = time.perf_counter()
            if self.model.config.variant == "conditional":
                out = enhance(self.model, image, beta)
            else:
                out = enhance(self.model, image)
            millis = int((time.perf_counter() - t0) * 1000)
            quantized = np.round(out * 255) / 255.0
            self._send(200, {
                "image": base64.b64encode(_png_bytes(out)).decode("ascii"),
                "mean_luminance": float(luma(quantized).mean()),
                "millis": millis,
            })
        except Exception:
            error_id = uuid.uuid4().hex  # no stack traces over the wire
            self._send(500, {"error_id": error_id})


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_server(checkpoint_path, port: int, cors: bool = False) -> ThreadingHTTPServer:
    model, meta = load_checkpoint(checkpoint_path)
    info = {
        "r": model.config.r,
        "c_model": model.config.c_model,
        "num_blocks": model.config.num_blocks,
        "variant": model.config.variant,
        "checkpoint_sha256": file_digest(checkpoint_path),
        "beta_lo": float(meta.get("beta_lo", 0.0)),
        "beta_hi": float(meta.get("beta_hi", 1.0)),
    }
    handler = type("BoundHandler", (_Handler,), {"model": model, "info": info, "cors": cors})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(checkpoint_path, port: int, cors: bool = False):
    server = make_server(checkpoint_path, port, cors)
    print(f"serving on http://127.0.0.1:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
