"""Wire schema shared by the server and the native client.

Transport is WebSocket binary frames; encoding is MessagePack. Key order is
part of the canonical encoding (fixture-checked), so both encoders build maps
in the exact order written here.

Predict request:
    {"kind": "predict", "request_id": str,
     "payload": {"image": {view: {"h": int, "w": int, "rgb": bin}},
                 "lang": str, "state": [f64...]?, "seed": int?}}
Response:
    {"request_id": str, "status": "ok",
     "body": {"normalized_actions": [[f64; 32]; k], "server_ms": f64}}
  or {"request_id": str, "status": "error", "body": {"code": str, "message": str}}
"""

from __future__ import annotations

import numpy as np

from . import mpack
from .core import ActionChunk, ImageBuffer, Observation
from .errors import FormatError


def encode_image_map(views: dict[str, ImageBuffer]) -> dict:
    return {
        name: {"h": img.height, "w": img.width, "rgb": img.pixels}
        for name, img in views.items()
    }


def predict_payload(obs: Observation, seed: int) -> dict:
    payload = {
        "image": encode_image_map(obs.views),
        "lang": obs.instruction,
    }
    if obs.state is not None:
        payload["state"] = [float(x) for x in obs.state]
    payload["seed"] = int(seed)
    return payload


def encode_request(kind: str, request_id: str, payload: dict | None = None) -> bytes:
    return mpack.packb(
        {"kind": kind, "request_id": request_id, "payload": payload or {}}
    )


def encode_predict_request(request_id: str, obs: Observation, seed: int) -> bytes:
    return encode_request("predict", request_id, predict_payload(obs, seed))


class PayloadError(Exception):
    """Maps directly onto an error envelope."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def decode_observation(payload: dict) -> tuple[Observation, int]:
    """Server-side payload decoding. Unknown keys are accepted and ignored."""
    if not isinstance(payload, dict):
        raise PayloadError("bad_request", "payload is not a map")
    if "image" not in payload:
        raise PayloadError("missing_field:image", "predict payload needs image")
    if "lang" not in payload:
        raise PayloadError("missing_field:lang", "predict payload needs lang")
    image = payload["image"]
    if not isinstance(image, dict) or not image:
        raise PayloadError("bad_image", "image must be a non-empty map of views")
    views: dict[str, ImageBuffer] = {}
    for name, rec in image.items():
        if not isinstance(rec, dict):
            raise PayloadError("bad_image", f"view {name!r} is not a map")
        try:
            h, w, rgb = int(rec["h"]), int(rec["w"]), rec["rgb"]
        except (KeyError, TypeError, ValueError) as e:
            raise PayloadError("bad_image", f"view {name!r}: {e}") from e
        if not isinstance(rgb, (bytes, bytearray)):
            raise PayloadError("bad_image", f"view {name!r}: rgb must be binary")
        if len(rgb) != h * w * 3:
            raise PayloadError(
                "bad_image", f"view {name!r}: {len(rgb)} bytes != {h}*{w}*3"
            )
        views[name] = ImageBuffer(height=h, width=w, pixels=bytes(rgb))
    lang = payload["lang"]
    if not isinstance(lang, str):
        raise PayloadError("bad_request", "lang must be a string")
    state = None
    if payload.get("state") is not None:
        state = np.asarray(payload["state"], dtype=np.float64)
    seed = int(payload.get("seed", 0))
    return Observation(views=views, instruction=lang, state=state), seed


def ok_response(request_id: str, chunk: ActionChunk, server_ms: float) -> bytes:
    body = {
        "normalized_actions": [[float(v) for v in row] for row in chunk.values],
        "server_ms": float(server_ms),
    }
    return mpack.packb({"request_id": request_id, "status": "ok", "body": body})


def error_response(request_id: str, code: str, message: str) -> bytes:
    return mpack.packb(
        {
            "request_id": request_id,
            "status": "error",
            "body": {"code": code, "message": message},
        }
    )


def info_body(request_id: str, summary: dict) -> bytes:
    return mpack.packb({"request_id": request_id, "status": "ok", "body": summary})


def decode_response(data: bytes) -> dict:
    doc = mpack.unpackb(data)
    if not isinstance(doc, dict) or "status" not in doc:
        raise FormatError("response is not an envelope")
    return doc


def chunk_from_response(doc: dict) -> ActionChunk:
    rows = doc["body"]["normalized_actions"]
    values = np.array(rows, dtype=np.float64)
    return ActionChunk(
        values=values, normalized=True, dof_mask=np.ones(values.shape[1], dtype=bool)
    )
