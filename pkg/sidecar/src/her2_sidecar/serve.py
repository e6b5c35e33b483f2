"""Newline-delimited JSON request loop over stdin/stdout.

Protocol (version 1):

* handshake, emitted once before anything else:
  ``{"protocol": "her2-sidecar", "version": 1, "roles": [...]}``
* request: ``{"id": n, "role": "tumor"|"stain"|"segment", "width": w,
  "height": h, "pixels_b64": <base64 RGB8>}``
* classify response: ``{"id": n, "probabilities": {...}}``
* segment response: ``{"id": n, "labels_b64": <base64 of w*h bytes>}``
* failure: ``{"id": n, "error": "..."}``, or ``{"error": "unparseable"}``
  when the request line is not JSON.

Requests are answered strictly in order, one in flight. EOF on stdin ends
the loop cleanly; a bad request never does.
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np

PROTOCOL = "her2-sidecar"
VERSION = 1

ROLES = ("tumor", "stain", "segment")


class RequestError(Exception):
    pass


def _emit(stream, payload: dict):
    stream.write(json.dumps(payload) + "\n")
    stream.flush()


def _decode_pixels(request: dict) -> np.ndarray:
    try:
        width = int(request["width"])
        height = int(request["height"])
    except (KeyError, TypeError, ValueError):
        raise RequestError("request needs integer width and height") from None
    if width <= 0 or height <= 0:
        raise RequestError("width and height must be positive")
    encoded = request.get("pixels_b64")
    if not isinstance(encoded, str):
        raise RequestError("request needs pixels_b64")
    try:
        raw = base64.b64decode(encoded, validate=True)
    except Exception:
        raise RequestError("pixels_b64 is not valid base64") from None
    if len(raw) != width * height * 3:
        raise RequestError(
            f"pixel payload is {len(raw)} bytes, expected {width * height * 3}"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def serve(model, roles=ROLES, stdin=None, stdout=None) -> int:
    """Answer requests until EOF. `model` provides classify_tumor,
    classify_stain and segment; see rules.RuleModel / checkpoint adapters."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    roles = tuple(roles)
    _emit(stdout, {"protocol": PROTOCOL, "version": VERSION, "roles": list(roles)})
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            _emit(stdout, {"error": "unparseable"})
            continue
        request_id = request.get("id")
        try:
            role = request.get("role")
            if role not in roles:
                raise RequestError(f"role {role!r} not served (have {list(roles)})")
            pixels = _decode_pixels(request)
            if role == "tumor":
                response = {"id": request_id, "probabilities": model.classify_tumor(pixels)}
            elif role == "stain":
                response = {"id": request_id, "probabilities": model.classify_stain(pixels)}
            else:
                labels = model.segment(pixels)
                response = {
                    "id": request_id,
                    "labels_b64": base64.b64encode(labels.tobytes()).decode("ascii"),
                }
        except RequestError as exc:
            response = {"id": request_id, "error": str(exc)}
        except Exception as exc:  # a model bug must not kill the loop
            response = {"id": request_id, "error": f"{type(exc).__name__}: {exc}"}
        _emit(stdout, response)
    return 0


class RuleModel:
    """The documented rule fixtures behind the model interface."""

    def classify_tumor(self, pixels: np.ndarray) -> dict:
        from . import rules

        return rules.classify_tumor(pixels)

    def classify_stain(self, pixels: np.ndarray) -> dict:
        from . import rules

        return rules.classify_stain(pixels)

    def segment(self, pixels: np.ndarray) -> np.ndarray:
        from . import rules

        return rules.stain_labels(pixels)
