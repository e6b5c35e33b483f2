"""Client for external inference sidecars.

A sidecar is a spawned child process speaking newline-delimited JSON over
stdin/stdout:

* handshake (child -> parent, first line):
  ``{"protocol": "her2-sidecar", "version": 1, "roles": ["tumor", ...]}``
* request: ``{"id": n, "role": ..., "width": w, "height": h,
  "pixels_b64": <base64 RGB8>}``
* classify response: ``{"id": n, "probabilities": {"<label>": p, ...}}``
* segment response: ``{"id": n, "labels_b64": <base64 of w*h bytes>}``
* error response: ``{"id": n, "error": "..."}``

Responses echo the request id and arrive in request order. A handle
serializes requests (one in flight); spawn several handles for parallelism.
"""

from __future__ import annotations

import base64
import json
import os
import select
import shlex
import subprocess
import threading
import time
from collections import deque

import numpy as np

from .errors import BackendUnavailableError, ProtocolViolationError

PROTOCOL_NAME = "her2-sidecar"
PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT_S = 10.0


class SidecarHandle:
    """One live sidecar process. Thread-safe; requests are serialized."""

    def __init__(self, command: str, role, handshake_timeout: float = HANDSHAKE_TIMEOUT_S):
        self.command = command
        self._lock = threading.Lock()
        self._next_id = 0
        self._buffer = bytearray()
        self._closed = False
        self._stderr_tail: deque = deque(maxlen=40)
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise BackendUnavailableError(f"cannot spawn sidecar {command!r}: {exc}") from exc
        self._stderr_thread = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_thread.start()
        self._handshake(role, handshake_timeout)

    # -- wire plumbing ------------------------------------------------------

    def _drain_stderr(self):
        for raw in self._proc.stderr:
            self._stderr_tail.append(raw.decode("utf-8", "replace").rstrip())

    def _stderr_excerpt(self) -> str:
        return " | ".join(self._stderr_tail) or "<no stderr output>"

    def _read_line(self, timeout: float | None) -> str:
        """Read one newline-terminated line from the child, honoring timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        fd = self._proc.stdout.fileno()
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[:newline].decode("utf-8", "replace")
                del self._buffer[: newline + 1]
                return line
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BackendUnavailableError(
                        f"sidecar {self.command!r} timed out; stderr: {self._stderr_excerpt()}"
                    )
                ready, _, _ = select.select([fd], [], [], remaining)
                if not ready:
                    continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise BackendUnavailableError(
                    f"sidecar {self.command!r} closed its stdout; "
                    f"stderr: {self._stderr_excerpt()}"
                )
            self._buffer.extend(chunk)

    def _handshake(self, role, timeout: float):
        try:
            line = self._read_line(timeout)
            hello = json.loads(line)
        except BackendUnavailableError:
            self.shutdown()
            raise
        except (json.JSONDecodeError, ValueError) as exc:
            self.shutdown()
            raise BackendUnavailableError(
                f"sidecar sent an unparseable handshake; stderr: {self._stderr_excerpt()}"
            ) from exc
        if hello.get("protocol") != PROTOCOL_NAME:
            self.shutdown()
            raise BackendUnavailableError(
                f"unexpected protocol {hello.get('protocol')!r} (want {PROTOCOL_NAME!r})"
            )
        if hello.get("version") != PROTOCOL_VERSION:
            self.shutdown()
            raise BackendUnavailableError(
                f"unsupported sidecar protocol version {hello.get('version')!r} "
                f"(want {PROTOCOL_VERSION})"
            )
        roles = hello.get("roles") or []
        role_name = getattr(role, "value", role)
        if role_name is not None and role_name not in roles:
            self.shutdown()
            raise BackendUnavailableError(
                f"sidecar declares roles {roles}, which do not include {role_name!r}"
            )
        self.roles = roles

    def _roundtrip(self, role, pixels: np.ndarray, timeout: float | None) -> dict:
        if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ProtocolViolationError("sidecar requests take (H, W, 3) uint8 rasters")
        height, width = pixels.shape[:2]
        with self._lock:
            if self._closed or self._proc.poll() is not None:
                raise BackendUnavailableError(
                    f"sidecar {self.command!r} is not running; "
                    f"stderr: {self._stderr_excerpt()}"
                )
            self._next_id += 1
            request_id = self._next_id
            request = {
                "id": request_id,
                "role": getattr(role, "value", role),
                "width": width,
                "height": height,
                "pixels_b64": base64.b64encode(pixels.tobytes()).decode("ascii"),
            }
            try:
                self._proc.stdin.write((json.dumps(request) + "\n").encode("ascii"))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BackendUnavailableError(
                    f"sidecar pipe broke: {exc}; stderr: {self._stderr_excerpt()}"
                ) from exc
            line = self._read_line(timeout)
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolationError(f"unparseable sidecar response: {line[:200]!r}") from exc
        if response.get("id") != request_id:
            raise ProtocolViolationError(
                f"response id {response.get('id')!r} does not echo request id {request_id}"
            )
        if "error" in response:
            raise BackendUnavailableError(f"sidecar error: {response['error']}")
        return response

    # -- public API ---------------------------------------------------------

    def classify(self, role, pixels: np.ndarray, timeout: float | None = 60.0) -> dict:
        response = self._roundtrip(role, pixels, timeout)
        probs = response.get("probabilities")
        if not isinstance(probs, dict):
            raise ProtocolViolationError("classify response lacks a probabilities object")
        return probs

    def segment(self, role, pixels: np.ndarray, timeout: float | None = 60.0) -> np.ndarray:
        height, width = pixels.shape[:2]
        response = self._roundtrip(role, pixels, timeout)
        encoded = response.get("labels_b64")
        if not isinstance(encoded, str):
            raise ProtocolViolationError("segment response lacks labels_b64")
        try:
            raw = base64.b64decode(encoded, validate=True)
        except Exception as exc:
            raise ProtocolViolationError(f"labels_b64 is not valid base64: {exc}") from exc
        if len(raw) != width * height:
            raise ProtocolViolationError(
                f"label map has {len(raw)} bytes, expected {width * height}"
            )
        labels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
        if labels.size and labels.max() > 4:
            raise ProtocolViolationError("label map contains values outside {0..4}")
        return labels

    def shutdown(self):
        """Terminate the child. Safe to call repeatedly."""
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False


def spawn_sidecar(binding, handshake_timeout: float = HANDSHAKE_TIMEOUT_S) -> SidecarHandle:
    """Spawn and handshake the sidecar named by a ModelBinding."""
    if not binding.sidecar_command:
        raise BackendUnavailableError(f"binding for {binding.role} has no sidecar_command")
    return SidecarHandle(binding.sidecar_command, binding.role, handshake_timeout)


def shutdown_sidecar(handle: SidecarHandle):
    handle.shutdown()
