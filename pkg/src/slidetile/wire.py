"""Framed stdin/stdout protocol for segmentation and cleaning sidecars.

All integers are big-endian. Request frame:

    magic "WSST" | version u32=1 | kind u8 (1=SEGMENT, 2=CLEAN) | tile_id u64
    | width u32 | height u32 | payload w*h*3 RGB bytes

Response frame:

    magic "WSST" | version u32=1 | status u8 (0=OK, 1=ERROR) | tile_id u64
    | payload: SEGMENT -> w*h label bytes; CLEAN -> w*h*3 RGB bytes;
      ERROR -> u32 length + UTF-8 message

A response with a tile_id different from the request's is a protocol
violation. The default per-tile timeout is 30 s.
"""

from __future__ import annotations

import os
import select
import struct
import subprocess
import threading
import time

import numpy as np

from .errors import SidecarFailure

MAGIC = b"WSST"
VERSION = 1
KIND_SEGMENT = 1
KIND_CLEAN = 2
STATUS_OK = 0
STATUS_ERROR = 1

REQUEST_HEADER = struct.Struct(">4sIBQII")
RESPONSE_HEADER = struct.Struct(">4sIBQ")

DEFAULT_TIMEOUT = 30.0


def encode_request(kind: int, tile_id: int, tile: np.ndarray) -> bytes:
    h, w = tile.shape[:2]
    header = REQUEST_HEADER.pack(MAGIC, VERSION, kind, tile_id, w, h)
    return header + np.ascontiguousarray(tile, dtype=np.uint8).tobytes()


def encode_response_ok(tile_id: int, payload: bytes) -> bytes:
    return RESPONSE_HEADER.pack(MAGIC, VERSION, STATUS_OK, tile_id) + payload


def encode_response_error(tile_id: int, message: str) -> bytes:
    data = message.encode("utf-8")
    return (RESPONSE_HEADER.pack(MAGIC, VERSION, STATUS_ERROR, tile_id)
            + struct.pack(">I", len(data)) + data)


def decode_request_header(header: bytes) -> tuple[int, int, int, int]:
    """Returns (kind, tile_id, width, height); raises ValueError on bad frames."""
    magic, version, kind, tile_id, width, height = REQUEST_HEADER.unpack(header)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if kind not in (KIND_SEGMENT, KIND_CLEAN):
        raise ValueError(f"unknown request kind {kind}")
    if width == 0 or height == 0:
        raise ValueError("empty tile dimensions")
    return kind, tile_id, width, height


class _PipeReader:
    """Reads exact byte counts from a subprocess stdout with a deadline."""

    def __init__(self, pipe) -> None:
        self._pipe = pipe
        self._buf = bytearray()

    def read_exact(self, n: int, deadline: float) -> bytes:
        fd = self._pipe.fileno()
        while len(self._buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SidecarFailure(f"timed out waiting for {n} bytes from sidecar")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise SidecarFailure(f"timed out waiting for {n} bytes from sidecar")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise SidecarFailure("sidecar closed its output stream")
            self._buf.extend(chunk)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out


class SidecarProcess:
    """One sidecar subprocess with serialized request/response exchange."""

    def __init__(self, cmd: list[str], timeout: float = DEFAULT_TIMEOUT) -> None:
        self.cmd = cmd
        self.timeout = timeout
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._reader: _PipeReader | None = None

    def _ensure_alive(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise SidecarFailure(f"cannot launch sidecar {self.cmd!r}: {exc}") from exc
        self._reader = _PipeReader(self._proc.stdout)

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:
                pass
        self._proc = None
        self._reader = None

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                    self._proc.wait(timeout=5)
                except Exception:
                    self._kill()
            self._proc = None
            self._reader = None

    def request(self, kind: int, tile_id: int, tile: np.ndarray) -> bytes:
        """Round-trip one frame; returns the raw OK payload."""
        h, w = tile.shape[:2]
        expect = w * h if kind == KIND_SEGMENT else w * h * 3
        with self._lock:
            self._ensure_alive()
            deadline = time.monotonic() + self.timeout
            try:
                self._proc.stdin.write(encode_request(kind, tile_id, tile))
                self._proc.stdin.flush()
                header = self._reader.read_exact(RESPONSE_HEADER.size, deadline)
                magic, version, status, resp_id = RESPONSE_HEADER.unpack(header)
                if magic != MAGIC or version != VERSION:
                    raise SidecarFailure("malformed response frame from sidecar")
                if status == STATUS_ERROR:
                    (length,) = struct.unpack(">I", self._reader.read_exact(4, deadline))
                    message = self._reader.read_exact(length, deadline).decode(
                        "utf-8", errors="replace"
                    )
                    raise SidecarFailure(f"sidecar error for tile {tile_id}: {message}")
                if status != STATUS_OK:
                    raise SidecarFailure(f"unknown response status {status}")
                if resp_id != tile_id:
                    raise SidecarFailure(
                        f"tile_id mismatch: sent {tile_id}, got {resp_id}"
                    )
                return self._reader.read_exact(expect, deadline)
            except SidecarFailure:
                # leave no half-read stream behind
                self._kill()
                raise
            except (BrokenPipeError, OSError) as exc:
                self._kill()
                raise SidecarFailure(f"sidecar pipe failure: {exc}") from exc


class SidecarPool:
    """Fixed pool of sidecar processes; requests are spread round-robin."""

    def __init__(self, cmd: list[str], procs: int = 1,
                 timeout: float = DEFAULT_TIMEOUT) -> None:
        if procs < 1:
            raise ValueError("need at least one sidecar process")
        self._procs = [SidecarProcess(cmd, timeout) for _ in range(procs)]
        self._counter = 0
        self._lock = threading.Lock()

    def _next(self) -> SidecarProcess:
        with self._lock:
            proc = self._procs[self._counter % len(self._procs)]
            self._counter += 1
            return proc

    def segment(self, tile: np.ndarray, tile_id: int) -> np.ndarray:
        payload = self._next().request(KIND_SEGMENT, tile_id, tile)
        h, w = tile.shape[:2]
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()

    def clean(self, tile: np.ndarray, tile_id: int) -> np.ndarray:
        payload = self._next().request(KIND_CLEAN, tile_id, tile)
        h, w = tile.shape[:2]
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()

    def close(self) -> None:
        for proc in self._procs:
            proc.close()

    def __enter__(self) -> "SidecarPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
