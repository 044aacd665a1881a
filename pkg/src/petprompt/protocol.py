"""Framed wire protocol for out-of-process segmentation backends.

Frame layout: 8-byte little-endian unsigned length (bytes after the prefix),
then a UTF-8 JSON header object, one 0x0A separator, then the payload of raw
little-endian float32 blocks in x-fastest order. Requests carry the intensity
patch (plus the dense prior block when ``has_prior``); responses carry one
probability block. Strict request/response alternation per connection.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .backends import Backend, SegmentRequest, SegmentResponse
from .errors import (
    BackendError,
    IncompatibleVersionError,
    ProtocolError,
    TransportError,
)
from .volume import PointPrompt

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7741
DEFAULT_TIMEOUT = 10.0
_MAX_FRAME = 1 << 33  # 8 GiB; a 256^3 patch+prior pair is ~134 MB

_LEN = struct.Struct("<Q")


@dataclass(frozen=True)
class Frame:
    header: dict
    payload: bytes


def pack_frame(header: dict, payload: bytes = b"") -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return _LEN.pack(len(head) + 1 + len(payload)) + head + b"\n" + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(min(n - got, 1 << 20))
        except socket.timeout as exc:
            raise TransportError(f"read timed out after {sock.gettimeout()} s") from exc
        except OSError as exc:
            raise TransportError(f"connection failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    length = _LEN.unpack(_recv_exact(sock, 8))[0]
    if length < 2 or length > _MAX_FRAME:
        raise ProtocolError(f"unreasonable frame length {length}")
    blob = _recv_exact(sock, length)
    sep = blob.find(b"\n")
    if sep < 0:
        raise ProtocolError("frame missing header/payload separator")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "type" not in header:
        raise ProtocolError("header must be a JSON object with a 'type' field")
    return Frame(header=header, payload=blob[sep + 1 :])


def _block_bytes(block: np.ndarray) -> bytes:
    return np.asarray(block, dtype="<f4").tobytes(order="F")


def _block_from(payload: bytes, offset: int, dims) -> np.ndarray:
    nvox = dims[0] * dims[1] * dims[2]
    raw = payload[offset : offset + 4 * nvox]
    if len(raw) < 4 * nvox:
        raise ProtocolError(
            f"payload too short: need {4 * nvox} bytes at offset {offset}, "
            f"have {len(payload) - offset}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(dims, order="F")


def encode_request(request: SegmentRequest) -> bytes:
    dims = request.dims
    has_prior = request.prior is not None
    header = {
        "type": "segment_request",
        "version": PROTOCOL_VERSION,
        "dims": list(dims),
        "prompts": [
            {"index": list(p.index), "polarity": p.polarity, "t": p.iteration}
            for p in request.prompts
        ],
        "has_prior": has_prior,
        "session": request.session,
    }
    payload = _block_bytes(request.patch)
    if has_prior:
        payload += _block_bytes(request.prior)
    return pack_frame(header, payload)


def decode_request(frame: Frame) -> SegmentRequest:
    h = frame.header
    if h.get("type") != "segment_request":
        raise ProtocolError(f"expected segment_request, got {h.get('type')!r}")
    if h.get("version") != PROTOCOL_VERSION:
        raise IncompatibleVersionError(f"unsupported version {h.get('version')!r}")
    dims = tuple(int(d) for d in h.get("dims", ()))
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ProtocolError(f"bad dims {h.get('dims')!r}")
    has_prior = bool(h.get("has_prior", False))
    nvox = dims[0] * dims[1] * dims[2]
    expected = 4 * nvox * (2 if has_prior else 1)
    if len(frame.payload) != expected:
        raise ProtocolError(
            f"payload is {len(frame.payload)} bytes, expected {expected}"
        )
    patch = _block_from(frame.payload, 0, dims)
    prior = _block_from(frame.payload, 4 * nvox, dims) if has_prior else None
    try:
        prompts = tuple(
            PointPrompt(tuple(p["index"]), p["polarity"], int(p.get("t", 0)))
            for p in h.get("prompts", ())
        )
        return SegmentRequest(
            patch=patch, prompts=prompts, prior=prior, session=h.get("session", "")
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ProtocolError(f"bad request fields: {exc}") from exc


def encode_response(response: SegmentResponse, session: str = "") -> bytes:
    dims = response.prob.shape
    header = {
        "type": "segment_response",
        "version": PROTOCOL_VERSION,
        "dims": list(dims),
        "session": session,
    }
    return pack_frame(header, _block_bytes(response.prob))


def decode_response(frame: Frame, expected_dims) -> SegmentResponse:
    h = frame.header
    if h.get("type") == "error":
        raise BackendError(h.get("message", "backend error"))
    if h.get("type") != "segment_response":
        raise ProtocolError(f"expected segment_response, got {h.get('type')!r}")
    dims = tuple(int(d) for d in h.get("dims", ()))
    if dims != tuple(expected_dims):
        raise ProtocolError(f"response dims {dims} do not match request {expected_dims}")
    nvox = dims[0] * dims[1] * dims[2]
    if len(frame.payload) != 4 * nvox:
        raise ProtocolError(
            f"response payload is {len(frame.payload)} bytes, expected {4 * nvox}"
        )
    prob = _block_from(frame.payload, 0, dims)
    if not np.isfinite(prob).all():
        raise ProtocolError("response contains non-finite probabilities")
    if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
        raise ProtocolError("response probabilities outside [0,1]")
    return SegmentResponse(prob=prob)


def error_frame(message: str) -> bytes:
    return pack_frame(
        {"type": "error", "version": PROTOCOL_VERSION, "message": message}
    )


def _connect(address: str, timeout: float) -> socket.socket:
    if address.startswith("unix:"):
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        sock.connect(address[len("unix:") :])
        return sock
    host, _, port = address.rpartition(":")
    sock = socket.create_connection(
        (host or "127.0.0.1", int(port or DEFAULT_PORT)), timeout=timeout
    )
    sock.settimeout(timeout)
    return sock


class RemoteBackend:
    """Client side: speaks the wire protocol, presents the in-process
    Backend interface. One outstanding request per connection."""

    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT):
        try:
            self._sock = _connect(address, timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc
        self._lock = threading.Lock()
        self.address = address
        self.name = self._handshake()

    def _handshake(self) -> str:
        self._sock.sendall(pack_frame({"type": "hello", "version": PROTOCOL_VERSION}))
        reply = read_frame(self._sock)
        if reply.header.get("type") != "hello":
            raise ProtocolError(f"expected hello, got {reply.header.get('type')!r}")
        if reply.header.get("version") != PROTOCOL_VERSION:
            self.close()
            raise IncompatibleVersionError(
                f"backend speaks version {reply.header.get('version')!r}, "
                f"need {PROTOCOL_VERSION}"
            )
        return str(reply.header.get("name", "remote"))

    def segment(self, request: SegmentRequest) -> SegmentResponse:
        with self._lock:
            self._sock.sendall(encode_request(request))
            frame = read_frame(self._sock)
        return decode_response(frame, request.dims)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BackendServer:
    """Thread-per-connection server exposing an in-process backend on a TCP
    port or unix socket path. Within a connection requests are answered
    strictly in order; a malformed frame gets an error frame and a close."""

    def __init__(
        self,
        backend: Backend,
        address: str = f"127.0.0.1:{DEFAULT_PORT}",
        idle_timeout: float = 300.0,
    ):
        self.backend = backend
        self.idle_timeout = idle_timeout
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        if address.startswith("unix:"):
            self._listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._listener.bind(address[len("unix:") :])
            self.address = address
        else:
            host, _, port = address.rpartition(":")
            self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._listener.bind((host or "127.0.0.1", int(port or DEFAULT_PORT)))
            bound = self._listener.getsockname()
            self.address = f"{bound[0]}:{bound[1]}"
        self._listener.listen(8)
        self._listener.settimeout(0.2)

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            thread = threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def start(self) -> "BackendServer":
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        self._threads.append(thread)
        return self

    def shutdown(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.settimeout(self.idle_timeout)
        try:
            frame = read_frame(conn)
            if frame.header.get("type") != "hello":
                conn.sendall(error_frame("handshake required"))
                return
            if frame.header.get("version") != PROTOCOL_VERSION:
                conn.sendall(
                    error_frame(
                        f"incompatible version {frame.header.get('version')!r}"
                    )
                )
                return
            conn.sendall(
                pack_frame(
                    {
                        "type": "hello",
                        "version": PROTOCOL_VERSION,
                        "name": self.backend.name,
                    }
                )
            )
            while not self._stop.is_set():
                try:
                    frame = read_frame(conn)
                except TransportError:
                    return  # peer closed or went quiet
                request = decode_request(frame)
                response = self.backend.segment(request)
                conn.sendall(encode_response(response, session=request.session))
        except (ProtocolError, ValueError) as exc:
            try:
                conn.sendall(error_frame(str(exc)))
            except OSError:
                pass
        finally:
            try:
                conn.close()
            except OSError:
                pass
