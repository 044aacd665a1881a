"""Serve a trained checkpoint on the segmentation wire protocol.

Frame layout (version 1): 8-byte little-endian unsigned length, UTF-8 JSON
header, one 0x0A separator, then raw little-endian float32 blocks in
x-fastest order. Request payloads carry the intensity patch plus, when
``has_prior``, the dense prior block; responses carry one probability block.
"""

from __future__ import annotations

import argparse
import json
import signal
import socket
import struct
import threading
from pathlib import Path

import numpy as np

from .model import PromptableSegmenter, load_checkpoint

PROTOCOL_VERSION = 1
_LEN = struct.Struct("<Q")


class ProtocolError(RuntimeError):
    pass


def pack_frame(header: dict, payload: bytes = b"") -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return _LEN.pack(len(head) + 1 + len(payload)) + head + b"\n" + payload


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[dict, bytes]:
    length = _LEN.unpack(recv_exact(sock, 8))[0]
    if length < 2 or length > 1 << 33:
        raise ProtocolError(f"unreasonable frame length {length}")
    blob = recv_exact(sock, length)
    sep = blob.find(b"\n")
    if sep < 0:
        raise ProtocolError("missing header separator")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON header: {exc}") from exc
    if not isinstance(header, dict) or "type" not in header:
        raise ProtocolError("header must be an object with a 'type' field")
    return header, blob[sep + 1 :]


def parse_request(header: dict, payload: bytes):
    if header.get("version") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported version {header.get('version')!r}")
    dims = tuple(int(d) for d in header.get("dims", ()))
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ProtocolError(f"bad dims {header.get('dims')!r}")
    nvox = dims[0] * dims[1] * dims[2]
    has_prior = bool(header.get("has_prior", False))
    expected = 4 * nvox * (2 if has_prior else 1)
    if len(payload) != expected:
        raise ProtocolError(f"payload {len(payload)} bytes, expected {expected}")
    patch = np.frombuffer(payload, dtype="<f4", count=nvox).reshape(dims, order="F")
    prior = None
    if has_prior:
        prior = np.frombuffer(payload, dtype="<f4", count=nvox,
                              offset=4 * nvox).reshape(dims, order="F")
    clicks = []
    for p in header.get("prompts", ()):
        idx = tuple(int(c) for c in p["index"])
        if not all(0 <= idx[a] < dims[a] for a in range(3)):
            raise ProtocolError(f"prompt {idx} outside dims {dims}")
        clicks.append((idx, p["polarity"] == "pos"))
    return patch, clicks, prior, header.get("session", "")


class ModelServer:
    """One checkpointed model served to any number of connections; requests
    within a connection are answered strictly in order."""

    def __init__(self, model: PromptableSegmenter, address: str,
                 name: str = "petnet", idle_timeout: float = 300.0):
        self.model = model
        self.name = name
        self.idle_timeout = idle_timeout
        self._stop = threading.Event()
        host, _, port = address.rpartition(":")
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host or "127.0.0.1", int(port or 7741)))
        bound = self._listener.getsockname()
        self.address = f"{bound[0]}:{bound[1]}"
        self._listener.listen(8)
        self._listener.settimeout(0.2)

    def serve_forever(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def start(self) -> "ModelServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def shutdown(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def _serve_connection(self, conn: socket.socket):
        conn.settimeout(self.idle_timeout)
        try:
            header, _ = read_frame(conn)
            if header.get("type") != "hello":
                conn.sendall(pack_frame({"type": "error", "version": PROTOCOL_VERSION,
                                         "message": "handshake required"}))
                return
            if header.get("version") != PROTOCOL_VERSION:
                conn.sendall(pack_frame({
                    "type": "error", "version": PROTOCOL_VERSION,
                    "message": f"incompatible version {header.get('version')!r}",
                }))
                return
            conn.sendall(pack_frame({
                "type": "hello", "version": PROTOCOL_VERSION, "name": self.name,
            }))
            while not self._stop.is_set():
                try:
                    header, payload = read_frame(conn)
                except (ConnectionError, socket.timeout):
                    return
                if header.get("type") != "segment_request":
                    raise ProtocolError(f"unexpected type {header.get('type')!r}")
                patch, clicks, prior, session = parse_request(header, payload)
                prob = self.model.predict(patch, clicks, prior)
                conn.sendall(pack_frame(
                    {
                        "type": "segment_response",
                        "version": PROTOCOL_VERSION,
                        "dims": list(prob.shape),
                        "session": session,
                    },
                    np.asarray(prob, dtype="<f4").tobytes(order="F"),
                ))
        except (ProtocolError, KeyError, TypeError, ValueError) as exc:
            try:
                conn.sendall(pack_frame({"type": "error",
                                         "version": PROTOCOL_VERSION,
                                         "message": str(exc)}))
            except OSError:
                pass
        finally:
            try:
                conn.close()
            except OSError:
                pass


def serve_model(checkpoint, address: str = "127.0.0.1:7741") -> ModelServer:
    model, _ = load_checkpoint(checkpoint)
    return ModelServer(model, address)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve a trained checkpoint")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--address", default="127.0.0.1:7741")
    args = parser.parse_args(argv)
    server = serve_model(args.checkpoint, args.address)

    def _stop(signum, frame):
        server.shutdown()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    print(f"serving petnet on {server.address}", flush=True)
    server.serve_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
