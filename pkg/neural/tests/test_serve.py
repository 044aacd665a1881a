import json
import socket
import struct
import time

import numpy as np
import pytest
import torch

from petnet.config import ModelConfig
from petnet.model import PromptableSegmenter, save_checkpoint
from petnet.serve import ModelServer, pack_frame, read_frame, serve_model


@pytest.fixture(scope="module")
def served_model(tmp_path_factory):
    torch.manual_seed(0)
    model = PromptableSegmenter(ModelConfig())
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    save_checkpoint(path, model)
    server = serve_model(path, "127.0.0.1:0").start()
    time.sleep(0.1)
    yield server
    server.shutdown()


def _connect(address):
    host, port = address.rsplit(":", 1)
    sock = socket.create_connection((host, int(port)), timeout=10)
    sock.sendall(pack_frame({"type": "hello", "version": 1}))
    hello, _ = read_frame(sock)
    assert hello["type"] == "hello" and hello["version"] == 1
    return sock


def _segment(sock, patch, prompts, prior=None, session="s"):
    dims = patch.shape
    header = {
        "type": "segment_request",
        "version": 1,
        "dims": list(dims),
        "prompts": prompts,
        "has_prior": prior is not None,
        "session": session,
    }
    payload = np.asarray(patch, dtype="<f4").tobytes(order="F")
    if prior is not None:
        payload += np.asarray(prior, dtype="<f4").tobytes(order="F")
    sock.sendall(pack_frame(header, payload))
    reply, body = read_frame(sock)
    if reply["type"] == "error":
        raise RuntimeError(reply["message"])
    assert reply["type"] == "segment_response"
    assert tuple(reply["dims"]) == dims
    return np.frombuffer(body, dtype="<f4").reshape(dims, order="F")


class TestLoopback:
    def test_remote_equals_in_process_bitwise(self, served_model):
        rng = np.random.default_rng(0)
        patch = rng.uniform(0, 4, (32, 32, 32)).astype(np.float32)
        prior = rng.uniform(0, 1, (32, 32, 32)).astype(np.float32)
        clicks = [((16, 16, 16), True), ((2, 30, 7), False)]
        prompts = [
            {"index": list(c[0]), "polarity": "pos" if c[1] else "neg", "t": t}
            for t, c in enumerate(clicks)
        ]
        local = served_model.model.predict(patch, clicks, prior)
        sock = _connect(served_model.address)
        remote = _segment(sock, patch, prompts, prior)
        sock.close()
        assert np.array_equal(local, remote)
        assert 0.0 <= remote.min() and remote.max() <= 1.0

    def test_no_prior_request(self, served_model):
        patch = np.zeros((32, 32, 32), np.float32)
        sock = _connect(served_model.address)
        remote = _segment(sock, patch, [])
        sock.close()
        local = served_model.model.predict(patch, [], None)
        assert np.array_equal(local, remote)

    def test_sequential_requests_one_connection(self, served_model):
        sock = _connect(served_model.address)
        patch = np.ones((32, 32, 32), np.float32)
        a = _segment(sock, patch, [])
        b = _segment(sock, patch, [])
        sock.close()
        assert np.array_equal(a, b)


class TestErrors:
    def test_out_of_bounds_prompt_error_frame(self, served_model):
        sock = _connect(served_model.address)
        patch = np.zeros((32, 32, 32), np.float32)
        with pytest.raises(RuntimeError, match="outside dims"):
            _segment(sock, patch, [{"index": [40, 0, 0], "polarity": "pos", "t": 0}])
        sock.close()

    def test_payload_length_mismatch(self, served_model):
        sock = _connect(served_model.address)
        sock.sendall(
            pack_frame(
                {
                    "type": "segment_request",
                    "version": 1,
                    "dims": [32, 32, 32],
                    "prompts": [],
                    "has_prior": False,
                    "session": "",
                },
                b"\x00" * 16,
            )
        )
        reply, _ = read_frame(sock)
        assert reply["type"] == "error"
        sock.close()

    def test_version_mismatch(self, served_model):
        host, port = served_model.address.rsplit(":", 1)
        sock = socket.create_connection((host, int(port)), timeout=10)
        sock.sendall(pack_frame({"type": "hello", "version": 3}))
        reply, _ = read_frame(sock)
        assert reply["type"] == "error"
        assert "version" in reply["message"]
        sock.close()
