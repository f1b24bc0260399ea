"""Protocol conformance against a live bridge subprocess (stub model)."""

import json
import subprocess
import sys

import pytest

BRIDGE_CMD = [sys.executable, "-m", "swd_bridge.cli", "--stdio", "--model", "stub:6"]


class BridgeProc:
    def __init__(self, cmd=None):
        self.proc = subprocess.Popen(
            cmd or BRIDGE_CMD,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_raw(self, line: str):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def send(self, obj):
        self.send_raw(json.dumps(obj))

    def recv(self):
        line = self.proc.stdout.readline()
        assert line != "", "bridge closed the stream unexpectedly"
        return json.loads(line)

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


@pytest.fixture
def bridge():
    b = BridgeProc()
    yield b
    b.close()


def shake(b: BridgeProc, vocab=6):
    b.send({"type": "hello", "protocol": 1, "vocab_size": vocab})
    reply = b.recv()
    assert reply == {"type": "hello", "protocol": 1, "vocab_size": vocab}
    return reply


class TestHandshake:
    def test_hello_echo(self, bridge):
        shake(bridge)

    def test_wrong_protocol_version_rejected(self, bridge):
        bridge.send({"type": "hello", "protocol": 99})
        reply = bridge.recv()
        assert reply["type"] == "error"
        assert "protocol" in reply["message"]


class TestDenoise:
    def test_single_masked_position_row_shape(self, bridge):
        shake(bridge)
        bridge.send({"type": "denoise", "tokens": [0, None], "mask_positions": [1]})
        reply = bridge.recv()
        assert reply["type"] == "logits"
        assert len(reply["rows"]) == 1
        assert len(reply["rows"][0]) == 6

    def test_rows_align_with_mask_positions(self, bridge):
        # Stub logits encode the queried position: min(row) == position.
        shake(bridge)
        positions = [5, 1, 3]
        tokens = [0, None, 2, None, 4, None]
        bridge.send({"type": "denoise", "tokens": tokens, "mask_positions": positions})
        reply = bridge.recv()
        assert [min(row) for row in reply["rows"]] == [float(p) for p in positions]
        assert [row.index(max(row)) for row in reply["rows"]] == [p % 6 for p in positions]

    def test_stateless_across_requests(self, bridge):
        shake(bridge)
        req = {"type": "denoise", "tokens": [None, 1], "mask_positions": [0]}
        bridge.send(req)
        first = bridge.recv()
        bridge.send(req)
        second = bridge.recv()
        assert first == second


class TestErrorHandling:
    def test_unknown_type_gets_error_and_process_survives(self, bridge):
        shake(bridge)
        bridge.send({"type": "train", "epochs": 3})
        reply = bridge.recv()
        assert reply["type"] == "error"
        assert "train" in reply["message"]
        assert bridge.alive()
        bridge.send({"type": "denoise", "tokens": [None], "mask_positions": [0]})
        assert bridge.recv()["type"] == "logits"

    def test_malformed_json_gets_error_and_process_survives(self, bridge):
        shake(bridge)
        bridge.send_raw("{this is not json")
        assert bridge.recv()["type"] == "error"
        bridge.send({"type": "denoise", "tokens": [None], "mask_positions": [0]})
        assert bridge.recv()["type"] == "logits"

    def test_out_of_range_position_rejected(self, bridge):
        shake(bridge)
        bridge.send({"type": "denoise", "tokens": [None, 0], "mask_positions": [7]})
        reply = bridge.recv()
        assert reply["type"] == "error"
        assert "out of range" in reply["message"]
        assert bridge.alive()

    def test_unmasked_position_rejected(self, bridge):
        shake(bridge)
        bridge.send({"type": "denoise", "tokens": [2, 0], "mask_positions": [0]})
        assert bridge.recv()["type"] == "error"
        assert bridge.alive()

    def test_token_outside_vocab_rejected(self, bridge):
        shake(bridge)
        bridge.send({"type": "denoise", "tokens": [None, 99], "mask_positions": [0]})
        assert bridge.recv()["type"] == "error"
        assert bridge.alive()

    def test_overlong_sequence_rejected(self):
        b = BridgeProc(BRIDGE_CMD + ["--max-length", "4"])
        try:
            shake(b)
            b.send({"type": "denoise", "tokens": [None] * 5, "mask_positions": [0]})
            reply = b.recv()
            assert reply["type"] == "error"
            assert "max length" in reply["message"]
            assert b.alive()
        finally:
            b.close()

    def test_bad_model_spec_exits_nonzero(self):
        proc = subprocess.run(
            [sys.executable, "-m", "swd_bridge.cli", "--stdio", "--model", "stub:x"],
            capture_output=True, text=True, timeout=30,
        )
        assert proc.returncode == 1
        assert "vocab size" in proc.stderr
