"""Wire-protocol server loop.

Line-delimited JSON, one request in flight: the client opens with a
hello, the bridge answers with its own (reporting the model's
vocabulary size), then denoise requests are answered with raw logits
rows in ``mask_positions`` order. Malformed requests get an error reply
and the loop continues; a model failure gets an error reply and a clean
shutdown. Floats go out with 17 significant digits so the engine
recovers them exactly.
"""

from __future__ import annotations

import json
import math
import socket
import sys
from dataclasses import dataclass

PROTOCOL_VERSION = 1


@dataclass
class BridgeConfig:
    model_id: str
    device: str = "cpu"
    vocab_size: int = 0          # filled from the model at serve time
    mask_token_id: int | None = None
    max_length: int = 4096


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite logit")
    return format(float(x), ".17g")


def _dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(
            f"{json.dumps(str(k))}:{_dumps(v)}" for k, v in obj.items()
        ) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class _Stream:
    """Line transport over stdio or a connected socket."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    def recv_line(self) -> str | None:
        line = self.reader.readline()
        if line == "":
            return None
        return line.rstrip("\n")

    def send(self, obj) -> None:
        self.writer.write(_dumps(obj) + "\n")
        self.writer.flush()


def stdio_stream() -> _Stream:
    return _Stream(sys.stdin, sys.stdout)


def tcp_stream(port: int, host: str = "127.0.0.1") -> _Stream:
    """Listen, accept a single connection, and serve it until EOF."""
    listener = socket.create_server((host, port))
    conn, _ = listener.accept()
    listener.close()
    return _Stream(
        conn.makefile("r", encoding="utf-8", newline="\n"),
        conn.makefile("w", encoding="utf-8", newline="\n"),
    )


def _validate_denoise(req: dict, vocab_size: int, max_length: int) -> str | None:
    tokens = req.get("tokens")
    positions = req.get("mask_positions")
    if not isinstance(tokens, list) or not tokens:
        return "denoise request needs a nonempty tokens list"
    if len(tokens) > max_length:
        return f"sequence length {len(tokens)} exceeds max length {max_length}"
    if not isinstance(positions, list) or not positions:
        return "denoise request needs a nonempty mask_positions list"
    for t in tokens:
        if t is not None and (not isinstance(t, int) or not 0 <= t < vocab_size):
            return f"token {t!r} outside vocabulary of size {vocab_size}"
    for p in positions:
        if not isinstance(p, int) or not 0 <= p < len(tokens):
            return f"mask position {p!r} out of range"
        if tokens[p] is not None:
            return f"mask position {p} is not masked in tokens"
    return None


def serve(config: BridgeConfig, stream: _Stream, model=None) -> None:
    """Handshake, then answer denoise requests until the peer closes."""
    if model is None:
        from .models import load_model

        model = load_model(
            config.model_id,
            device=config.device,
            mask_token_id=config.mask_token_id,
            max_length=config.max_length,
        )
    config.vocab_size = model.vocab_size

    first = stream.recv_line()
    if first is None:
        return
    try:
        hello = json.loads(first)
    except json.JSONDecodeError:
        stream.send({"type": "error", "message": "handshake line is not valid JSON"})
        return
    if hello.get("type") != "hello" or hello.get("protocol") != PROTOCOL_VERSION:
        stream.send({
            "type": "error",
            "message": f"expected hello with protocol {PROTOCOL_VERSION}",
        })
        return
    stream.send({"type": "hello", "protocol": PROTOCOL_VERSION,
                 "vocab_size": model.vocab_size})

    while True:
        line = stream.recv_line()
        if line is None:
            return
        if not line.strip():
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            stream.send({"type": "error", "message": "request is not valid JSON"})
            continue
        if not isinstance(req, dict) or req.get("type") != "denoise":
            got = req.get("type") if isinstance(req, dict) else type(req).__name__
            stream.send({"type": "error", "message": f"unknown request type {got!r}"})
            continue
        problem = _validate_denoise(req, model.vocab_size, model.max_length)
        if problem is not None:
            stream.send({"type": "error", "message": problem})
            continue
        try:
            rows = model.logits(req["tokens"], req["mask_positions"])
        except Exception as exc:  # model failure: report, then shut down
            stream.send({"type": "error", "message": f"model failure: {exc}"})
            return
        stream.send({"type": "logits", "rows": rows})
