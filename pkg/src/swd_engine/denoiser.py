"""Denoiser implementations: exact Markov oracle, perturbation wrapper,
and the wire-protocol client for external neural models.

A denoiser is any callable ``state -> ProbTable`` with a ``vocab_size``
attribute; it returns one distribution over clean tokens for every
currently masked position.
"""

from __future__ import annotations

import json
import math
import shlex
import socket
import subprocess
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .core import (
    MASK,
    InvalidArgumentError,
    ProbTable,
    SequenceState,
    TransportError,
    splitmix64,
)

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class MarkovModel:
    """Order-1 Markov chain over a vocabulary of size K.

    Serves as the ground-truth joint: exact conditionals and mutual
    informations stay tractable while positions remain genuinely
    dependent. All entries must be strictly positive so every
    conditional is well-defined.
    """

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self) -> None:
        initial = np.asarray(self.initial, dtype=np.float64)
        transition = np.asarray(self.transition, dtype=np.float64)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        K = initial.shape[0]
        if transition.shape != (K, K):
            raise InvalidArgumentError("transition must be K x K")
        if abs(float(initial.sum()) - 1.0) > 1e-12:
            raise InvalidArgumentError("initial distribution must sum to 1")
        if np.any(np.abs(transition.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidArgumentError("every transition row must sum to 1")
        if np.any(initial <= 0) or np.any(transition <= 0):
            raise InvalidArgumentError("model entries must be strictly positive")

    @property
    def K(self) -> int:
        return self.initial.shape[0]

    def powers(self, n: int) -> list[np.ndarray]:
        """[A^0, A^1, ..., A^n]; recomputed per call, cheap for small K."""
        out = [np.eye(self.K)]
        for _ in range(n):
            out.append(out[-1] @ self.transition)
        return out

    def log_likelihood(self, tokens) -> float:
        """Exact log-probability of a full sequence under the chain."""
        toks = list(tokens)
        ll = math.log(float(self.initial[toks[0]]))
        for a, b in zip(toks, toks[1:]):
            ll += math.log(float(self.transition[a, b]))
        return ll

    def sample(self, rng: np.random.Generator, length: int) -> list[int]:
        seq = [int(rng.choice(self.K, p=self.initial))]
        for _ in range(length - 1):
            seq.append(int(rng.choice(self.K, p=self.transition[seq[-1]])))
        return seq

    @classmethod
    def random(cls, K: int, seed: int, concentration: float = 1.0,
               floor: float = 1e-3) -> "MarkovModel":
        """Seeded random model with strictly positive entries."""
        rng = np.random.default_rng(splitmix64(seed))
        initial = rng.dirichlet(np.full(K, concentration))
        transition = rng.dirichlet(np.full(K, concentration), size=K)
        initial = np.maximum(initial, floor)
        transition = np.maximum(transition, floor)
        initial /= initial.sum()
        transition /= transition.sum(axis=1, keepdims=True)
        return cls(initial=initial, transition=transition)


def exact_marginals(model: MarkovModel, state: SequenceState) -> ProbTable:
    """True conditionals P(x_0^i = . | observed tokens) for masked positions.

    Works gap by gap: conditioned on the observed tokens, an order-1
    chain makes each maximal run of masked positions independent of the
    others, and within a run the conditional at position i factorizes
    into a forward factor from the left flank (or the initial
    distribution) and a backward factor to the right flank (or nothing,
    for a masked suffix).
    """
    if not state.masked:
        raise InvalidArgumentError("state has no masked positions")
    for tok in state.tokens:
        if tok != MASK and not (0 <= tok < model.K):
            raise InvalidArgumentError(f"token {tok} outside vocabulary of size {model.K}")

    L = state.length
    powers = model.powers(L)
    rows: dict[int, np.ndarray] = {}

    masked = state.masked_sorted()
    idx = 0
    while idx < len(masked):
        # Maximal run of consecutive masked positions.
        run = [masked[idx]]
        idx += 1
        while idx < len(masked) and masked[idx] == run[-1] + 1:
            run.append(masked[idx])
            idx += 1
        left = run[0] - 1    # observed flank or -1
        right = run[-1] + 1  # observed flank or L

        for i in run:
            if left >= 0:
                fwd = powers[i - left][state.tokens[left], :]
            else:
                fwd = model.initial @ powers[i]
            if right < L:
                bwd = powers[right - i][:, state.tokens[right]]
                row = fwd * bwd
            else:
                row = fwd.copy()
            rows[i] = row / row.sum()

    return ProbTable.from_rows(rows)


class ExactMarkovDenoiser:
    """Denoiser backed by exact conditionals of a known Markov chain."""

    def __init__(self, model: MarkovModel):
        self.model = model

    @property
    def vocab_size(self) -> int:
        return self.model.K

    def __call__(self, state: SequenceState) -> ProbTable:
        return exact_marginals(self.model, state)


DecayKind = str  # "linear" | "exponential"


@dataclass(frozen=True)
class PerturbationProfile:
    """Controlled corruption of a denoiser's output for stress testing.

    Moves probability mass onto a per-position decoy token; the moved
    mass shrinks as the sequence fills in, so corrupted rows show
    transient high confidence early and converge back to the clean
    distribution. ``decoy_rule`` is called as ``rule(position, seed)``
    and may return None to leave a position untouched.
    """

    flip_strength: float = 0.8
    decay: DecayKind = "linear"
    rate: float = 1.0
    decoy_rule: Callable[[int, int], int | None] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.flip_strength < 1.0):
            raise InvalidArgumentError("flip_strength must lie in [0, 1)")
        if self.decay not in ("linear", "exponential"):
            raise InvalidArgumentError(f"unknown decay kind {self.decay!r}")
        if self.rate <= 0:
            raise InvalidArgumentError("decay rate must be positive")

    def decay_value(self, masked_fraction: float) -> float:
        """Envelope in [0,1]: 0 at fraction 0, 1 at fraction 1, monotone."""
        f = min(max(masked_fraction, 0.0), 1.0)
        if self.decay == "linear":
            return min(1.0, self.rate * f)
        return math.expm1(self.rate * f) / math.expm1(self.rate)

    def decoy_for(self, pos: int, K: int) -> int | None:
        if self.decoy_rule is not None:
            d = self.decoy_rule(pos, self.seed)
            if d is not None and not (0 <= d < K):
                raise InvalidArgumentError(f"decoy {d} outside vocabulary of size {K}")
            return d
        return splitmix64(self.seed ^ (pos + 1)) % K


def perturbed_marginals(base: ProbTable, profile: PerturbationProfile,
                        state: SequenceState) -> ProbTable:
    """Mix each masked row with a point mass on its decoy token.

    The mixed mass is ``flip_strength * decay(masked fraction)``, so the
    output contracts back to ``base`` as decoding progresses and equals
    it exactly once nothing is masked.
    """
    m = profile.flip_strength * profile.decay_value(state.masked_fraction)
    if m == 0.0:
        return base
    K = base.vocab_size
    rows: dict[int, np.ndarray] = {}
    for pos, row in base.rows.items():
        decoy = profile.decoy_for(pos, K)
        if decoy is None:
            rows[pos] = row
            continue
        mixed = (1.0 - m) * row
        mixed[decoy] += m
        rows[pos] = mixed
    return ProbTable.from_rows(rows)


class PerturbedDenoiser:
    """Wraps another denoiser and applies a PerturbationProfile on top."""

    def __init__(self, base, profile: PerturbationProfile):
        self.base = base
        self.profile = profile

    @property
    def vocab_size(self) -> int:
        return self.base.vocab_size

    def __call__(self, state: SequenceState) -> ProbTable:
        return perturbed_marginals(self.base(state), self.profile, state)


class Endpoint(Protocol):
    """Line-oriented byte stream used by the wire protocol."""

    def send_line(self, line: str) -> None: ...
    def recv_line(self) -> str: ...
    def close(self) -> None: ...


class StdioEndpoint:
    """Endpoint over a spawned subprocess's stdin/stdout."""

    def __init__(self, command: str | list[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_line(self, line: str) -> None:
        if self.proc.stdin is None:
            raise TransportError("subprocess stdin closed")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"failed to write to bridge process: {exc}") from exc

    def recv_line(self) -> str:
        if self.proc.stdout is None:
            raise TransportError("subprocess stdout closed")
        line = self.proc.stdout.readline()
        if line == "":
            raise TransportError("bridge process closed the stream (EOF)")
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class TcpEndpoint:
    """Endpoint over a TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.reader = self.sock.makefile("r", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise TransportError(f"socket write failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self.reader.readline()
        except OSError as exc:
            raise TransportError(f"socket read failed: {exc}") from exc
        if line == "":
            raise TransportError("bridge closed the connection (EOF)")
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            self.reader.close()
        finally:
            self.sock.close()


def open_endpoint(spec: str) -> Endpoint:
    """``tcp://host:port`` opens a socket; anything else spawns a command."""
    if spec.startswith("tcp://"):
        rest = spec[len("tcp://"):]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise InvalidArgumentError(f"bad tcp endpoint spec {spec!r}")
        return TcpEndpoint(host, int(port))
    return StdioEndpoint(spec)


def _parse_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TransportError(f"bridge sent invalid JSON: {line[:200]!r}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise TransportError(f"bridge message missing type: {line[:200]!r}")
    return msg


def handshake(endpoint: Endpoint, vocab_size: int | None = None) -> int:
    """Exchange hello messages; returns the agreed vocabulary size."""
    hello = {"type": "hello", "protocol": PROTOCOL_VERSION}
    if vocab_size is not None:
        hello["vocab_size"] = vocab_size
    endpoint.send_line(json.dumps(hello))
    reply = _parse_message(endpoint.recv_line())
    if reply.get("type") != "hello":
        raise TransportError(f"expected hello, got {reply.get('type')!r}")
    if reply.get("protocol") != PROTOCOL_VERSION:
        raise TransportError(
            f"protocol version mismatch: engine={PROTOCOL_VERSION} bridge={reply.get('protocol')}"
        )
    their_k = reply.get("vocab_size")
    if not isinstance(their_k, int) or their_k < 1:
        raise TransportError(f"bridge reported bad vocab_size {their_k!r}")
    if vocab_size is not None and their_k != vocab_size:
        raise TransportError(f"vocab size mismatch: engine={vocab_size} bridge={their_k}")
    return their_k


def external_marginals(endpoint: Endpoint, state: SequenceState,
                       vocab_size: int) -> ProbTable:
    """One denoise round trip: send the state, softmax the returned logits."""
    positions = state.masked_sorted()
    request = {
        "type": "denoise",
        "tokens": [None if t == MASK else t for t in state.tokens],
        "mask_positions": positions,
    }
    endpoint.send_line(json.dumps(request))
    reply = _parse_message(endpoint.recv_line())
    if reply.get("type") == "error":
        raise TransportError(f"bridge error: {reply.get('message')}")
    if reply.get("type") != "logits":
        raise TransportError(f"expected logits, got {reply.get('type')!r}")
    raw = reply.get("rows")
    if not isinstance(raw, list) or len(raw) != len(positions):
        got = len(raw) if isinstance(raw, list) else "none"
        raise TransportError(f"expected {len(positions)} logit rows, received {got}")

    rows: dict[int, np.ndarray] = {}
    for pos, entry in zip(positions, raw):
        arr = np.asarray(entry, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != vocab_size:
            raise TransportError(
                f"logit row for position {pos}: expected length {vocab_size}, "
                f"received {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise TransportError(f"non-finite logits for position {pos}")
        shifted = arr - arr.max()
        probs = np.exp(shifted)
        rows[pos] = probs / probs.sum()
    return ProbTable.from_rows(rows)


class ExternalDenoiser:
    """Denoiser backed by an external process over the wire protocol.

    Single-session: one request in flight at a time. Concurrent decode
    runs need distinct endpoints.
    """

    def __init__(self, endpoint: Endpoint, vocab_size: int | None = None):
        self.endpoint = endpoint
        self.vocab_size = handshake(endpoint, vocab_size)

    def __call__(self, state: SequenceState) -> ProbTable:
        return external_marginals(self.endpoint, state, self.vocab_size)

    def close(self) -> None:
        self.endpoint.close()
