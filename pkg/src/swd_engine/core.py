"""Shared domain types and numeric conventions for the decoding engine.

Everything downstream (denoisers, scoring, selection, the decode loop)
builds on the types here. All probability arithmetic is 64-bit; logs are
floored at ``EPS`` so KL and entropy stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

MASK = -1
"""Sentinel token id for a masked position."""

EPS = 1e-12
"""Probability floor applied inside every logarithm."""

ScoreMetric = Literal["confidence", "margin", "neg_entropy"]
Selector = Literal["top1", "topk", "threshold", "eb_sampler", "random_schedule"]
KLDirection = Literal["forward", "reverse"]
ModulationMode = Literal["multiplicative", "additive"]
CommitMode = Literal["greedy", "sample"]

SCORE_METRICS = ("confidence", "margin", "neg_entropy")
SELECTORS = ("top1", "topk", "threshold", "eb_sampler", "random_schedule")


class InvalidArgumentError(ValueError):
    """A caller-supplied argument violates an operation's preconditions."""


class InternalError(RuntimeError):
    """An engine invariant was breached; indicates a bug, not bad input."""


class TransportError(RuntimeError):
    """The external-denoiser wire protocol failed (violation, timeout, EOF)."""


class TraceParseError(ValueError):
    """A trace file or trace record could not be parsed."""


def safe_log(x: np.ndarray | float) -> np.ndarray | float:
    """Natural log with the ``EPS`` floor applied to the argument."""
    return np.log(np.maximum(x, EPS))


def entropy(row: np.ndarray) -> float:
    """Shannon entropy in nats of a probability vector (EPS-floored log)."""
    row = np.asarray(row, dtype=np.float64)
    return float(-np.sum(row * safe_log(row)))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats, floored logs, clamped at 0 against float noise."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    val = float(np.sum(p * (safe_log(p) - safe_log(q))))
    return max(0.0, val)


_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; the engine's only seed-derivation primitive."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(base: int, index: int) -> int:
    """Per-trial / per-step seed: splitmix64 of (base XOR index)."""
    return splitmix64((base ^ index) & _MASK64)


@dataclass(frozen=True)
class SequenceState:
    """A partially decoded sequence: token buffer plus masked-index set.

    ``tokens[i]`` is ``MASK`` iff ``i`` is in ``masked``. ``step`` counts
    down toward 0, one decrement per denoiser call. Commits never re-mask.
    """

    tokens: tuple[int, ...]
    masked: frozenset[int]
    step: int

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def masked_fraction(self) -> float:
        return len(self.masked) / len(self.tokens)

    def masked_sorted(self) -> list[int]:
        return sorted(self.masked)

    def commit(self, assignments: dict[int, int]) -> "SequenceState":
        """Unmask the given positions, decrement the step counter."""
        if not assignments:
            raise InvalidArgumentError("commit requires at least one assignment")
        bad = set(assignments) - self.masked
        if bad:
            raise InvalidArgumentError(f"positions not masked: {sorted(bad)}")
        tokens = list(self.tokens)
        for pos, tok in assignments.items():
            if tok < 0:
                raise InvalidArgumentError(f"cannot commit sentinel token at {pos}")
            tokens[pos] = tok
        return SequenceState(
            tokens=tuple(tokens),
            masked=self.masked - set(assignments),
            step=self.step - 1,
        )

    def validate(self) -> None:
        """Check the mask/sentinel consistency invariant; raises on breach."""
        L = len(self.tokens)
        if not all(0 <= i < L for i in self.masked):
            raise InternalError("masked index out of range")
        for i, tok in enumerate(self.tokens):
            if (tok == MASK) != (i in self.masked):
                raise InternalError(f"mask/sentinel mismatch at position {i}")


def new_fully_masked(length: int) -> SequenceState:
    """Fresh state with every position masked and step = length."""
    if length < 1:
        raise InvalidArgumentError("length must be >= 1")
    return SequenceState(
        tokens=(MASK,) * length,
        masked=frozenset(range(length)),
        step=length,
    )


def state_from_tokens(tokens: list[int | None], step: int | None = None) -> SequenceState:
    """Build a state from a token list where None (or MASK) marks masks."""
    buf = tuple(MASK if t is None or t == MASK else int(t) for t in tokens)
    masked = frozenset(i for i, t in enumerate(buf) if t == MASK)
    if step is None:
        step = len(buf)
    state = SequenceState(tokens=buf, masked=masked, step=step)
    state.validate()
    return state


ROW_SUM_RTOL = 1e-6
"""Maximum deviation of an input row sum from 1 before rejection."""


@dataclass(frozen=True)
class ProbTable:
    """Per-position categorical distributions over the vocabulary.

    Holds one row per masked position. Rows are renormalized on
    construction; inputs whose sum strays more than 1e-6 from 1 are
    rejected rather than silently fixed.
    """

    rows: dict[int, np.ndarray]

    @classmethod
    def from_rows(cls, rows: dict[int, np.ndarray]) -> "ProbTable":
        clean: dict[int, np.ndarray] = {}
        for pos, row in rows.items():
            arr = np.asarray(row, dtype=np.float64)
            if arr.ndim != 1:
                raise InvalidArgumentError(f"row for position {pos} is not 1-D")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"row for position {pos} has invalid entries")
            total = float(arr.sum())
            if abs(total - 1.0) > ROW_SUM_RTOL:
                raise InvalidArgumentError(
                    f"row for position {pos} sums to {total}, deviation exceeds {ROW_SUM_RTOL}"
                )
            clean[pos] = arr / total
        return cls(rows=clean)

    @property
    def positions(self) -> list[int]:
        return sorted(self.rows)

    @property
    def vocab_size(self) -> int:
        if not self.rows:
            raise InternalError("empty ProbTable has no vocabulary size")
        return len(next(iter(self.rows.values())))

    def row(self, pos: int) -> np.ndarray:
        return self.rows[pos]

    def validate(self) -> None:
        for pos, row in self.rows.items():
            if abs(float(row.sum()) - 1.0) > 1e-9:
                raise InternalError(f"row {pos} sum drifted: {row.sum()}")
            if np.any(row < 0):
                raise InternalError(f"row {pos} has negative mass")


@dataclass(frozen=True)
class MaskSchedule:
    """Mask-proportion schedule alpha_0 .. alpha_T, strictly increasing 0 to 1."""

    alphas: tuple[float, ...]

    def __post_init__(self) -> None:
        a = self.alphas
        if len(a) < 2 or a[0] != 0.0 or a[-1] != 1.0:
            raise InvalidArgumentError("schedule must run from alpha_0=0 to alpha_T=1")
        if any(a[i] >= a[i + 1] for i in range(len(a) - 1)):
            raise InvalidArgumentError("schedule must be strictly increasing")

    @classmethod
    def linear(cls, steps: int) -> "MaskSchedule":
        if steps < 1:
            raise InvalidArgumentError("schedule needs at least one step")
        return cls(alphas=tuple(t / steps for t in range(steps + 1)))

    @property
    def num_steps(self) -> int:
        return len(self.alphas) - 1

    def unmask_probability(self, t: int) -> float:
        """P(a masked position unmasks) at step t: (a_t - a_{t-1}) / a_t."""
        if not (1 <= t <= self.num_steps):
            raise InvalidArgumentError(f"step {t} outside schedule range 1..{self.num_steps}")
        return (self.alphas[t] - self.alphas[t - 1]) / self.alphas[t]


@dataclass(frozen=True)
class DecodePolicy:
    """Configuration bundle for one decode run.

    ``block_size=None`` means full-sequence decoding. ``lam`` is the
    stability penalty strength; 0 disables modulation entirely.
    """

    score_metric: ScoreMetric = "confidence"
    selector: Selector = "top1"
    lam: float = 0.0
    gamma: float = 0.1
    tau: float = 0.9
    k: int = 1
    block_size: int | None = None
    kl_direction: KLDirection = "reverse"
    modulation_mode: ModulationMode = "multiplicative"
    commit_mode: CommitMode = "greedy"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.score_metric not in SCORE_METRICS:
            raise InvalidArgumentError(f"unknown score metric {self.score_metric!r}")
        if self.selector not in SELECTORS:
            raise InvalidArgumentError(f"unknown selector {self.selector!r}")
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be >= 0")
        if self.gamma < 0:
            raise InvalidArgumentError("gamma must be >= 0")
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.block_size is not None and self.block_size < 1:
            raise InvalidArgumentError("block_size must be >= 1")
        if self.kl_direction not in ("forward", "reverse"):
            raise InvalidArgumentError(f"unknown KL direction {self.kl_direction!r}")
        if self.modulation_mode not in ("multiplicative", "additive"):
            raise InvalidArgumentError(f"unknown modulation mode {self.modulation_mode!r}")
        if self.commit_mode not in ("greedy", "sample"):
            raise InvalidArgumentError(f"unknown commit mode {self.commit_mode!r}")
        if self.score_metric == "neg_entropy" and self.modulation_mode == "multiplicative":
            # Multiplying a negative score by exp(-lam*D) < 1 would raise it
            # and invert the ranking; additive mode is mandatory here.
            raise InvalidArgumentError("neg_entropy requires additive modulation")

    def with_(self, **kwargs) -> "DecodePolicy":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {
            "score_metric": self.score_metric,
            "selector": self.selector,
            "lambda": self.lam,
            "gamma": self.gamma,
            "tau": self.tau,
            "k": self.k,
            "block_size": self.block_size,
            "kl_direction": self.kl_direction,
            "modulation_mode": self.modulation_mode,
            "commit_mode": self.commit_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecodePolicy":
        return cls(
            score_metric=d["score_metric"],
            selector=d["selector"],
            lam=float(d["lambda"]),
            gamma=float(d["gamma"]),
            tau=float(d["tau"]),
            k=int(d["k"]),
            block_size=None if d["block_size"] is None else int(d["block_size"]),
            kl_direction=d["kl_direction"],
            modulation_mode=d["modulation_mode"],
            commit_mode=d["commit_mode"],
            seed=int(d["seed"]),
        )


@dataclass
class StepRecord:
    """One decode step: what the denoiser said and what the loop did with it.

    Probabilities are retained so a trace can be replayed and audited
    without the denoiser.
    """

    step: int
    probs: dict[int, np.ndarray]
    scores: dict[int, float]
    kl: dict[int, float]
    selected: list[int]
    committed: dict[int, int]
    commit_marginals: dict[int, float]
    commit_joint: float
    nfe_so_far: int


@dataclass
class DecodeTrace:
    """Full per-step record of a decode run plus NFE accounting."""

    policy: DecodePolicy
    length: int
    vocab_size: int
    initial_tokens: tuple[int, ...]
    steps: list[StepRecord] = field(default_factory=list)
    final_tokens: tuple[int, ...] | None = None

    @property
    def nfe_total(self) -> int:
        return len(self.steps)

    def selected_union(self) -> list[int]:
        out: list[int] = []
        for rec in self.steps:
            out.extend(rec.selected)
        return out
