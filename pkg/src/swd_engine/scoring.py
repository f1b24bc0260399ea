"""Base scoring functions and the stability modulator.

Scores rate how safe each masked position is to commit right now.
The modulator folds in temporal instability: the KL divergence between a
position's predictive distributions at consecutive decode steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EPS,
    InternalError,
    InvalidArgumentError,
    KLDirection,
    ModulationMode,
    ProbTable,
    ScoreMetric,
    entropy,
    kl_divergence,
)


@dataclass
class HistoryCache:
    """Previous-step distributions for positions that are still masked.

    Seeded with the uniform distribution at the first step, refreshed
    with the current step's rows after selection; rows for committed
    positions are dropped.
    """

    prev: dict[int, np.ndarray] = field(default_factory=dict)
    initialized_uniform: bool = False

    @classmethod
    def uniform(cls, positions, vocab_size: int) -> "HistoryCache":
        row = np.full(vocab_size, 1.0 / vocab_size)
        return cls(prev={pos: row.copy() for pos in positions}, initialized_uniform=True)

    def refresh(self, current: ProbTable, remaining_masked) -> None:
        remaining = set(remaining_masked)
        self.prev = {pos: current.rows[pos] for pos in current.rows if pos in remaining}


@dataclass
class ScoreVector:
    """Per-position scores under one metric, optionally SWD-modulated."""

    values: dict[int, float]
    metric: ScoreMetric
    modulated: bool = False

    def restrict(self, positions) -> "ScoreVector":
        keep = set(positions)
        return ScoreVector(
            values={p: v for p, v in self.values.items() if p in keep},
            metric=self.metric,
            modulated=self.modulated,
        )


def score_confidence(probs: ProbTable) -> ScoreVector:
    """Probability of the mode of each row."""
    return ScoreVector(
        values={pos: float(row.max()) for pos, row in probs.rows.items()},
        metric="confidence",
    )


def score_margin(probs: ProbTable) -> ScoreVector:
    """Gap between the two largest entries of each row."""
    if probs.vocab_size < 2:
        raise InvalidArgumentError("margin requires a vocabulary of size >= 2")
    values: dict[int, float] = {}
    for pos, row in probs.rows.items():
        top2 = np.partition(row, -2)[-2:]
        values[pos] = float(top2[1] - top2[0])
    return ScoreVector(values=values, metric="margin")


def score_neg_entropy(probs: ProbTable) -> ScoreVector:
    """Negative Shannon entropy in nats; 0 is a point mass, -ln K uniform."""
    return ScoreVector(
        values={pos: -entropy(row) for pos, row in probs.rows.items()},
        metric="neg_entropy",
    )


_SCORE_FNS = {
    "confidence": score_confidence,
    "margin": score_margin,
    "neg_entropy": score_neg_entropy,
}


def base_scores(probs: ProbTable, metric: ScoreMetric) -> ScoreVector:
    try:
        fn = _SCORE_FNS[metric]
    except KeyError:
        raise InvalidArgumentError(f"unknown score metric {metric!r}") from None
    return fn(probs)


def temporal_instability(current: ProbTable, cache: HistoryCache,
                         direction: KLDirection) -> dict[int, float]:
    """Per-position KL divergence between consecutive-step distributions.

    ``reverse`` is KL(prev || current), matching the reference decoding
    loop; ``forward`` is KL(current || prev), the direction the
    information-theoretic bound is stated in. Both are >= 0 and finite
    thanks to the EPS floor.
    """
    if direction not in ("forward", "reverse"):
        raise InvalidArgumentError(f"unknown KL direction {direction!r}")
    out: dict[int, float] = {}
    for pos, row in current.rows.items():
        prev = cache.prev.get(pos)
        if prev is None:
            raise InternalError(f"history cache missing masked position {pos}")
        if direction == "reverse":
            out[pos] = kl_divergence(prev, row)
        else:
            out[pos] = kl_divergence(row, prev)
    return out


def swd_modulate(base: ScoreVector, instability: dict[int, float], lam: float,
                 mode: ModulationMode = "multiplicative") -> ScoreVector:
    """Fold instability into the base score.

    Multiplicative: s * exp(-lam * D), the closed-form Lagrangian
    relaxation for positive utility scores. Additive: s - lam * D, which
    is the same thing in exp-score space and is the required form for
    neg_entropy (negative scores would otherwise have their ranking
    inverted).
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    if set(base.values) != set(instability):
        raise InvalidArgumentError("score and instability key sets differ")
    if mode == "multiplicative":
        if any(v < 0 for v in base.values.values()):
            raise InvalidArgumentError(
                "multiplicative modulation requires non-negative base scores"
            )
        values = {
            pos: base.values[pos] * math.exp(-lam * instability[pos])
            for pos in base.values
        }
    elif mode == "additive":
        values = {
            pos: base.values[pos] - lam * instability[pos]
            for pos in base.values
        }
    else:
        raise InvalidArgumentError(f"unknown modulation mode {mode!r}")
    return ScoreVector(values=values, metric=base.metric, modulated=True)
