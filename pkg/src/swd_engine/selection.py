"""Subset-selection strategies deciding which masked positions to commit.

Every selector returns a nonempty subset of the candidate positions, so
a decode run terminates in at most L steps. Ties are always broken by
lowest position index for cross-platform reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import (
    InvalidArgumentError,
    MaskSchedule,
    ProbTable,
    SequenceState,
    entropy,
)
from .scoring import ScoreVector

SelectionReason = Literal["topk", "threshold", "eb_budget", "schedule", "fallback_top1"]


@dataclass(frozen=True)
class SelectionResult:
    """Positions chosen for commitment this step, with the rule that fired."""

    positions: tuple[int, ...]
    reason: SelectionReason

    def __post_init__(self) -> None:
        if not self.positions:
            raise InvalidArgumentError("selection must be nonempty")


def _ranked(scores: ScoreVector) -> list[int]:
    """Positions by score descending, ties by lowest index."""
    return sorted(scores.values, key=lambda p: (-scores.values[p], p))


def select_topk(scores: ScoreVector, k: int) -> SelectionResult:
    """The min(k, n) highest-scoring positions."""
    if not scores.values:
        raise InvalidArgumentError("no candidate positions to select from")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    chosen = _ranked(scores)[:k]
    return SelectionResult(positions=tuple(sorted(chosen)), reason="topk")


def select_threshold(scores: ScoreVector, tau: float) -> SelectionResult:
    """All positions scoring strictly above tau; top-1 if none do."""
    if not scores.values:
        raise InvalidArgumentError("no candidate positions to select from")
    chosen = [p for p, v in scores.values.items() if v > tau]
    if not chosen:
        return SelectionResult(positions=(_ranked(scores)[0],), reason="fallback_top1")
    return SelectionResult(positions=tuple(sorted(chosen)), reason="threshold")


def select_eb(scores: ScoreVector, probs: ProbTable, gamma: float) -> SelectionResult:
    """Largest score-ranked prefix within the cumulative entropy budget.

    A prefix S is admissible while sum_{i in S} H(p_i) - max_{j in S}
    H(p_j) <= gamma, with H taken from the current distributions
    regardless of which metric produced the ranking. The left-hand side
    is nondecreasing along the prefix, so greedy extension finds the
    largest admissible prefix; the first-ranked position is always
    admitted (its left-hand side is 0).
    """
    if gamma < 0:
        raise InvalidArgumentError("gamma must be >= 0")
    if not scores.values:
        raise InvalidArgumentError("no candidate positions to select from")
    missing = set(scores.values) - set(probs.rows)
    if missing:
        raise InvalidArgumentError(f"probabilities missing for positions {sorted(missing)}")

    chosen: list[int] = []
    ent_sum = 0.0
    ent_max = 0.0
    for pos in _ranked(scores):
        h = entropy(probs.rows[pos])
        new_sum = ent_sum + h
        new_max = max(ent_max, h)
        if chosen and new_sum - new_max > gamma:
            break
        chosen.append(pos)
        ent_sum, ent_max = new_sum, new_max
    return SelectionResult(positions=tuple(sorted(chosen)), reason="eb_budget")


def select_random_schedule(state: SequenceState, schedule: MaskSchedule,
                           rng_seed: int) -> SelectionResult:
    """Independent unmasking per the schedule's reverse-step coefficient.

    Each masked position unmasks with probability
    (alpha_t - alpha_{t-1}) / alpha_t at step t; if every draw fails, one
    position is chosen by a random draw so the step still commits.
    """
    if state.step < 1:
        raise InvalidArgumentError("state.step must be >= 1 for scheduled selection")
    p = schedule.unmask_probability(state.step)
    rng = np.random.default_rng(rng_seed)
    masked = state.masked_sorted()
    draws = rng.random(len(masked))
    chosen = [pos for pos, u in zip(masked, draws) if u < p]
    if not chosen:
        pick = masked[int(rng.integers(len(masked)))]
        return SelectionResult(positions=(pick,), reason="fallback_top1")
    return SelectionResult(positions=tuple(chosen), reason="schedule")


def apply_block_constraint(scores: ScoreVector, state: SequenceState,
                           block_size: int | None) -> ScoreVector:
    """Restrict candidates to the earliest block still holding a mask.

    ``block_size=None`` means full-sequence decoding. Blocks are
    [b*block_size, (b+1)*block_size); the constraint makes decoding
    semi-autoregressive at block granularity.
    """
    if block_size is None:
        return scores
    if block_size < 1:
        raise InvalidArgumentError("block_size must be >= 1")
    first_masked = min(state.masked)
    block = first_masked // block_size
    lo, hi = block * block_size, (block + 1) * block_size
    return scores.restrict(range(lo, hi))
