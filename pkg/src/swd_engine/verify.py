"""Brute-force oracles for the information-theoretic claims.

Everything here enumerates the full joint over sequences, independently
of the dynamic-programming marginals used by the engine, so the two
code paths can check each other. Sizes are deliberately capped:
exactness over scale.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .core import (
    MASK,
    InvalidArgumentError,
    SequenceState,
    state_from_tokens,
)
from .denoiser import MarkovModel, exact_marginals

ENUM_CAP = 10**7
EQUALITY_TOL = 1e-10
BOUND_TOL = 1e-12


@dataclass
class JointEnumeration:
    """Exhaustive joint distribution over all K^L sequences."""

    model: MarkovModel
    L: int
    table: np.ndarray  # shape (K,) * L

    @property
    def K(self) -> int:
        return self.model.K

    def condition(self, assignment: dict[int, int]) -> np.ndarray:
        """Joint over the free positions given observed values, normalized.

        The result keeps one axis per free position, ordered by position
        index. Raises if the assignment has zero probability.
        """
        idx: list[object] = [slice(None)] * self.L
        for pos, val in assignment.items():
            if not (0 <= pos < self.L) or not (0 <= val < self.K):
                raise InvalidArgumentError(f"bad assignment {pos}={val}")
            idx[pos] = val
        sub = self.table[tuple(idx)]
        total = float(sub.sum())
        if total <= 0.0:
            raise InvalidArgumentError("conditioning event has zero probability")
        return sub / total


def enumerate_joint(model: MarkovModel, L: int) -> JointEnumeration:
    """Exact joint probabilities of every length-L sequence."""
    if L < 1:
        raise InvalidArgumentError("L must be >= 1")
    if model.K**L > ENUM_CAP:
        raise InvalidArgumentError(f"K^L = {model.K**L} exceeds enumeration cap {ENUM_CAP}")
    table = model.initial.copy()
    for _ in range(L - 1):
        table = table[..., None] * model.transition
    return JointEnumeration(model=model, L=L, table=table)


def _marginal(cond: np.ndarray, free_positions: list[int], keep: list[int]) -> np.ndarray:
    """Marginalize the conditional joint onto ``keep`` (subset of free)."""
    drop = tuple(i for i, pos in enumerate(free_positions) if pos not in keep)
    out = cond.sum(axis=drop) if drop else cond
    # Axes arrive ordered by position; reorder to match ``keep``'s order.
    kept_sorted = [p for p in free_positions if p in keep]
    perm = [kept_sorted.index(p) for p in keep]
    return np.transpose(out, perm) if perm != list(range(len(keep))) else out


def conditional_mi(joint: JointEnumeration, target: int, reveal_from,
                   given: dict[int, int] | None = None) -> float:
    """I(x^target ; x^reveal | observed context), in nats, by summation.

    ``reveal_from`` is the set of positions whose ground-truth values are
    revealed; ``given`` maps already-observed positions to values. The
    target may itself belong to the reveal set (the MI then degenerates
    to the target's conditional entropy), which the summation handles
    without special casing.
    """
    given = dict(given or {})
    reveal = sorted(set(reveal_from))
    if target in given or any(r in given for r in reveal):
        raise InvalidArgumentError("reveal/target positions overlap the given context")
    if not reveal:
        return 0.0

    free = [p for p in range(joint.L) if p not in given]
    cond = joint.condition(given)
    union = sorted(set(reveal) | {target})
    p_union = _marginal(cond, free, union)
    p_t = _marginal(cond, free, [target])
    p_r = _marginal(cond, free, reveal)

    t_axis = union.index(target)
    r_axes = [union.index(r) for r in reveal]
    total = 0.0
    for idx in np.ndindex(p_union.shape):
        p = float(p_union[idx])
        if p <= 0.0:
            continue
        pt = float(p_t[idx[t_axis]])
        pr = float(p_r[tuple(idx[a] for a in r_axes)])
        total += p * (math.log(p) - math.log(pt) - math.log(pr))
    return total


def _observed_assignment(state: SequenceState) -> dict[int, int]:
    return {
        i: tok for i, tok in enumerate(state.tokens) if i not in state.masked
    }


def _reveal_weights(joint: JointEnumeration, obs: dict[int, int],
                    reveal: list[int]) -> np.ndarray:
    free = [p for p in range(joint.L) if p not in obs]
    cond = joint.condition(obs)
    return _marginal(cond, free, reveal)


@dataclass
class Lemma1Report:
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def check_lemma1(model: MarkovModel, state_prev: SequenceState, reveal_set,
                 target: int) -> Lemma1Report:
    """Expected forward KL over one context refinement vs conditional MI.

    lhs averages, over all realizations of the revealed positions,
    KL(p(x^target | refined context) || p(x^target | previous context)),
    with both conditionals produced by the engine's dynamic-programming
    marginals; rhs is the conditional mutual information computed purely
    from the enumeration. The two quantities agree analytically, so the
    gap measures implementation error.
    """
    reveal = sorted(set(reveal_set))
    if any(r not in state_prev.masked for r in reveal):
        raise InvalidArgumentError("reveal set must be masked in the previous state")
    if target not in state_prev.masked:
        raise InvalidArgumentError("target must be masked in the previous state")
    if target in reveal:
        raise InvalidArgumentError("target cannot be part of the reveal set")

    obs = _observed_assignment(state_prev)
    joint = enumerate_joint(model, state_prev.length)
    rhs = conditional_mi(joint, target, reveal, obs)
    if not reveal:
        return Lemma1Report(lhs=0.0, rhs=rhs)

    weights = _reveal_weights(joint, obs, reveal)
    prev_row = exact_marginals(model, state_prev).rows[target]

    lhs = 0.0
    for values in itertools.product(range(model.K), repeat=len(reveal)):
        w = float(weights[values])
        if w <= 0.0:
            continue
        refined = list(state_prev.tokens)
        for pos, val in zip(reveal, values):
            refined[pos] = val
        refined_state = state_from_tokens(
            [None if t == MASK else t for t in refined], step=state_prev.step - 1
        )
        cur_row = exact_marginals(model, refined_state).rows[target]
        lhs += w * float(np.sum(cur_row * (np.log(cur_row) - np.log(prev_row))))
    return Lemma1Report(lhs=lhs, rhs=rhs)


@dataclass
class Theorem1Report:
    mi_total: float
    expected_kl: float
    residual: float
    reverse_kl: float

    @property
    def slack(self) -> float:
        return self.mi_total - self.expected_kl

    @property
    def identity_gap(self) -> float:
        return abs(self.mi_total - (self.expected_kl + self.residual))

    @property
    def reverse_exceeds_bound(self) -> bool:
        return self.reverse_kl > self.mi_total + EQUALITY_TOL


def check_theorem1(model: MarkovModel, state_prev: SequenceState, reveal_set,
                   target: int) -> Theorem1Report:
    """Sensitivity-dependency bound plus its chain-rule decomposition.

    mi_total is the target's mutual information with the ground truths of
    every position masked in the previous state (the target included,
    per the bound's statement); expected_kl is the Lemma 1 left side;
    residual is the dependency remaining after the refinement. The chain
    rule forces mi_total = expected_kl + residual, and non-negativity of
    the residual gives the bound. The reverse-direction KL is reported
    alongside for comparison; no inequality is asserted for it.
    """
    reveal = sorted(set(reveal_set))
    if target not in state_prev.masked or target in reveal:
        raise InvalidArgumentError("target must be masked and outside the reveal set")

    obs = _observed_assignment(state_prev)
    joint = enumerate_joint(model, state_prev.length)
    masked_prev = state_prev.masked_sorted()
    remaining = [p for p in masked_prev if p not in reveal]

    mi_total = conditional_mi(joint, target, masked_prev, obs)
    lemma = check_lemma1(model, state_prev, reveal, target)

    residual = 0.0
    reverse_kl = 0.0
    if reveal:
        weights = _reveal_weights(joint, obs, reveal)
        prev_row = exact_marginals(model, state_prev).rows[target]
        for values in itertools.product(range(model.K), repeat=len(reveal)):
            w = float(weights[values])
            if w <= 0.0:
                continue
            refined_obs = dict(obs)
            for pos, val in zip(reveal, values):
                refined_obs[pos] = val
            residual += w * conditional_mi(joint, target, remaining, refined_obs)
            refined = list(state_prev.tokens)
            for pos, val in zip(reveal, values):
                refined[pos] = val
            refined_state = state_from_tokens(
                [None if t == MASK else t for t in refined], step=state_prev.step - 1
            )
            cur_row = exact_marginals(model, refined_state).rows[target]
            reverse_kl += w * float(
                np.sum(prev_row * (np.log(prev_row) - np.log(cur_row)))
            )
    else:
        residual = conditional_mi(joint, target, remaining, obs)

    return Theorem1Report(
        mi_total=mi_total,
        expected_kl=lemma.lhs,
        residual=residual,
        reverse_kl=reverse_kl,
    )


# --- randomized corpus -----------------------------------------------------

CORPUS_STATE_CAP = 4096


@dataclass
class CorpusRecord:
    config: dict
    lhs: float
    rhs: float
    gap: float
    slack: float
    identity_gap: float
    oracle_gap: float
    reverse_kl: float
    mi_total: float
    reverse_exceeds_bound: bool

    def to_json(self) -> str:
        return jsonio.dumps(
            {
                "config": self.config,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "gap": self.gap,
                "slack": self.slack,
                "identity_gap": self.identity_gap,
                "oracle_gap": self.oracle_gap,
                "reverse_kl": self.reverse_kl,
                "mi_total": self.mi_total,
                "reverse_exceeds_bound": self.reverse_exceeds_bound,
            }
        )


@dataclass
class CorpusResult:
    records: list[CorpusRecord] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def max_gap(self) -> float:
        return max(r.gap for r in self.records)

    @property
    def min_slack(self) -> float:
        return min(r.slack for r in self.records)

    @property
    def max_identity_gap(self) -> float:
        return max(r.identity_gap for r in self.records)

    @property
    def max_oracle_gap(self) -> float:
        return max(r.oracle_gap for r in self.records)

    def all_within_tolerance(self) -> bool:
        return (
            self.max_gap <= EQUALITY_TOL
            and self.min_slack >= -BOUND_TOL
            and self.max_identity_gap <= EQUALITY_TOL
            and self.max_oracle_gap <= EQUALITY_TOL
        )


def _oracle_gap(model: MarkovModel, joint: JointEnumeration,
                state: SequenceState) -> float:
    """Max per-entry gap between DP marginals and enumeration conditionals."""
    obs = _observed_assignment(state)
    free = [p for p in range(state.length) if p not in obs]
    cond = joint.condition(obs)
    dp = exact_marginals(model, state)
    worst = 0.0
    for pos in state.masked_sorted():
        brute = _marginal(cond, free, [pos])
        worst = max(worst, float(np.max(np.abs(brute - dp.rows[pos]))))
    return worst


def run_verification_corpus(num_configs: int = 200, seed: int = 2024,
                            max_K: int = 4, max_L: int = 6) -> CorpusResult:
    """Randomized Lemma 1 / Theorem 1 / oracle-equivalence sweep.

    Each configuration draws a strictly positive model, a ground-truth
    sequence, a masking pattern, a reveal set, and a target, then checks
    every claim on it. K^L stays at or below CORPUS_STATE_CAP.
    """
    rng = np.random.default_rng(seed)
    result = CorpusResult()
    start = time.perf_counter()

    for n in range(num_configs):
        K = int(rng.integers(2, max_K + 1))
        max_len = max_L
        while K**max_len > CORPUS_STATE_CAP:
            max_len -= 1
        L = int(rng.integers(2, max_len + 1))
        model = MarkovModel.random(
            K, seed=int(rng.integers(2**63)),
            concentration=float(rng.uniform(0.3, 3.0)),
        )
        truth = model.sample(rng, L)

        n_masked = int(rng.integers(1, L + 1))
        masked = sorted(rng.choice(L, size=n_masked, replace=False).tolist())
        tokens = [None if i in masked else truth[i] for i in range(L)]
        state = state_from_tokens(tokens, step=len(masked))

        target = int(masked[int(rng.integers(len(masked)))])
        others = [p for p in masked if p != target]
        reveal_size = int(rng.integers(0, len(others) + 1)) if others else 0
        reveal = sorted(
            rng.choice(others, size=reveal_size, replace=False).tolist()
        ) if reveal_size else []

        joint = enumerate_joint(model, L)
        lemma = check_lemma1(model, state, reveal, target)
        theorem = check_theorem1(model, state, reveal, target)
        oracle_gap = _oracle_gap(model, joint, state)

        result.records.append(
            CorpusRecord(
                config={
                    "index": n,
                    "K": K,
                    "L": L,
                    "masked": masked,
                    "reveal": [int(r) for r in reveal],
                    "target": target,
                },
                lhs=lemma.lhs,
                rhs=lemma.rhs,
                gap=lemma.gap,
                slack=theorem.slack,
                identity_gap=theorem.identity_gap,
                oracle_gap=oracle_gap,
                reverse_kl=theorem.reverse_kl,
                mi_total=theorem.mi_total,
                reverse_exceeds_bound=theorem.reverse_exceeds_bound,
            )
        )

    result.elapsed_seconds = time.perf_counter() - start
    return result
