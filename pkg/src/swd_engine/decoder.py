"""The decode loop: predict, score, modulate, select, commit, cache.

Also owns the trace file format (line-delimited JSON) and the post-hoc
trace auditor, which recomputes every scoring and selection decision
from the recorded probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .core import (
    MASK,
    DecodePolicy,
    DecodeTrace,
    InternalError,
    InvalidArgumentError,
    MaskSchedule,
    ProbTable,
    SequenceState,
    StepRecord,
    TraceParseError,
    TransportError,
    derive_seed,
    entropy,
)
from .scoring import HistoryCache, base_scores, swd_modulate, temporal_instability
from .selection import (
    SelectionResult,
    apply_block_constraint,
    select_eb,
    select_random_schedule,
    select_threshold,
    select_topk,
)


@dataclass
class DecodeOutcome:
    """Final tokens, the full trace, and the denoiser-call count."""

    tokens: tuple[int, ...]
    trace: DecodeTrace
    nfe: int


class DecodeAbortedError(RuntimeError):
    """Denoiser transport failure mid-run; carries the partial trace."""

    def __init__(self, message: str, partial_trace: DecodeTrace):
        super().__init__(message)
        self.partial_trace = partial_trace


def _select(scores, probs: ProbTable, state: SequenceState, policy: DecodePolicy,
            schedule: MaskSchedule | None, step_index: int) -> SelectionResult:
    if policy.selector == "top1":
        return select_topk(scores, 1)
    if policy.selector == "topk":
        return select_topk(scores, policy.k)
    if policy.selector == "threshold":
        return select_threshold(scores, policy.tau)
    if policy.selector == "eb_sampler":
        return select_eb(scores, probs, policy.gamma)
    if policy.selector == "random_schedule":
        assert schedule is not None
        return select_random_schedule(
            state, schedule, derive_seed(policy.seed, step_index)
        )
    raise InvalidArgumentError(f"unknown selector {policy.selector!r}")


def decode(denoiser, policy: DecodePolicy, initial: SequenceState, *,
           force_swd: bool | None = None) -> DecodeOutcome:
    """Run the full reverse loop until no masked positions remain.

    ``force_swd`` overrides the default "modulate only when lambda > 0"
    switch; tests use it to confirm that running the modulation path at
    lambda = 0 changes nothing.
    """
    if not initial.masked:
        raise InvalidArgumentError("initial state has no masked positions")
    initial.validate()

    K = denoiser.vocab_size
    state = initial
    cache = HistoryCache.uniform(state.masked, K)
    schedule = (
        MaskSchedule.linear(max(1, initial.step))
        if policy.selector == "random_schedule"
        else None
    )
    rng = np.random.default_rng(derive_seed(policy.seed, 0x5A11))
    trace = DecodeTrace(
        policy=policy,
        length=state.length,
        vocab_size=K,
        initial_tokens=state.tokens,
    )
    nfe = 0
    step_index = 0

    while state.masked:
        step_index += 1
        try:
            probs = denoiser(state)
        except TransportError as exc:
            raise DecodeAbortedError(
                f"denoiser failed at step {step_index}: {exc}", trace
            ) from exc
        if set(probs.rows) != state.masked:
            raise InternalError("denoiser rows do not match the masked set")
        nfe += 1

        base = base_scores(probs, policy.score_metric)
        instability = temporal_instability(probs, cache, policy.kl_direction)
        modulate = force_swd if force_swd is not None else policy.lam > 0
        scores = (
            swd_modulate(base, instability, policy.lam, policy.modulation_mode)
            if modulate
            else base
        )
        scores = apply_block_constraint(scores, state, policy.block_size)
        selection = _select(scores, probs, state, policy, schedule, step_index)

        committed: dict[int, int] = {}
        commit_marginals: dict[int, float] = {}
        for pos in selection.positions:
            row = probs.rows[pos]
            if policy.commit_mode == "greedy":
                tok = int(np.argmax(row))
            else:
                tok = int(rng.choice(K, p=row))
            committed[pos] = tok
            commit_marginals[pos] = float(row[tok])
        commit_joint = math.prod(commit_marginals.values())

        state = state.commit(committed)
        state.validate()
        cache.refresh(probs, state.masked)
        trace.steps.append(
            StepRecord(
                step=step_index,
                probs={pos: row.copy() for pos, row in probs.rows.items()},
                scores=dict(scores.values),
                kl=instability,
                selected=list(selection.positions),
                committed=committed,
                commit_marginals=commit_marginals,
                commit_joint=commit_joint,
                nfe_so_far=nfe,
            )
        )

    trace.final_tokens = state.tokens
    return DecodeOutcome(tokens=state.tokens, trace=trace, nfe=nfe)


def traces_equal(a: DecodeTrace, b: DecodeTrace) -> bool:
    """Same selected sets, committed tokens, and NFE, step for step."""
    if a.nfe_total != b.nfe_total:
        return False
    for ra, rb in zip(a.steps, b.steps):
        if ra.selected != rb.selected or ra.committed != rb.committed:
            return False
    return a.final_tokens == b.final_tokens


# --- trace serialization ---------------------------------------------------


def trace_to_lines(trace: DecodeTrace) -> list[str]:
    """Header line plus one StepRecord line per decode step."""
    header = {
        "type": "header",
        "policy": trace.policy.to_dict(),
        "L": trace.length,
        "K": trace.vocab_size,
        "initial_tokens": [None if t == MASK else t for t in trace.initial_tokens],
    }
    lines = [jsonio.dumps(header)]
    for rec in trace.steps:
        lines.append(
            jsonio.dumps(
                {
                    "type": "step",
                    "step": rec.step,
                    "probs": {str(p): list(map(float, row)) for p, row in rec.probs.items()},
                    "scores": {str(p): v for p, v in rec.scores.items()},
                    "kl": {str(p): v for p, v in rec.kl.items()},
                    "selected": rec.selected,
                    "committed": {str(p): t for p, t in rec.committed.items()},
                    "commit_marginals": {str(p): v for p, v in rec.commit_marginals.items()},
                    "commit_joint": rec.commit_joint,
                    "nfe_so_far": rec.nfe_so_far,
                }
            )
        )
    return lines


def write_trace(trace: DecodeTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in trace_to_lines(trace):
            fh.write(line + "\n")


def trace_from_lines(lines) -> DecodeTrace:
    it = iter(lines)
    try:
        header = jsonio.loads(next(it))
    except StopIteration:
        raise TraceParseError("empty trace") from None
    except ValueError as exc:
        raise TraceParseError(f"bad header line: {exc}") from exc
    if header.get("type") != "header":
        raise TraceParseError("first line is not a header record")
    try:
        policy = DecodePolicy.from_dict(header["policy"])
        length = int(header["L"])
        vocab = int(header["K"])
        initial = tuple(
            MASK if t is None else int(t) for t in header["initial_tokens"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"malformed header: {exc}") from exc

    trace = DecodeTrace(
        policy=policy, length=length, vocab_size=vocab, initial_tokens=initial
    )
    tokens = list(initial)
    for n, line in enumerate(it, start=2):
        if not line.strip():
            continue
        try:
            rec = jsonio.loads(line)
        except ValueError as exc:
            raise TraceParseError(f"line {n}: bad JSON: {exc}") from exc
        if rec.get("type") != "step":
            raise TraceParseError(f"line {n}: expected step record")
        try:
            step = StepRecord(
                step=int(rec["step"]),
                probs={int(p): np.asarray(row, dtype=np.float64)
                       for p, row in rec["probs"].items()},
                scores={int(p): float(v) for p, v in rec["scores"].items()},
                kl={int(p): float(v) for p, v in rec["kl"].items()},
                selected=[int(p) for p in rec["selected"]],
                committed={int(p): int(t) for p, t in rec["committed"].items()},
                commit_marginals={int(p): float(v)
                                  for p, v in rec["commit_marginals"].items()},
                commit_joint=float(rec["commit_joint"]),
                nfe_so_far=int(rec["nfe_so_far"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceParseError(f"line {n}: malformed step record: {exc}") from exc
        trace.steps.append(step)
        for pos, tok in step.committed.items():
            tokens[pos] = tok
    if all(t != MASK for t in tokens):
        trace.final_tokens = tuple(tokens)
    return trace


def read_trace(path: str) -> DecodeTrace:
    with open(path, "r", encoding="utf-8") as fh:
        return trace_from_lines(fh.read().splitlines())


# --- replay audit ----------------------------------------------------------

_REPLAY_RTOL = 1e-9
_BUDGET_SLOP = 1e-12


@dataclass
class Violation:
    step: int
    position: int | None
    kind: str
    detail: str


def replay_trace(trace: DecodeTrace, policy: DecodePolicy | None = None) -> list[Violation]:
    """Recompute every step's scores, modulation, selection, and budget.

    Returns the list of discrepancies; an empty list means the trace is
    self-consistent under the stated policy.
    """
    if policy is None:
        policy = trace.policy
    violations: list[Violation] = []
    cache = HistoryCache.uniform(
        [i for i, t in enumerate(trace.initial_tokens) if t == MASK],
        trace.vocab_size,
    )
    masked = {i for i, t in enumerate(trace.initial_tokens) if t == MASK}

    for rec in trace.steps:
        try:
            probs = ProbTable.from_rows(rec.probs)
        except InvalidArgumentError as exc:
            violations.append(Violation(rec.step, None, "probs", str(exc)))
            continue
        if set(rec.probs) != masked:
            violations.append(
                Violation(rec.step, None, "mask_set",
                          "recorded rows do not match the masked set")
            )

        base = base_scores(probs, policy.score_metric)
        instability = temporal_instability(probs, cache, policy.kl_direction)
        expected = (
            swd_modulate(base, instability, policy.lam, policy.modulation_mode)
            if policy.lam > 0
            else base
        )
        for pos, v in rec.kl.items():
            ref = instability.get(pos)
            if ref is None or not math.isclose(v, ref, rel_tol=_REPLAY_RTOL, abs_tol=1e-12):
                violations.append(
                    Violation(rec.step, pos, "kl", f"recorded {v}, recomputed {ref}")
                )
        for pos, v in rec.scores.items():
            ref = expected.values.get(pos)
            if ref is None or not math.isclose(v, ref, rel_tol=_REPLAY_RTOL, abs_tol=1e-12):
                violations.append(
                    Violation(rec.step, pos, "score", f"recorded {v}, recomputed {ref}")
                )

        if policy.selector == "eb_sampler":
            ents = [entropy(rec.probs[pos]) for pos in rec.selected]
            lhs = sum(ents) - max(ents)
            if lhs > policy.gamma + _BUDGET_SLOP:
                violations.append(
                    Violation(rec.step, None, "eb_budget",
                              f"sum H - max H = {lhs} exceeds gamma = {policy.gamma}")
                )

        if set(rec.committed) != set(rec.selected):
            violations.append(
                Violation(rec.step, None, "commit_set",
                          "committed positions differ from selected positions")
            )
        joint = math.prod(rec.commit_marginals.values())
        if rec.commit_joint != joint:
            violations.append(
                Violation(rec.step, None, "factorized_commit",
                          f"recorded joint {rec.commit_joint}, product {joint}")
            )
        for pos, tok in rec.committed.items():
            row = rec.probs.get(pos)
            if row is None:
                violations.append(Violation(rec.step, pos, "commit", "no recorded row"))
                continue
            marg = rec.commit_marginals.get(pos)
            if marg is None or not math.isclose(marg, float(row[tok]),
                                                rel_tol=_REPLAY_RTOL, abs_tol=1e-15):
                violations.append(
                    Violation(rec.step, pos, "commit_marginal",
                              f"recorded {marg}, row says {float(row[tok])}")
                )
            if policy.commit_mode == "greedy" and tok != int(np.argmax(row)):
                violations.append(
                    Violation(rec.step, pos, "commit",
                              f"token {tok} is not the argmax of the recorded row")
                )

        masked -= set(rec.committed)
        cache.refresh(probs, masked)

    if masked:
        violations.append(
            Violation(0, None, "coverage", f"positions never committed: {sorted(masked)}")
        )
    return violations
