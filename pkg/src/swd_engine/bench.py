"""Synthetic-task benchmark harness: decode trials, metrics, and sweeps.

Quality is measured as log-likelihood under the known generating model
(the desk-scale stand-in for task accuracy), efficiency as mean NFE.
Sweeps emit CSV; identical seeds give byte-identical files.
"""

from __future__ import annotations

import io
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    DecodePolicy,
    InvalidArgumentError,
    derive_seed,
    new_fully_masked,
    splitmix64,
)
from .decoder import DecodeOutcome, decode
from .denoiser import (
    ExactMarkovDenoiser,
    MarkovModel,
    PerturbationProfile,
    PerturbedDenoiser,
)

SWEEP_AXES = ("lambda", "gamma", "tau", "k", "block_size")
_CSV_COLUMNS = (
    "axis_name",
    "axis_value",
    "mean_loglik",
    "exact_match_rate",
    "mean_nfe",
    "speedup",
    "trials",
    "seed",
)


@dataclass(frozen=True)
class SyntheticTask:
    """A decode benchmark against a known Markov generator.

    When a perturbation profile is present, each trial re-derives the
    profile seed from the task seed so trials differ while staying
    reproducible.
    """

    model: MarkovModel
    length: int
    profile: PerturbationProfile | None = None
    trials: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.length < 1:
            raise InvalidArgumentError("length must be >= 1")
        if self.trials < 1:
            raise InvalidArgumentError("trials must be >= 1")


@dataclass
class TaskMetrics:
    mean_loglik: float
    exact_match_rate: float
    mean_nfe: float
    speedup_vs_top1: float
    logliks: list[float]
    nfes: list[int]


def _trial_denoiser(task: SyntheticTask, trial: int):
    base = ExactMarkovDenoiser(task.model)
    if task.profile is None:
        return base
    profile = replace(task.profile, seed=derive_seed(task.seed, 1000 + trial))
    return PerturbedDenoiser(base, profile)


def reference_mode_sequence(model: MarkovModel, length: int) -> tuple[int, ...]:
    """Greedy top-1 confidence decode of the unperturbed exact denoiser."""
    outcome = decode(
        ExactMarkovDenoiser(model),
        DecodePolicy(score_metric="confidence", selector="top1", lam=0.0, seed=0),
        new_fully_masked(length),
    )
    return outcome.tokens


def _thread_count() -> int:
    raw = os.environ.get("SWD_ENGINE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_task(task: SyntheticTask, policy: DecodePolicy, *,
             force_swd: bool | None = None) -> TaskMetrics:
    """Decode ``task.trials`` fully masked sequences and aggregate metrics."""
    reference = reference_mode_sequence(task.model, task.length)

    def one_trial(trial: int) -> DecodeOutcome:
        trial_policy = policy.with_(seed=derive_seed(policy.seed ^ task.seed, trial))
        return decode(
            _trial_denoiser(task, trial),
            trial_policy,
            new_fully_masked(task.length),
            force_swd=force_swd,
        )

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one_trial, range(task.trials)))
    else:
        outcomes = [one_trial(t) for t in range(task.trials)]

    logliks = [task.model.log_likelihood(o.tokens) for o in outcomes]
    nfes = [o.nfe for o in outcomes]
    matches = [1.0 if o.tokens == reference else 0.0 for o in outcomes]
    mean_nfe = sum(nfes) / len(nfes)
    return TaskMetrics(
        mean_loglik=sum(logliks) / len(logliks),
        exact_match_rate=sum(matches) / len(matches),
        mean_nfe=mean_nfe,
        speedup_vs_top1=task.length / mean_nfe,
        logliks=logliks,
        nfes=nfes,
    )


@dataclass(frozen=True)
class SweepSpec:
    """A policy template plus one axis of values to sweep over."""

    policy: DecodePolicy
    axis: str
    values: tuple

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise InvalidArgumentError(f"unknown sweep axis {self.axis!r}")
        vals = tuple(self.values)
        if len(vals) != len(set(vals)):
            raise InvalidArgumentError("axis values must be distinct")
        if list(vals) != sorted(vals, key=lambda v: (v is None, v)):
            raise InvalidArgumentError("axis values must be sorted")
        object.__setattr__(self, "values", vals)

    def policy_for(self, value) -> DecodePolicy:
        field = {"lambda": "lam", "block_size": "block_size"}.get(self.axis, self.axis)
        return self.policy.with_(**{field: value})


def run_sweep(spec: SweepSpec, task: SyntheticTask) -> str:
    """One CSV data row per axis value; deterministic given the seeds."""
    buf = io.StringIO()
    buf.write(",".join(_CSV_COLUMNS) + "\n")
    for value in spec.values:
        metrics = run_task(task, spec.policy_for(value))
        row = (
            spec.axis,
            _csv_num(value),
            _csv_num(metrics.mean_loglik),
            _csv_num(metrics.exact_match_rate),
            _csv_num(metrics.mean_nfe),
            _csv_num(metrics.speedup_vs_top1),
            str(task.trials),
            str(task.seed),
        )
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_sweep_csv(spec: SweepSpec, task: SyntheticTask, path: str) -> None:
    data = run_sweep(spec, task)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)


def _csv_num(v) -> str:
    if v is None:
        return "inf"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


# --- adversarial construction ----------------------------------------------


def cyclic_chain(K: int, advance: float = 0.85) -> MarkovModel:
    """Chain that steps through the vocabulary cyclically.

    Token v is followed by (v+1) mod K with probability ``advance``; the
    initial distribution favors token 0. The mode sequence is the pure
    phase pattern 0,1,2,..., and any token that breaks phase costs a
    low-probability transition at the island boundary, so committing a
    wrong token is structurally expensive rather than merely unlikely.
    """
    if not (0.0 < advance < 1.0):
        raise InvalidArgumentError("advance must lie strictly between 0 and 1")
    off = (1.0 - advance) / (K - 1)
    transition = np.full((K, K), off)
    for v in range(K):
        transition[v, v] = off
        transition[v, (v + 1) % K] = advance
    initial = np.full(K, off)
    initial[0] = advance
    return MarkovModel(initial=initial, transition=transition)


def wrong_phase_decoy_rule(K: int):
    """Decoys that break the cyclic chain's phase on about half the positions.

    A trapped position's decoy is its phase token shifted by a nonzero
    amount, so it always disagrees with the mode sequence; the remaining
    positions stay untouched, giving every run genuinely stable
    candidates. The trap layout depends on the profile seed, so
    per-trial seeds give independent layouts.
    """

    def rule(pos: int, seed: int) -> int | None:
        h = splitmix64(seed ^ (0xD0C0 + pos))
        if h & 1:
            return None
        shift = 1 + (h >> 1) % (K - 1)
        return ((pos % K) + shift) % K

    return rule


def make_adversarial_task(length: int = 32, K: int = 4, trials: int = 200,
                          seed: int = 7) -> SyntheticTask:
    """The premature-commitment stress task.

    Roughly half the positions receive a phase-breaking decoy token with
    transiently high confidence while most of the sequence is still
    masked; the decay makes those rows visibly unstable across early
    steps, then releases them. Score-only decoding commits the decoys
    while they dominate and pays the island-boundary penalty under the
    true chain.
    """
    model = cyclic_chain(K, advance=0.85)
    profile = PerturbationProfile(
        flip_strength=0.97,
        decay="exponential",
        rate=6.0,
        decoy_rule=wrong_phase_decoy_rule(K),
        seed=seed,
    )
    return SyntheticTask(model=model, length=length, profile=profile,
                         trials=trials, seed=seed)


@dataclass
class PairedComparison:
    """Paired-trial loglik comparison between two lambda settings."""

    mean_diff: float
    stderr_diff: float

    @property
    def significant_improvement(self) -> bool:
        return self.mean_diff > 2.0 * self.stderr_diff


def compare_lambdas(task: SyntheticTask, policy: DecodePolicy, lam: float,
                    baseline_lam: float = 0.0) -> PairedComparison:
    """Per-trial loglik difference (lam vs baseline) with its standard error."""
    with_pen = run_task(task, policy.with_(lam=lam))
    without = run_task(task, policy.with_(lam=baseline_lam))
    diffs = [a - b for a, b in zip(with_pen.logliks, without.logliks)]
    mean = sum(diffs) / len(diffs)
    if len(diffs) > 1:
        stderr = statistics.stdev(diffs) / math.sqrt(len(diffs))
    else:
        stderr = 0.0
    return PairedComparison(mean_diff=mean, stderr_diff=stderr)
