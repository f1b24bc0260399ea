"""Acceptance gate: every release-blocking criterion at its pinned tolerance.

Each test prints one PASS/FAIL line (visible under ``pytest -s`` or in
captured output) and asserts the same condition, so the suite doubles as
a human-readable acceptance report.
"""

import math
import time

import numpy as np
import pytest

from swd_engine.bench import (
    SweepSpec,
    make_adversarial_task,
    run_sweep,
    run_task,
    compare_lambdas,
)
from swd_engine.core import DecodePolicy, new_fully_masked
from swd_engine.decoder import decode, replay_trace, traces_equal
from swd_engine.denoiser import ExactMarkovDenoiser, MarkovModel
from swd_engine.scoring import ScoreVector, swd_modulate
from swd_engine.verify import run_verification_corpus
from swd_engine.bench import _trial_denoiser

EQ_TOL = 1e-10
BOUND_TOL = 1e-12

ALL_METRICS = ("confidence", "margin", "neg_entropy")
ALL_SELECTORS = ("top1", "topk", "threshold", "eb_sampler", "random_schedule")
GAMMA_GRID = (0.0005, 0.005, 0.05, 0.1, 0.5, 1.0, 2.0)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def corpus():
    start = time.perf_counter()
    result = run_verification_corpus(num_configs=200, seed=2024)
    result.elapsed_seconds = time.perf_counter() - start
    return result


def test_lemma1_equality(corpus):
    ok = corpus.max_gap <= EQ_TOL and corpus.elapsed_seconds <= 60.0
    report(
        "lemma1-equality",
        ok,
        f"configs={len(corpus.records)} max|lhs-rhs|={corpus.max_gap:.3e} "
        f"tol={EQ_TOL:g} elapsed={corpus.elapsed_seconds:.1f}s",
    )


def test_theorem1_bound_and_identity(corpus):
    ok = corpus.min_slack >= -BOUND_TOL and corpus.max_identity_gap <= EQ_TOL
    report(
        "theorem1-bound",
        ok,
        f"min_slack={corpus.min_slack:.3e} (>= {-BOUND_TOL:g}) "
        f"max_identity_gap={corpus.max_identity_gap:.3e} (<= {EQ_TOL:g})",
    )


def test_oracle_equivalence(corpus):
    ok = corpus.max_oracle_gap <= EQ_TOL
    report(
        "oracle-equivalence",
        ok,
        f"max DP-vs-enumeration gap={corpus.max_oracle_gap:.3e} tol={EQ_TOL:g}",
    )


def test_lambda_zero_reduction():
    denoiser = ExactMarkovDenoiser(MarkovModel.random(4, seed=404))
    mismatches = []
    for metric in ALL_METRICS:
        for selector in ALL_SELECTORS:
            mode = "additive" if metric == "neg_entropy" else "multiplicative"
            tau = -0.5 if metric == "neg_entropy" else 0.7
            for run in range(50):
                policy = DecodePolicy(
                    score_metric=metric, selector=selector, lam=0.0,
                    gamma=0.4, tau=tau, k=2, modulation_mode=mode, seed=run,
                )
                plain = decode(denoiser, policy, new_fully_masked(10), force_swd=False)
                swd = decode(denoiser, policy, new_fully_masked(10), force_swd=True)
                if not traces_equal(plain.trace, swd.trace):
                    mismatches.append((metric, selector, run))
    report(
        "lambda0-reduction",
        not mismatches,
        f"{len(ALL_METRICS) * len(ALL_SELECTORS)} combos x 50 seeds, "
        f"mismatches={mismatches[:3]}",
    )


def test_eb_budget_audit():
    task = make_adversarial_task(length=16, K=4, trials=1, seed=31)
    gammas = (0.0005, 0.05, 0.5, 2.0)
    runs_per_gamma = 25
    violations = []
    total = 0
    for gamma in gammas:
        for run in range(runs_per_gamma):
            policy = DecodePolicy(
                score_metric="confidence", selector="eb_sampler",
                gamma=gamma, lam=1.0 if run % 2 else 0.0, seed=run,
            )
            outcome = decode(_trial_denoiser(task, run), policy, new_fully_masked(16))
            total += 1
            violations.extend(
                v for v in replay_trace(outcome.trace) if v.kind == "eb_budget"
            )
    report(
        "eb-budget-audit",
        total == 100 and not violations,
        f"runs={total} budget_violations={len(violations)}",
    )


def test_swd_modulator_fidelity():
    sv = lambda v: ScoreVector(values={0: v}, metric="confidence")
    hot = swd_modulate(sv(0.9), {0: math.log(0.9 / 0.49)}, lam=1.0).values[0]
    cool = swd_modulate(sv(0.8), {0: math.log(0.8 / 0.54)}, lam=1.0).values[0]
    fig_ok = abs(hot - 0.49) <= 1e-12 and abs(cool - 0.54) <= 1e-12

    rng = np.random.default_rng(7)
    lam = rng.uniform(0.0, 10.0, size=100_000)
    d_lo = rng.exponential(1.0, size=100_000)
    d_hi = d_lo + rng.exponential(1.0, size=100_000) + 1e-9
    mod_lo = np.exp(-lam * d_lo)
    mod_hi = np.exp(-lam * d_hi)
    range_ok = bool(np.all(mod_lo > 0) and np.all(mod_lo <= 1.0))
    monotone_ok = bool(np.all(mod_hi <= mod_lo))
    report(
        "swd-modulator-fidelity",
        fig_ok and range_ok and monotone_ok,
        f"0.9->{hot:.15f} 0.8->{cool:.15f} range_ok={range_ok} "
        f"monotone_ok={monotone_ok} n=100000",
    )


def test_premature_commitment_property():
    start = time.perf_counter()
    task = make_adversarial_task(length=32, K=4, trials=200, seed=7)
    policy = DecodePolicy(
        score_metric="confidence", selector="eb_sampler", gamma=2.0, seed=3
    )
    results = {lam: compare_lambdas(task, policy, lam) for lam in (1.0, 5.0)}
    elapsed = time.perf_counter() - start
    ok = elapsed <= 300.0 and all(
        c.mean_diff > 2.0 * c.stderr_diff for c in results.values()
    )
    detail = " ".join(
        f"lam={lam}: diff={c.mean_diff:+.2f} nats, 2se={2 * c.stderr_diff:.2f}"
        for lam, c in results.items()
    )
    report("premature-commitment", ok, f"{detail} elapsed={elapsed:.0f}s")


def test_nfe_accounting():
    task = make_adversarial_task(length=32, K=4, trials=25, seed=7)
    policy = DecodePolicy(score_metric="confidence", selector="eb_sampler", seed=3)

    top1 = run_task(task, policy.with_(selector="top1"))
    top1_ok = top1.mean_nfe == 32.0

    eb2 = run_task(task, policy.with_(gamma=2.0))
    eb_ok = eb2.mean_nfe < 32.0

    nfes = [run_task(task, policy.with_(gamma=g)).mean_nfe for g in GAMMA_GRID]
    monotone_ok = all(a >= b - 1e-12 for a, b in zip(nfes, nfes[1:]))
    report(
        "nfe-accounting",
        top1_ok and eb_ok and monotone_ok,
        f"top1_nfe={top1.mean_nfe} eb(gamma=2)_nfe={eb2.mean_nfe:.2f} "
        f"grid_nfes={[round(x, 2) for x in nfes]}",
    )


def test_sweep_determinism():
    task = make_adversarial_task(length=16, K=4, trials=10, seed=19)
    spec = SweepSpec(
        policy=DecodePolicy(score_metric="confidence", selector="eb_sampler", seed=19),
        axis="gamma",
        values=GAMMA_GRID,
    )
    first = run_sweep(spec, task).encode()
    second = run_sweep(spec, task).encode()
    report(
        "sweep-determinism",
        first == second,
        f"bytes={len(first)} identical={first == second}",
    )
