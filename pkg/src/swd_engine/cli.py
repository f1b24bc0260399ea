"""Command-line interface: decode runs, sweeps, verification, trace audits."""

from __future__ import annotations

import argparse
import sys

from .bench import SweepSpec, SyntheticTask, run_sweep
from .core import DecodePolicy, InvalidArgumentError, new_fully_masked
from .decoder import DecodeAbortedError, decode, read_trace, replay_trace, write_trace
from .denoiser import (
    ExactMarkovDenoiser,
    ExternalDenoiser,
    MarkovModel,
    PerturbationProfile,
    PerturbedDenoiser,
    open_endpoint,
)
from .verify import EQUALITY_TOL, run_verification_corpus

USAGE_ERROR = 2

_METRIC_FLAG = {"confidence": "confidence", "margin": "margin", "neg-entropy": "neg_entropy"}
_SELECT_FLAG = {
    "top1": "top1",
    "topk": "topk",
    "threshold": "threshold",
    "eb": "eb_sampler",
    "random": "random_schedule",
}
_MODULATION_FLAG = {"mul": "multiplicative", "add": "additive"}


def _add_policy_flags(p: argparse.ArgumentParser, sweepable: bool) -> None:
    listy = str if sweepable else float
    p.add_argument("--score", choices=sorted(_METRIC_FLAG), default="confidence")
    p.add_argument("--select", choices=sorted(_SELECT_FLAG), default="top1")
    p.add_argument("--lambda", dest="lam", type=listy, default=0.0 if not sweepable else "0.0")
    p.add_argument("--gamma", type=listy, default=0.1 if not sweepable else "0.1")
    p.add_argument("--tau", type=listy, default=0.9 if not sweepable else "0.9")
    p.add_argument("--k", type=listy if sweepable else int, default=1 if not sweepable else "1")
    p.add_argument("--block-size", type=listy if sweepable else int, default=None)
    p.add_argument("--kl-direction", choices=["forward", "reverse"], default="reverse")
    p.add_argument("--modulation", choices=["mul", "add"], default=None)
    p.add_argument("--commit", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--seed", type=int, default=0)


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--denoiser", choices=["markov", "perturbed", "external"], default="markov")
    p.add_argument("--endpoint", default=None, help="tcp://host:port or a command line")
    p.add_argument("--length", type=int, default=32)
    p.add_argument("--vocab", type=int, default=4)
    p.add_argument("--flip-strength", type=float, default=0.8)
    p.add_argument("--decay", choices=["linear", "exponential"], default="linear")
    p.add_argument("--decay-rate", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swd", description="Stability-weighted decoding engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decode", help="run one decode and emit its trace")
    _add_policy_flags(p_dec, sweepable=False)
    _add_task_flags(p_dec)
    p_dec.add_argument("--trace-out", default=None)

    p_sweep = sub.add_parser("sweep", help="sweep one policy axis, emit CSV")
    _add_policy_flags(p_sweep, sweepable=True)
    _add_task_flags(p_sweep)
    p_sweep.add_argument("--trials", type=int, default=20)
    p_sweep.add_argument("--csv-out", default=None)

    p_ver = sub.add_parser("verify", help="run the Lemma/Theorem oracle corpus")
    p_ver.add_argument("--configs", type=int, default=200)
    p_ver.add_argument("--seed", type=int, default=2024)
    p_ver.add_argument("--report-out", default=None)

    p_rep = sub.add_parser("replay", help="audit a trace file")
    p_rep.add_argument("trace", help="path to a line-delimited JSON trace")
    return parser


def _policy_from_args(args, parser: argparse.ArgumentParser) -> DecodePolicy:
    metric = _METRIC_FLAG[args.score]
    modulation = args.modulation
    if modulation is None:
        modulation = "add" if metric == "neg_entropy" else "mul"
    if metric == "neg_entropy" and modulation == "mul":
        parser.error("--modulation mul cannot be combined with --score neg-entropy")
    try:
        return DecodePolicy(
            score_metric=metric,
            selector=_SELECT_FLAG[args.select],
            lam=float(args.lam),
            gamma=float(args.gamma),
            tau=float(args.tau),
            k=int(args.k),
            block_size=None if args.block_size in (None, "", "inf") else int(args.block_size),
            kl_direction=args.kl_direction,
            modulation_mode=_MODULATION_FLAG[modulation],
            commit_mode=args.commit,
            seed=args.seed,
        )
    except InvalidArgumentError as exc:
        parser.error(str(exc))
        raise AssertionError  # parser.error raises SystemExit


def _make_denoiser(args, parser: argparse.ArgumentParser):
    model = MarkovModel.random(args.vocab, seed=args.seed)
    if args.denoiser == "markov":
        return ExactMarkovDenoiser(model)
    if args.denoiser == "perturbed":
        profile = PerturbationProfile(
            flip_strength=args.flip_strength,
            decay=args.decay,
            rate=args.decay_rate,
            seed=args.seed,
        )
        return PerturbedDenoiser(ExactMarkovDenoiser(model), profile)
    if args.endpoint is None:
        parser.error("--denoiser external requires --endpoint")
    return ExternalDenoiser(open_endpoint(args.endpoint), vocab_size=args.vocab)


def _cmd_decode(args, parser) -> int:
    policy = _policy_from_args(args, parser)
    denoiser = _make_denoiser(args, parser)
    try:
        outcome = decode(denoiser, policy, new_fully_masked(args.length))
    except DecodeAbortedError as exc:
        print(f"decode aborted: {exc}", file=sys.stderr)
        if args.trace_out:
            write_trace(exc.partial_trace, args.trace_out)
            print(f"partial trace written to {args.trace_out}", file=sys.stderr)
        return 1
    if args.trace_out:
        write_trace(outcome.trace, args.trace_out)
    print(f"tokens: {' '.join(map(str, outcome.tokens))}")
    print(f"nfe: {outcome.nfe}")
    return 0


def _parse_axis(args, parser) -> tuple[str, list]:
    axes = {
        "lambda": args.lam,
        "gamma": args.gamma,
        "tau": args.tau,
        "k": args.k,
        "block_size": args.block_size,
    }
    listed = {
        name: raw for name, raw in axes.items()
        if isinstance(raw, str) and "," in raw
    }
    if len(listed) != 1:
        parser.error("sweep needs exactly one comma-separated axis flag")
    name, raw = next(iter(listed.items()))
    cast = int if name in ("k", "block_size") else float
    try:
        values = [cast(v) for v in raw.split(",")]
    except ValueError:
        parser.error(f"bad value list for --{name.replace('_', '-')}: {raw!r}")
    return name, values


def _cmd_sweep(args, parser) -> int:
    axis, values = _parse_axis(args, parser)
    # Non-axis flags may still be scalars-in-strings; normalize them.
    for attr, default in (("lam", 0.0), ("gamma", 0.1), ("tau", 0.9), ("k", 1)):
        raw = getattr(args, attr)
        if isinstance(raw, str):
            setattr(args, attr, default if "," in raw else float(raw))
    if isinstance(args.block_size, str) and "," in args.block_size:
        args.block_size = None
    policy = _policy_from_args(args, parser)
    model = MarkovModel.random(args.vocab, seed=args.seed)
    profile = None
    if args.denoiser == "perturbed":
        profile = PerturbationProfile(
            flip_strength=args.flip_strength,
            decay=args.decay,
            rate=args.decay_rate,
            seed=args.seed,
        )
    elif args.denoiser == "external":
        parser.error("sweep supports markov and perturbed denoisers only")
    task = SyntheticTask(
        model=model, length=args.length, profile=profile,
        trials=args.trials, seed=args.seed,
    )
    spec = SweepSpec(policy=policy, axis=axis, values=tuple(sorted(set(values))))
    csv_text = run_sweep(spec, task)
    if args.csv_out:
        with open(args.csv_out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_verify(args) -> int:
    result = run_verification_corpus(num_configs=args.configs, seed=args.seed)
    lines = [rec.to_json() for rec in result.records]
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    ok = result.all_within_tolerance()
    flagged = sum(r.reverse_exceeds_bound for r in result.records)
    print(
        f"# configs={len(result.records)} max_gap={result.max_gap:.3e} "
        f"min_slack={result.min_slack:.3e} max_identity_gap={result.max_identity_gap:.3e} "
        f"max_oracle_gap={result.max_oracle_gap:.3e} "
        f"reverse_kl_above_bound={flagged} "
        f"elapsed={result.elapsed_seconds:.2f}s tol={EQUALITY_TOL:g}",
        file=sys.stderr,
    )
    return 0 if ok else 1


def _cmd_replay(args) -> int:
    trace = read_trace(args.trace)
    violations = replay_trace(trace)
    for v in violations:
        print(f"step {v.step} pos {v.position}: {v.kind}: {v.detail}")
    print(f"# steps={trace.nfe_total} violations={len(violations)}", file=sys.stderr)
    return 0 if not violations else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "decode":
        return _cmd_decode(args, parser)
    if args.command == "sweep":
        return _cmd_sweep(args, parser)
    if args.command == "verify":
        return _cmd_verify(args)
    if args.command == "replay":
        return _cmd_replay(args)
    parser.error(f"unknown command {args.command!r}")
    return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
