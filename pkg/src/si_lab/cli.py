"""Command-line entry point: ``si-lab {gen,check,oracle,mutate,script,pipeline}``.

Exit codes: 0 when the history satisfies the model, 1 when it violates it,
2 on bad flags or malformed input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Any, Sequence

from .axioms import Model, SizeLimitExceeded, brute_force_satisfies
from .checker import (
    TARGET_MODEL, MutationError, check_deployment, mutate, mutation_model, parse_mutation,
)
from .model import TOOL_VERSION, History, MalformedHistory, load_history, save_history
from .sim import ScriptError, SimConfig, interleave_directed, run

MODEL_CHOICES = ["auto"] + [m.cli_name for m in Model]


class UsageError(Exception):
    pass


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SI_LAB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SI_LAB_SEED must be an integer, got {env!r}") from None


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    d = SimConfig()
    p.add_argument("--deployment", choices=["wt", "rs", "sc"], default="wt")
    p.add_argument("--seed", type=int, default=None, help="defaults to $SI_LAB_SEED, then 0")
    p.add_argument("--txn-num", type=int, default=d.txn_num)
    p.add_argument("--concurrency", type=int, default=d.concurrency)
    p.add_argument("--max-txn-len", type=int, default=d.max_txn_len)
    p.add_argument("--key-count", type=int, default=d.key_count)
    p.add_argument("--max-writes-per-key", type=int, default=d.max_writes_per_key)
    p.add_argument("--key-dist", choices=["uniform", "exponential"], default=d.key_dist)
    p.add_argument("--replica-count", type=int, default=d.replica_count)
    p.add_argument("--shard-count", type=int, default=d.shard_count)
    p.add_argument("--replication-delay", choices=["eager", "randomized"],
                   default=d.replication_delay_mode)


def _add_check_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODEL_CHOICES, default="auto")
    p.add_argument("--rt-tolerance", type=float, default=0.0, metavar="MS",
                   help="forgive real-time comparisons by this many milliseconds")
    p.add_argument("--report", metavar="FILE",
                   help="write the text report to FILE and the JSON report to FILE.json")
    p.add_argument("--all-violations", action="store_true",
                   help="list every violation instead of the first per axiom")
    p.add_argument("--timings", action="store_true", help="include elapsed time in reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="si-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"si-lab {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="simulate a workload and write its history")
    _add_gen_flags(p)
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("check", help="white-box check of a recorded history")
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    _add_check_flags(p)

    p = sub.add_parser("oracle", help="brute-force check of a small history")
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--model", choices=MODEL_CHOICES, default="auto")
    p.add_argument("--cap", type=int, default=6, help="refuse histories larger than this")

    p = sub.add_parser("mutate", help="perturb a history so that one axiom fails")
    p.add_argument("--axiom", required=True)
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("script", help="run a directed interleaving script")
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("pipeline", help="gen then check in one run")
    _add_gen_flags(p)
    p.add_argument("--out", metavar="FILE", help="also write the history")
    _add_check_flags(p)
    return parser


def _model(name: str, h: History) -> Model:
    if name != "auto":
        return Model.parse(name)
    if h.deployment not in TARGET_MODEL:
        raise MalformedHistory("history has no deployment tag; pass --model explicitly")
    return TARGET_MODEL[h.deployment]


def _config(args: argparse.Namespace) -> SimConfig:
    try:
        return SimConfig(
            deployment=args.deployment, seed=_seed(args), txn_num=args.txn_num,
            concurrency=args.concurrency, max_txn_len=args.max_txn_len, key_count=args.key_count,
            max_writes_per_key=args.max_writes_per_key, key_dist=args.key_dist,
            replica_count=args.replica_count, shard_count=args.shard_count,
            replication_delay_mode=args.replication_delay,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_report(path: str, h: History, model: Model, report, timings: bool) -> None:
    provenance = {"tool": "si-lab", "version": TOOL_VERSION, "deployment": h.deployment,
                  "config": h.header.get("config"), "seed": h.header.get("seed")}
    body: dict[str, Any] = {"header": provenance, **report.to_dict(timings)}
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# si-lab {TOOL_VERSION} deployment={h.deployment} seed={provenance['seed']}\n")
        if provenance["config"] is not None:
            fh.write(f"# config {json.dumps(provenance['config'], sort_keys=True)}\n")
        fh.write(report.render())
        if timings:
            fh.write(f"elapsed: {report.elapsed_nanos / 1e6:.1f} ms\n")


def _check(h: History, args: argparse.Namespace, started: float) -> int:
    model = _model(args.model, h)
    report = check_deployment(h, model, args.all_violations, int(args.rt_tolerance * 1_000_000))
    if args.report:
        _write_report(args.report, h, model, report, args.timings)
    verdict = "PASS" if report.verdict else "FAIL"
    failed = sorted(report.violated_axioms(), key=lambda a: a.value)
    detail = f" ({', '.join(a.value for a in failed)})" if failed else ""
    print(f"{h.deployment} txns={len(h)} aborted={len(h.aborted())} {model.cli_name} "
          f"{verdict}{detail} elapsed={time.perf_counter() - started:.2f}s")
    if report.cross_check:
        print(f"tid cross-check: {len(report.cross_check)} violation(s)")
    return 0 if report.verdict else 1


def _cmd_gen(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    h = run(_config(args))
    save_history(h, args.out)
    print(f"{h.deployment} txns={len(h)} aborted={len(h.aborted())} -> {args.out} "
          f"elapsed={time.perf_counter() - started:.2f}s")
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    return _check(load_history(args.inp), args, started)


def _cmd_oracle(args: argparse.Namespace) -> int:
    h = load_history(args.inp)
    model = _model(args.model, h)
    ok, _ = brute_force_satisfies(h, model, cap=args.cap)
    print(f"oracle {model.cli_name}: {'PASS' if ok else 'FAIL'} txns={len(h)}")
    return 0 if ok else 1


def _cmd_mutate(args: argparse.Namespace) -> int:
    h = load_history(args.inp)
    axiom = parse_mutation(args.axiom)
    out = mutate(h, axiom, _seed(args))
    save_history(out, args.out)
    model = mutation_model(h.deployment, axiom)
    print(f"mutated txns {out.header['mutation']['txns']} to violate {axiom.value}; "
          f"check with --model {model.cli_name} -> {args.out}")
    return 0


def _cmd_script(args: argparse.Namespace) -> int:
    with open(args.inp, encoding="utf-8") as fh:
        h = interleave_directed(fh.read())
    save_history(h, args.out)
    print(f"{h.deployment} script txns={len(h)} aborted={len(h.aborted())} -> {args.out}")
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    h = run(_config(args))
    if args.out:
        save_history(h, args.out)
    return _check(h, args, started)


COMMANDS = {"gen": _cmd_gen, "check": _cmd_check, "oracle": _cmd_oracle, "mutate": _cmd_mutate,
            "script": _cmd_script, "pipeline": _cmd_pipeline}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, MutationError, SizeLimitExceeded, ScriptError) as exc:
        print(f"si-lab {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (MalformedHistory, OSError) as exc:
        print(f"si-lab {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
