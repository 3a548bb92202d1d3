"""Command-line entry point: ``nilcheck <command> ...``.

Exit codes: 0 secure / success, 1 insecure / mismatch, 2 diverged run,
64 usage error, 65 input error, 69 state budget exceeded.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .checker import DEFAULT_BITS, SecuritySpec, check_ti, format_witness
from .corpus import corpus_run
from .derivation import derive
from .errors import BudgetError, NilError
from .export import export_checker_input
from .frontend import Program, load, parse_expr, pretty
from .interpreter import DEFAULT_FUEL, run
from .pds import dump
from .selfcomp import MODES, compose

EXIT_OK, EXIT_INSECURE, EXIT_DIVERGED = 0, 1, 2
EXIT_USAGE, EXIT_INPUT, EXIT_BUDGET = 64, 65, 69


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which we reserve
        raise UsageError(message)


@dataclass
class JobConfig:
    source: Path
    bits: int = DEFAULT_BITS
    mode: str = "ordinary"
    low: list[str] | None = None
    integrity: bool = False
    fuel: int = DEFAULT_FUEL
    assume: list[str] = field(default_factory=list)
    fmt: str = "human"

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise UsageError("--bits must be at least 1")
        if self.mode not in MODES:
            raise UsageError(f"--mode must be one of {', '.join(MODES)}")

    def program(self) -> Program:
        try:
            text = self.source.read_text()
        except OSError as exc:
            raise NilError(f"cannot read {self.source}: {exc.strerror}") from exc
        program = load(text)
        for name in self.low or []:
            if name not in program.global_names:
                raise NilError(f"--low names undeclared variable {name!r}")
        return program

    def spec(self, program: Program) -> SecuritySpec:
        return SecuritySpec.for_program(program, self.integrity, self.low)


def _emit(fmt: str, record: dict, human: str) -> None:
    if fmt == "json":
        print(json.dumps(record))
    else:
        print(human)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nilcheck", description="Noninterference checking via pushdown self-composition.")
    p.add_argument("-v", "--verbose", action="store_true", help="log lint warnings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, bits=True, mode=False):
        sp.add_argument("source", type=Path)
        sp.add_argument("--format", dest="fmt", choices=["human", "json"], default="human")
        if bits:
            sp.add_argument("--bits", type=int, default=DEFAULT_BITS)
        if mode:
            sp.add_argument("--mode", default="ordinary", choices=MODES)
            sp.add_argument("--low", action="append", help="observed variable (repeatable; default: declared lows)")
            sp.add_argument("--integrity", action="store_true", help="observe the high variables instead")

    sp = sub.add_parser("parse", help="parse and validate, then pretty-print")
    common(sp, bits=False)

    sp = sub.add_parser("run", help="run the reference interpreter")
    common(sp)
    sp.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    sp.add_argument("--init", nargs="*", default=[], metavar="VAR=VAL")

    sp = sub.add_parser("derive", help="print the symbolic pushdown system")
    common(sp, bits=False)
    sp.add_argument("--golden", type=Path, help="compare against a stored dump")

    sp = sub.add_parser("compose", help="print the self-composed system")
    common(sp, bits=False, mode=True)
    sp.add_argument("--stats", action="store_true", help="print rule and conjunct counts only")

    sp = sub.add_parser("check", help="decide noninterference")
    common(sp, mode=True)
    sp.add_argument("--witness", action="store_true", help="print the counterexample table")
    sp.add_argument("--stats", action="store_true")
    sp.add_argument("--assume", action="append", default=[], help="extra initial condition over both copies")

    sp = sub.add_parser("export", help="export the composed system for an external checker")
    common(sp, mode=True)

    sp = sub.add_parser("corpus", help="run a corpus directory against its sidecar expectations")
    sp.add_argument("directory", type=Path)
    sp.add_argument("--bits", type=int, default=None, help="override every sidecar's bit-widths")
    sp.add_argument("--no-oracle", action="store_true")
    sp.add_argument("--stats", action="store_true")
    sp.add_argument("--only", action="append", help="restrict to these program names")
    sp.add_argument("--format", dest="fmt", choices=["human", "json"], default="human")
    return p


def _cmd_parse(args) -> int:
    program = JobConfig(args.source).program()
    if args.fmt == "json":
        print(json.dumps({"globals": dict(program.globals), "procedures": [p.tag for p in program.procedures]}))
    else:
        print(pretty(program), end="")
    return EXIT_OK


def _cmd_run(args) -> int:
    job = JobConfig(args.source, bits=args.bits, fuel=args.fuel, fmt=args.fmt)
    program = job.program()
    init = {}
    for item in args.init:
        name, sep, value = item.partition("=")
        if not sep or not value.strip().isdigit():
            raise UsageError(f"--init expects VAR=VAL, got {item!r}")
        if name not in program.global_names:
            raise NilError(f"--init names undeclared variable {name!r}")
        init[name] = int(value)
    result = run(program, init, job.bits, job.fuel)
    if not result.terminated:
        _emit(job.fmt, {"outcome": "diverged", "steps": result.steps_used}, f"diverged after {result.steps_used} steps")
        return EXIT_DIVERGED
    final = result.outcome.globals()
    if job.fmt == "json":
        print(json.dumps({"outcome": "final", "steps": result.steps_used, "store": final}))
    else:
        for name, value in final.items():
            print(f"{name}={value}")
    return EXIT_OK


def _cmd_derive(args) -> int:
    text = dump(derive(JobConfig(args.source).program()))
    if args.golden is None:
        print(text, end="")
        return EXIT_OK
    try:
        expected = args.golden.read_text()
    except OSError as exc:
        raise NilError(f"cannot read {args.golden}: {exc.strerror}") from exc
    if expected == text:
        _emit(args.fmt, {"golden": str(args.golden), "match": True}, f"matches {args.golden}")
        return EXIT_OK
    diff = difflib.unified_diff(expected.splitlines(True), text.splitlines(True), str(args.golden), "derived")
    sys.stdout.writelines(diff)
    return EXIT_INSECURE


def _compose(args):
    job = JobConfig(args.source, mode=args.mode, low=args.low, integrity=args.integrity)
    program = job.program()
    spec = job.spec(program)
    return program, spec, compose(derive(program), spec.observed, job.mode)


def _cmd_compose(args) -> int:
    _, _, composed = _compose(args)
    if args.stats:
        stats = {"mode": composed.mode, **composed.stats()}
        _emit(args.fmt, stats, f"mode={composed.mode} rules={stats['rules']} conjuncts={stats['conjuncts']}")
    else:
        print(dump(composed.pds), end="")
    return EXIT_OK


def _cmd_check(args) -> int:
    job = JobConfig(
        args.source, bits=args.bits, mode=args.mode, low=args.low, integrity=args.integrity,
        assume=args.assume, fmt=args.fmt,
    )
    program = job.program()
    spec = job.spec(program)
    assumes = [parse_expr(a) for a in job.assume]
    verdict = check_ti(program, spec, job.bits, job.mode, pair_assumes=assumes)
    record = {
        "file": str(job.source),
        "verdict": verdict.verdict,
        "bits": job.bits,
        "mode": verdict.mode,
        "observed": sorted(spec.observed),
    }
    if args.stats:
        record["stats"] = verdict.stats
    if verdict.witness is not None:
        w = verdict.witness
        record["witness_steps"] = len(w.steps)
        record["flow_edge"] = None if w.flow_edge is None else str(w.flow_rule())
    if job.fmt == "json":
        print(json.dumps(record))
    else:
        print(f"{verdict.verdict} ({verdict.mode}, N={job.bits}, observing {', '.join(sorted(spec.observed))})")
        if args.stats:
            print(" ".join(f"{k}={v}" for k, v in verdict.stats.items()))
        if verdict.witness is not None and args.witness:
            print(format_witness(verdict.witness, verdict.composed))
    return EXIT_OK if verdict.secure else EXIT_INSECURE


def _cmd_export(args) -> int:
    _, spec, composed = _compose(args)
    print(export_checker_input(composed, spec.observed, args.bits), end="")
    return EXIT_OK


def _cmd_corpus(args) -> int:
    report = corpus_run(args.directory, args.bits, oracle=not args.no_oracle, names=args.only)
    for r in report.records:
        record = {
            "name": r.name, "bits": r.bits, "mode": r.mode, "expected": r.expected,
            "verdict": r.verdict, "oracle": r.oracle, "ok": r.ok,
        }
        if args.stats:
            record.update(rules=r.rules, conjuncts=r.conjuncts, seconds=r.seconds)
        human = f"{'ok  ' if r.ok else 'FAIL'} {r.name:<16} N={r.bits} {r.mode:<10} {r.verdict:<8}"
        human += f" expected={r.expected} oracle={r.oracle or '-'}"
        if args.stats:
            human += f" rules={r.rules} conjuncts={r.conjuncts}"
        _emit(args.fmt, record, human)
    for name, bits, why in report.skipped:
        _emit(args.fmt, {"name": name, "bits": bits, "skipped": why}, f"skip {name} N={bits}: {why}")
    for name, bits in report.disagreements():
        _emit(args.fmt, {"name": name, "bits": bits, "mode_disagreement": True}, f"MODES DISAGREE {name} N={bits}")
    bad = len(report.mismatches) + len(report.disagreements())
    _emit(
        args.fmt,
        {"records": len(report.records), "mismatches": bad},
        f"{len(report.records)} checks, {bad} mismatches",
    )
    return EXIT_OK if bad == 0 else EXIT_INSECURE


COMMANDS = {
    "parse": _cmd_parse,
    "run": _cmd_run,
    "derive": _cmd_derive,
    "compose": _cmd_compose,
    "check": _cmd_check,
    "export": _cmd_export,
    "corpus": _cmd_corpus,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
