"""Run a directory of ``.nil`` programs against their expected verdicts.

Each ``name.nil`` has a sidecar ``name.json``::

    {
      "name": "func",
      "low": ["l"],                 # optional, defaults to the declared lows
      "modes": ["ordinary", "compact"],
      "bits": [1, 2],
      "expected": "INSECURE",       # or {"1": "SECURE", "2": "INSECURE"}
      "assume": ["b1 = b1t"],       # optional relational assumptions
      "terminating": true,          # whether the oracle cross-check applies
      "provenance": "oracle"        # or "known-verdict"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .checker import SecuritySpec, check_ti
from .errors import BudgetError
from .frontend import Program, load, parse_expr
from .interpreter import brute_force_pair_oracle


@dataclass(frozen=True)
class Sidecar:
    name: str
    modes: tuple[str, ...]
    bits: tuple[int, ...]
    expected: dict[int, str]
    low: tuple[str, ...] | None = None
    assume: tuple[str, ...] = ()
    terminating: bool = True
    provenance: str = "oracle"
    integrity: bool = False

    @classmethod
    def load(cls, path: Path) -> "Sidecar":
        raw = json.loads(path.read_text())
        bits = tuple(raw.get("bits", [2]))
        exp = raw["expected"]
        expected = {b: exp for b in bits} if isinstance(exp, str) else {int(k): v for k, v in exp.items()}
        return cls(
            name=raw.get("name", path.stem),
            modes=tuple(raw.get("modes", ["ordinary"])),
            bits=bits,
            expected=expected,
            low=tuple(raw["low"]) if "low" in raw else None,
            assume=tuple(raw.get("assume", ())),
            terminating=raw.get("terminating", True),
            provenance=raw.get("provenance", "oracle"),
            integrity=raw.get("integrity", False),
        )


@dataclass
class CorpusRecord:
    name: str
    bits: int
    mode: str
    expected: str
    verdict: str
    oracle: str | None
    rules: int
    conjuncts: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.verdict == self.expected and (self.oracle is None or self.oracle == self.verdict)


@dataclass
class CorpusReport:
    records: list[CorpusRecord] = field(default_factory=list)
    skipped: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def mismatches(self) -> list[CorpusRecord]:
        return [r for r in self.records if not r.ok]

    def agreement(self) -> dict[tuple[str, int], dict[str, str]]:
        """Per (program, bits): verdict in each mode."""
        matrix: dict[tuple[str, int], dict[str, str]] = {}
        for r in self.records:
            matrix.setdefault((r.name, r.bits), {})[r.mode] = r.verdict
        return matrix

    def disagreements(self) -> list[tuple[str, int]]:
        return [k for k, row in self.agreement().items() if len(set(row.values())) > 1]


def load_entry(nil_path: Path) -> tuple[Program, Sidecar]:
    program = load(nil_path.read_text())
    side = nil_path.with_suffix(".json")
    if side.exists():
        return program, Sidecar.load(side)
    raise FileNotFoundError(f"missing sidecar {side}")


def corpus_entries(directory: Path) -> list[Path]:
    return sorted(p for p in Path(directory).glob("*.nil") if p.with_suffix(".json").exists())


def corpus_run(
    directory: Path,
    bits: int | None = None,
    oracle: bool = True,
    names: list[str] | None = None,
) -> CorpusReport:
    report = CorpusReport()
    for path in corpus_entries(directory):
        program, side = load_entry(path)
        if names and side.name not in names:
            continue
        spec = SecuritySpec.for_program(program, side.integrity, side.low)
        assumes = [parse_expr(a) for a in side.assume]
        for n in [bits] if bits is not None else side.bits:
            if n not in side.expected:
                continue
            oracle_verdict = None
            if oracle and side.terminating:
                try:
                    oracle_verdict = brute_force_pair_oracle(
                        program, spec.observed, n, pair_assumes=assumes
                    ).verdict
                except BudgetError as exc:
                    report.skipped.append((side.name, n, f"oracle: {exc}"))
            for mode in side.modes:
                try:
                    v = check_ti(program, spec, n, mode, pair_assumes=assumes, witness=False)
                except BudgetError as exc:
                    report.skipped.append((side.name, n, f"{mode}: {exc}"))
                    continue
                report.records.append(
                    CorpusRecord(
                        side.name,
                        n,
                        mode,
                        side.expected[n],
                        v.verdict,
                        oracle_verdict,
                        v.stats["rules"],
                        v.stats["conjuncts"],
                        v.stats["seconds"],
                    )
                )
    return report
