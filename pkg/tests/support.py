"""Shared helpers for the test suite: corpus access and small oracles."""

from __future__ import annotations

import functools
from pathlib import Path

from nilcheck.corpus import Sidecar, corpus_entries, load_entry
from nilcheck.frontend import Program, load

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
GOLDEN = ROOT / "golden"


@functools.lru_cache(maxsize=None)
def corpus() -> tuple[tuple[str, Program, Sidecar], ...]:
    out = []
    for path in corpus_entries(CORPUS):
        program, side = load_entry(path)
        out.append((path.stem, program, side))
    return tuple(out)


def corpus_names() -> list[str]:
    return [name for name, _, _ in corpus()]


def corpus_program(name: str) -> Program:
    return load((CORPUS / f"{name}.nil").read_text())


def corpus_sidecar(name: str) -> Sidecar:
    return Sidecar.load(CORPUS / f"{name}.json")


# --------------------------------------------------------------------------
# Simulation harness: interpreter against PDS execution


def admitted_valuations(program: Program, bits: int):
    """Every global valuation satisfying the program's own assumptions."""
    from nilcheck.frontend import eval_pure, pinned_constants
    from nilcheck.interpreter import valuations

    mask = (1 << bits) - 1
    pins = pinned_constants(program.assumes, mask)
    names = [g for g in program.global_names if g not in pins]
    for v in valuations(names, bits):
        v.update(pins)
        if all(eval_pure(a, v, mask) for a in program.assumes):
            yield v


def simulation_mismatches(program: Program, bits: int = 2, fuel: int = 20_000) -> list[str]:
    """Compare final globals (main) and final in-parameters (every instance)."""
    from nilcheck.derivation import derive, derive_instance, instance_writes
    from nilcheck.interpreter import run, run_procedure
    from nilcheck.pds import Configuration, ExplicitPDS, PdsDiverged, initial_configurations, pds_exec

    problems: list[str] = []
    pds = derive(program)
    explicit = ExplicitPDS(pds, bits)
    for v in admitted_valuations(program, bits):
        want = run(program, v, bits, fuel)
        got = pds_exec(explicit, initial_configurations(pds, bits, v), fuel=fuel)
        if not want.terminated:
            if not isinstance(got, PdsDiverged):
                problems.append(f"main {v}: interpreter diverged, PDS stopped at {got}")
            continue
        if isinstance(got, PdsDiverged) or got.stack:
            problems.append(f"main {v}: PDS did not terminate ({got})")
            continue
        if dict(zip(pds.gvars, got.location)) != want.outcome.globals():
            problems.append(f"main {v}: {got.location} != {want.outcome.globals()}")

    for tag, out in sorted(k for k in instance_writes(program) if k[0] != program.entry):
        inst = derive_instance(program, tag, out)
        ex = ExplicitPDS(inst, bits)
        param = program.proc(tag).in_param
        exit_point = inst.final

        def at_exit(c: Configuration) -> bool:
            return len(c.stack) == 1 and c.stack[0][0] == exit_point

        for v in admitted_valuations(program, bits):
            for arg in range(1 << bits):
                want = run_procedure(program, tag, out, arg, v, bits, fuel)
                start = initial_configurations(inst, bits, v, {param: arg})
                got = pds_exec(ex, start, fuel=fuel, stop=at_exit)
                if not want.terminated:
                    if not isinstance(got, PdsDiverged):
                        problems.append(f"{tag}/{out} {v} arg={arg}: interpreter diverged only")
                    continue
                if isinstance(got, PdsDiverged) or not at_exit(got):
                    problems.append(f"{tag}/{out} {v} arg={arg}: PDS did not reach the exit")
                    continue
                frame = dict(zip(inst.frames[exit_point], got.stack[0][1]))
                if dict(zip(inst.gvars, got.location)) != want.outcome.globals():
                    problems.append(f"{tag}/{out} {v} arg={arg}: globals differ")
                if frame[param] != want.outcome.frame[param]:
                    problems.append(f"{tag}/{out} {v} arg={arg}: {param} {frame[param]} != {want.outcome.frame[param]}")
    return problems


# --------------------------------------------------------------------------
# composition semantics: one composed run equals two independent runs


def valuation_pairs(program: Program, bits: int, limit: int = 4096, seed: int = 7):
    import random

    stores = list(admitted_valuations(program, bits))
    total = len(stores) ** 2
    if total <= limit:
        return [(a, b) for a in stores for b in stores]
    rng = random.Random(seed)
    return [(rng.choice(stores), rng.choice(stores)) for _ in range(400)]


def composition_mismatches(program: Program, mode: str, bits: int = 2, fuel: int = 3_000) -> list[str]:
    from nilcheck.derivation import derive
    from nilcheck.interpreter import run
    from nilcheck.pds import Configuration, ExplicitPDS, PdsDiverged, pds_exec
    from nilcheck.selfcomp import compose

    composed = compose(derive(program), program.labelled("low"), mode)
    pds = composed.pds
    explicit = ExplicitPDS(pds, bits)
    rt = composed.rt if mode == "contracted" else frozenset()
    final_copy = composed.final_copy_point
    problems = []

    def done(c: Configuration) -> bool:
        return bool(c.stack) and c.stack[0][0] == final_copy

    for a, b in valuation_pairs(program, bits):
        init = dict(a)
        init.update({composed.copy_name(x): b[x] for x in program.global_names if composed.copy_name(x) != x})
        g = tuple(init[v] for v in pds.gvars)
        start = Configuration(g, ((pds.start, (0,) * len(pds.frames[pds.start])),))
        got = pds_exec(explicit, start, fuel=fuel, stop=done)
        first = run(program, a, bits, fuel)
        if not first.terminated:
            if not isinstance(got, PdsDiverged):
                problems.append(f"{a}/{b}: first run diverges, composed run stopped")
            continue
        b2 = dict(b)
        for x in rt:  # shared return stores carry over from the first run
            b2[x] = first.outcome.globals()[x]
        second = run(program, b2, bits, fuel)
        if not second.terminated:
            if not isinstance(got, PdsDiverged):
                problems.append(f"{a}/{b}: second run diverges, composed run stopped")
            continue
        if isinstance(got, PdsDiverged) or not done(got):
            problems.append(f"{a}/{b}: composed run did not reach the copy's final point")
            continue
        loc = dict(zip(pds.gvars, got.location))
        want = {x: v for x, v in first.outcome.globals().items() if x not in rt}
        want.update({composed.copy_name(x): v for x, v in second.outcome.globals().items()})
        if loc != want:
            problems.append(f"{a}/{b}: {loc} != {want}")
    return problems
