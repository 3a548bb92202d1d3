from __future__ import annotations

import random
from collections import deque

import pytest

from nilcheck.checker import (
    EPS,
    FINAL,
    SecuritySpec,
    Saturation,
    build_initial_set,
    check_ti,
    format_witness,
    initial_bits,
    post_star,
    replay,
)
from nilcheck.derivation import derive
from nilcheck.errors import ConstantOutOfRange, PreconditionError, StateBudgetExceeded
from nilcheck.frontend import load, parse_expr
from nilcheck.interpreter import brute_force_pair_oracle
from nilcheck.pds import Configuration, ExplicitPDS, GroundRule, apply_rule
from nilcheck.selfcomp import applicable_modes, compose

from support import corpus, corpus_program, corpus_sidecar

FUNC = corpus_program("func")


# --------------------------------------------------------------------------
# initial set


def test_func_initial_set_size():
    composed = compose(derive(FUNC), ["l"], "ordinary")
    spec = SecuritySpec(frozenset({"l"}))
    configs = list(build_initial_set(composed, spec, 2))
    assert len(configs) == 64
    assert initial_bits(composed, spec, 2) == 6
    idx = {v: i for i, v in enumerate(composed.pds.gvars)}
    assert all(c.location[idx["l"]] == c.location[idx["lt"]] for c in configs)
    assert {c.stack for c in configs} == {(("n1", ()),)}


def test_initial_set_honours_assumptions():
    prog = corpus_program("fourpath")
    composed = compose(derive(prog), prog.labelled("low"), "ordinary")
    spec = SecuritySpec.for_program(prog)
    pins = [parse_expr(f"b{i} = b{i}t") for i in range(1, 5)]
    free = list(build_initial_set(composed, spec, 1))
    pinned = list(build_initial_set(composed, spec, 1, pins))
    assert len(free) == 2 ** 8 and len(pinned) == 2 ** 4
    idx = {v: i for i, v in enumerate(composed.pds.gvars)}
    assert all(c.location[idx["l1"]] == 0 for c in free)


def test_state_budget():
    composed = compose(derive(corpus_program("counter")), ["l"], "ordinary")
    with pytest.raises(StateBudgetExceeded) as info:
        build_initial_set(composed, SecuritySpec(frozenset({"l"})), 3)
    assert info.value.needed == 27 and info.value.budget == 24
    with pytest.raises(StateBudgetExceeded):
        check_ti(FUNC, bits=4, budget=8)


def test_state_budget_env(monkeypatch):
    monkeypatch.setenv("NILCHECK_STATE_BUDGET", "4")
    with pytest.raises(StateBudgetExceeded):
        check_ti(FUNC, bits=2)


# --------------------------------------------------------------------------
# post* against a bounded breadth-first oracle


class RandomPDS:
    """Explicit PDS given by a list of ground rules (only ``successors`` is needed)."""

    def __init__(self, rules):
        self.table = {}
        for r in rules:
            self.table.setdefault((r.g, r.sym), []).append(r)

    def successors(self, g, sym):
        return tuple(self.table.get((g, sym), ()))


LOCS = [(0,), (1,)]
SYMS = [("a", ()), ("b", ()), ("c", ())]


def random_system(seed: int, n_rules: int = 20):
    rng = random.Random(seed)
    rules = set()
    while len(rules) < n_rules:
        g, sym, g2 = rng.choice(LOCS), rng.choice(SYMS), rng.choice(LOCS)
        word = tuple(rng.choice(SYMS) for _ in range(rng.choice([0, 1, 1, 2, 2])))
        rules.add(GroundRule(g, sym, g2, word, None))
    initial = {Configuration(rng.choice(LOCS), (rng.choice(SYMS),)) for _ in range(rng.randint(1, 3))}
    return RandomPDS(sorted(rules, key=repr)), sorted(initial, key=repr)


def summaries(system, rules):
    """Fixpoint of (p, sym, p'): from p with sym on top, some run pops exactly sym and reaches p'."""
    out = set()
    changed = True
    while changed:
        changed = False
        for r in rules:
            if not r.word:
                found = {r.g2}
            elif len(r.word) == 1:
                found = {q for (p, s, q) in out if (p, s) == (r.g2, r.word[0])}
            else:
                mids = {q for (p, s, q) in out if (p, s) == (r.g2, r.word[0])}
                found = {q for (p, s, q) in out if p in mids and s == r.word[1]}
            for q in found:
                if (r.g, r.sym, q) not in out:
                    out.add((r.g, r.sym, q))
                    changed = True
    return out


def bfs_reachable(system, rules, initial, depth: int = 6, steps: int = 10**4):
    """Breadth-first search over stacks of at most ``depth`` symbols.

    A run may climb above the bound and come back down; every such excursion
    pops its first symbol above the bound, so it is taken in one hop through
    the pop summaries and the search is exact.
    """
    jumps = summaries(system, rules)
    seen = {(c.location, c.stack) for c in initial}
    todo = deque(seen)
    n = 0
    while todo:
        n += 1
        assert n <= steps
        g, stack = todo.popleft()
        if not stack:
            continue
        nexts = [(r.g2, r.word + stack[1:]) for r in system.successors(g, stack[0])]
        nexts += [(q, stack[1:]) for (p, s, q) in jumps if (p, s) == (g, stack[0])]
        # a push past the bound is only useful once its new top is popped again
        nexts += [(q, k[1][1:]) for k in nexts if len(k[1]) > depth
                  for (p, s, q) in jumps if (p, s) == (k[0], k[1][0])]
        for key in nexts:
            if len(key[1]) <= depth and key not in seen:
                seen.add(key)
                todo.append(key)
    return seen


@pytest.mark.parametrize("seed", range(100))
def test_post_star_matches_bfs(seed):
    system, initial = random_system(seed)
    rules = [r for rs in system.table.values() for r in rs]
    assert post_star(system, initial).accepted(6) == bfs_reachable(system, rules, initial)


def test_post_star_without_rules_accepts_initial_set():
    initial = [Configuration((0,), (("a", ()),)), Configuration((1,), (("b", ()),))]
    aut = post_star(RandomPDS([]), initial)
    assert aut.accepted(4) == {(c.location, c.stack) for c in initial}


def test_single_pop():
    rule = GroundRule((0,), ("a", ()), (1,), (), None)
    aut = post_star(RandomPDS([rule]), [Configuration((0,), (("a", ()),))])
    assert aut.accepted(3) == {((0,), (("a", ()),)), ((1,), ())}
    assert ((1,), EPS, FINAL) in aut
    assert aut.rel[((1,), EPS, FINAL)].kind == "pop"


def test_transitions_carry_provenance():
    system, initial = random_system(3)
    aut = post_star(system, initial)
    kinds = {p.kind for p in aut.rel.values()}
    assert kinds <= {"init", "rule", "push", "companion", "pop", "eps"}
    assert all(p.rule is not None for p in aut.rel.values() if p.kind in ("rule", "push", "pop", "companion"))


def test_incremental_batches_match_one_shot():
    system, initial = random_system(11)
    sat = Saturation(system)
    for c in initial:
        sat.add_initial(c)
        sat.run(stop_on_bad=False)
    assert sat.aut.accepted(5) == post_star(system, initial).accepted(5)


# --------------------------------------------------------------------------
# verdicts and witnesses


@pytest.mark.parametrize("bits", [1, 2, 4, 8])
def test_func_insecure_at_every_width(bits):
    assert check_ti(FUNC, bits=bits).verdict == "INSECURE"


def test_func_witness_at_one_bit():
    v = check_ti(FUNC, bits=1)
    w = v.witness
    composed = v.composed
    g = dict(zip(w.gvars, w.initial.location))
    assert g["l"] == g["lt"] and g["h"] != g["ht"]
    end = dict(zip(w.gvars, w.violation.location))
    assert end["l"] != end["lt"]
    assert w.violation.stack[0][0] == composed.final_copy_point
    assert replay(ExplicitPDS(composed.pds, 1), w)
    assert {str(c) for c in w.flow_rule().constraints} & {"l' = c", "lt' = ct"}


def test_format_witness_marks_flow_edge():
    v = check_ti(FUNC, bits=1)
    table = format_witness(v.witness, v.composed)
    assert table.splitlines()[0].split()[:3] == ["step", "point", "origin"]
    assert "*" in table and "flow edge" in table


def test_secure_has_no_witness():
    v = check_ti(corpus_program("lh0"), bits=2)
    assert v.secure and v.witness is None


def test_tampered_witness_does_not_replay():
    v = check_ti(FUNC, bits=1)
    w = v.witness
    rule, after = w.steps[0]
    bogus = GroundRule(rule.g, rule.sym, tuple(1 - x for x in rule.g2), rule.word, rule.origin)
    from dataclasses import replace

    broken = replace(w, steps=((bogus, apply_rule(w.initial, bogus)),) + w.steps[1:])
    assert not replay(ExplicitPDS(v.composed.pds, 1), broken)


def _corpus_cases(max_bits: int):
    for name, _, side in corpus():
        for n in side.bits:
            if n <= max_bits:
                for mode in side.modes:
                    yield pytest.param(name, n, mode, id=f"{name}-N{n}-{mode}")


@pytest.mark.parametrize("name,bits,mode", list(_corpus_cases(2)))
def test_corpus_verdict_and_witness(name, bits, mode):
    program = corpus_program(name)
    side = corpus_sidecar(name)
    spec = SecuritySpec.for_program(program, side.integrity, side.low)
    assumes = [parse_expr(a) for a in side.assume]
    v = check_ti(program, spec, bits, mode, pair_assumes=assumes)
    assert v.verdict == side.expected[bits]
    if v.secure:
        return
    w = v.witness
    assert replay(ExplicitPDS(v.composed.pds, bits), w)
    g0 = dict(zip(w.gvars, w.initial.location))
    g1 = dict(zip(w.gvars, w.violation.location))
    copy = v.composed.copy_name
    assert all(g0[x] == g0[copy(x)] for x in spec.observed)
    assert any(g1[x] != g1[copy(x)] for x in spec.observed)
    assert w.violation.stack[0][0] == v.composed.final_copy_point
    assert w.flow_edge is not None


def test_nonterminating_program_is_checked_termination_insensitively():
    prog = corpus_program("nonterm")
    assert check_ti(prog, bits=1).verdict == "SECURE"
    assert check_ti(prog, bits=2).verdict == "INSECURE"
    assert brute_force_pair_oracle(prog, ["l"], 2, fuel=500).verdict == "INSECURE"


def test_pair_assumptions():
    prog = corpus_program("fourpath")
    pins = [parse_expr(f"b{i} = b{i}t") for i in range(1, 5)]
    assert check_ti(prog, bits=1).verdict == "INSECURE"
    assert check_ti(prog, bits=1, pair_assumes=pins).verdict == "SECURE"
    with pytest.raises(PreconditionError):
        check_ti(prog, bits=1, pair_assumes=[parse_expr("zz = 0")])


def test_constant_out_of_range():
    prog = load("low l; high h; proc main() { l := h + 5; }")
    with pytest.raises(ConstantOutOfRange):
        check_ti(prog, bits=2)
    assert check_ti(prog, bits=3).verdict == "INSECURE"


def test_unknown_observed_variable():
    with pytest.raises(PreconditionError):
        check_ti(FUNC, SecuritySpec(frozenset({"zz"})), 1)


def test_integrity_duality():
    for name, program, _ in corpus():
        highs = program.labelled("high")
        if not highs:
            continue
        a = check_ti(program, SecuritySpec.for_program(program, integrity=True), 1, witness=False)
        b = check_ti(program, SecuritySpec(frozenset(highs)), 1, witness=False)
        assert a.verdict == b.verdict, name


def test_integrity_example():
    prog = corpus_program("integ")
    assert check_ti(prog, SecuritySpec.for_program(prog, integrity=True), 2).verdict == "INSECURE"
    assert check_ti(prog, SecuritySpec.for_program(prog), 2).verdict == "SECURE"


def test_oracle_equivalence_at_two_bits():
    for name, program, side in corpus():
        if not side.terminating:
            continue
        spec = SecuritySpec.for_program(program, side.integrity, side.low)
        assumes = [parse_expr(a) for a in side.assume]
        oracle = brute_force_pair_oracle(program, spec.observed, 2, pair_assumes=assumes).verdict
        for mode in applicable_modes(derive(program), spec.observed):
            assert check_ti(program, spec, 2, mode, assumes, witness=False).verdict == oracle, (name, mode)


def test_insecure_is_monotone_in_width():
    for name, program, side in corpus():
        spec = SecuritySpec.for_program(program, side.integrity, side.low)
        assumes = [parse_expr(a) for a in side.assume]
        seen_insecure = False
        for n in (1, 2):
            v = check_ti(program, spec, n, "compact" if "compact" in side.modes else "ordinary", assumes, witness=False)
            if seen_insecure:
                assert v.verdict == "INSECURE", (name, n)
            seen_insecure = seen_insecure or v.verdict == "INSECURE"


def test_stats_are_reported():
    v = check_ti(FUNC, bits=2)
    assert {"initial", "transitions", "rules", "conjuncts", "seconds"} <= v.stats.keys()
    assert v.stats["rules"] == 18


def test_tied_assumptions_match_generic_filter():
    """``x = xt`` ties two initial slots; ``x - xt = 0`` is evaluated per row instead."""
    prog = corpus_program("fourpath")
    composed = compose(derive(prog), prog.labelled("low"), "ordinary")
    spec = SecuritySpec.for_program(prog)
    for bits in (1, 2):
        tied = [parse_expr(f"b{i} = b{i}t") for i in (1, 3)]
        generic = [parse_expr(f"b{i} - b{i}t = 0") for i in (1, 3)]
        a = set(build_initial_set(composed, spec, bits, tied))
        b = set(build_initial_set(composed, spec, bits, generic))
        assert a == b and len(a) == (1 << bits) ** 6
        assert initial_bits(composed, spec, bits, tied) == 6 * bits
