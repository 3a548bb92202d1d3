from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilcheck.errors import ConstantOutOfRange, EnumerationTooLarge, RuntimeFault, UnboundLocation
from nilcheck.frontend import load, parse_expr
from nilcheck.interpreter import (
    INSECURE,
    SECURE,
    Diverged,
    Final,
    Store,
    _Machine,
    brute_force_pair_oracle,
    eval_expr,
    run,
    run_procedure,
    valuations,
)

from support import corpus_program

FUNC = corpus_program("func")


def _globals(program, init, bits=2, **kw):
    result = run(program, init, bits, **kw)
    assert isinstance(result.outcome, Final)
    return result.outcome.globals()


@pytest.mark.parametrize("h,expected", [(0, 0), (1, 1), (2, 2), (3, 3)])
def test_func_copies_h_into_l(h, expected):
    out = _globals(FUNC, {"h": h, "l": 1})
    assert out == {"l": expected, "h": h}


def test_wraparound_arithmetic():
    prog = load("low l; proc main() { l := l + 3; l := l * 3; }")
    assert _globals(prog, {"l": 2}) == {"l": ((2 + 3) % 4 * 3) % 4}
    prog = load("low l; proc main() { l := l - 1; }")
    assert _globals(prog, {"l": 0}) == {"l": 3}


def test_comparisons_and_logic_yield_bits():
    prog = load("low a, b, c; proc main() { a := 2 < 3; b := !2; c := 1 && 2 || 0; }")
    assert _globals(prog, {}) == {"a": 1, "b": 0, "c": 1}


def test_missing_globals_default_to_zero():
    assert _globals(FUNC, {}) == {"l": 0, "h": 0}


def test_unknown_init_name_is_rejected():
    with pytest.raises(UnboundLocation):
        run(FUNC, {"zz": 1}, 2)


def test_constant_out_of_range():
    prog = load("low l; proc main() { l := 4; }")
    with pytest.raises(ConstantOutOfRange):
        run(prog, {}, 2)
    assert _globals(prog, {}, bits=3) == {"l": 4}


def test_fuel_exhaustion_is_divergence():
    prog = load("low l; proc main() { while (1) { skip; } }")
    result = run(prog, {}, 2, fuel=100)
    assert result.outcome == Diverged("fuel")
    assert not result.terminated


def test_depth_cap_is_divergence():
    prog = load("low l; proc main() { f(0, l); } proc f(in a, out b) { f(a, b); }")
    result = run(prog, {}, 2, max_depth=30)
    assert result.outcome == Diverged("depth")


def test_recursion_counts():
    prog = corpus_program("rec_secure")
    for l in range(8):
        assert _globals(prog, {"l": l}, bits=3)["l"] == l


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3))
def test_determinism(l, h):
    a = run(FUNC, {"l": l, "h": h}, 2)
    b = run(FUNC, {"l": l, "h": h}, 2)
    assert a.outcome.globals() == b.outcome.globals()
    assert a.steps_used == b.steps_used


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(1, 200))
def test_fuel_monotonicity(h, fuel):
    """More fuel never changes a result that was reached with less."""
    small = run(FUNC, {"h": h}, 2, fuel=fuel)
    big = run(FUNC, {"h": h}, 2, fuel=fuel + 50)
    if small.terminated:
        assert big.terminated
        assert big.outcome.globals() == small.outcome.globals()
        assert big.steps_used == small.steps_used
    else:
        assert small.steps_used == fuel


def test_stack_locations_are_released():
    prog = corpus_program("shadow")
    store = Store.initial(prog, {"l": 1, "h": 2}, 2)
    machine = _Machine(prog, store, 10**4, 50)
    machine.exec(prog.main.body, dict(store.global_locs), "main", 0)
    assert store.stack == {}
    # two letvar locations were allocated, each with its owner recorded
    owners = sorted(v[1] for v in store.loc_meta.values())
    assert owners == ["x", "x#1"]


def test_recursive_frames_are_distinct_locations():
    prog = corpus_program("rec_secure")
    store = Store.initial(prog, {"l": 3}, 2)
    machine = _Machine(prog, store, 10**4, 50)
    machine.exec(prog.main.body, dict(store.global_locs), "main", 0)
    depths = sorted(d for (_, _, d) in store.loc_meta.values())
    assert depths == [1, 2, 3, 4]
    assert store.stack == {}


def test_scope_violation_is_detected():
    prog = corpus_program("func")
    store = Store.initial(prog, {}, 2)
    loc = store.fresh("func", "c", 1)
    store.stack[loc] = 0
    machine = _Machine(prog, store, 100, 10)
    with pytest.raises(RuntimeFault) as info:
        machine.write(loc, 1, "main", 0)
    assert info.value.kind == "ScopeViolation"


def test_run_procedure_reports_in_parameter():
    result = run_procedure(FUNC, "func", "l", 3, {}, 2)
    assert result.outcome.globals()["l"] == 3
    assert result.outcome.frame == {"x1": 0}


def test_eval_expr():
    store = Store.initial(FUNC, {"l": 1, "h": 2}, 2)
    assert eval_expr(store, parse_expr("l + h * 2")) == 1
    with pytest.raises(UnboundLocation):
        eval_expr(store, parse_expr("zz"))


def test_valuations_order():
    vs = list(valuations(["a", "b"], 1))
    assert vs == [{"a": 0, "b": 0}, {"a": 0, "b": 1}, {"a": 1, "b": 0}, {"a": 1, "b": 1}]


# --------------------------------------------------------------------------
# oracle


def test_oracle_func_insecure_with_witness_pair():
    v = brute_force_pair_oracle(FUNC, ["l"], 1)
    assert v.verdict == INSECURE
    a, b = v.pair
    assert a["l"] == b["l"] and a["h"] != b["h"]
    assert v.finals[0] != v.finals[1]


def test_oracle_secure_cases():
    assert brute_force_pair_oracle(corpus_program("lh0"), ["l"], 2).verdict == SECURE
    assert brute_force_pair_oracle(corpus_program("branch"), ["l", "x"], 2).verdict == SECURE


def test_oracle_respects_program_assumptions():
    prog = corpus_program("branch")
    unassumed = load("low l, x; high h, y; proc main() { if (l) { y := h; } if (!l) { x := y; } }")
    assert brute_force_pair_oracle(prog, ["l", "x"], 1).verdict == SECURE
    assert brute_force_pair_oracle(unassumed, ["l", "x"], 1).verdict == INSECURE


def test_oracle_pair_assumptions():
    prog = corpus_program("fourpath")
    pins = [parse_expr(f"b{i} = b{i}t") for i in range(1, 5)]
    assert brute_force_pair_oracle(prog, prog.labelled("low"), 1).verdict == INSECURE
    assert brute_force_pair_oracle(prog, prog.labelled("low"), 1, pair_assumes=pins).verdict == SECURE


def test_oracle_skips_diverging_runs():
    prog = corpus_program("nonterm")
    one = brute_force_pair_oracle(prog, ["l"], 1, fuel=500)
    assert one.verdict == SECURE and one.diverged_runs == 2  # h = 1, either l
    assert brute_force_pair_oracle(prog, ["l"], 2, fuel=500).verdict == INSECURE


def test_oracle_guard():
    with pytest.raises(EnumerationTooLarge):
        brute_force_pair_oracle(FUNC, ["l"], 2, guard=10)


@pytest.mark.parametrize("name", ["fourpath", "branch", "func"])
def test_oracle_agreement_shortcut_matches_generic_filter(name):
    """``x = xt`` is folded into the grouping key; ``x - xt = 0`` is filtered pair by pair."""
    prog = corpus_program(name)
    lows = prog.labelled("low")
    highs = prog.labelled("high")[:2]
    folded = [parse_expr(f"{x}t = {x}") for x in highs]
    generic = [parse_expr(f"{x} - {x}t = 0") for x in highs]
    for bits in (1, 2):
        a = brute_force_pair_oracle(prog, lows, bits, pair_assumes=folded)
        b = brute_force_pair_oracle(prog, lows, bits, pair_assumes=generic)
        assert a.verdict == b.verdict
