"""Reference big-step interpreter and the brute-force noninterference oracle.

Globals live in the heap ``mu``; parameters and ``letvar`` bindings live in the
stack ``lam``.  Each stack location remembers which procedure, variable and
call depth it belongs to, which is what the scope-safety check relies on.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import ConstantOutOfRange, EnumerationTooLarge, RuntimeFault, UnboundLocation
from .frontend import (
    Assign,
    BinOp,
    Call,
    Const,
    Expr,
    If,
    Letvar,
    Name,
    Program,
    Seq,
    Skip,
    Stmt,
    While,
    apply_op,
    eval_pure,
    expr_consts,
    max_constant,
    pinned_constants,
)

DEFAULT_FUEL = 10**6
DEFAULT_MAX_DEPTH = 200
PAIR_GUARD = 2**24

SECURE = "SECURE"
INSECURE = "INSECURE"


@dataclass
class Store:
    bits: int
    heap: dict[int, int] = field(default_factory=dict)
    stack: dict[int, int] = field(default_factory=dict)
    loc_meta: dict[int, tuple[str, str, int]] = field(default_factory=dict)
    next_loc: int = 0
    global_locs: dict[str, int] = field(default_factory=dict)

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1

    @classmethod
    def initial(cls, program: Program, values: dict[str, int], bits: int) -> "Store":
        store = cls(bits)
        mask = store.mask
        for name in program.global_names:
            loc = store.next_loc
            store.next_loc += 1
            store.global_locs[name] = loc
            store.heap[loc] = values.get(name, 0) & mask
        return store

    def fresh(self, proc: str, var: str, depth: int) -> int:
        loc = self.next_loc
        self.next_loc += 1
        self.loc_meta[loc] = (proc, var, depth)
        return loc

    def read(self, loc: int) -> int:
        if loc in self.heap:
            return self.heap[loc]
        return self.stack[loc]

    def globals(self) -> dict[str, int]:
        return {name: self.heap[loc] for name, loc in self.global_locs.items()}

    def copy(self) -> "Store":
        return Store(
            self.bits,
            dict(self.heap),
            dict(self.stack),
            dict(self.loc_meta),
            self.next_loc,
            dict(self.global_locs),
        )


@dataclass(frozen=True)
class Final:
    store: Store
    frame: dict[str, int] = field(default_factory=dict)  # surviving parameter values (procedure runs only)

    def globals(self) -> dict[str, int]:
        return self.store.globals()


@dataclass(frozen=True)
class Diverged:
    reason: str = "fuel"


@dataclass(frozen=True)
class RunResult:
    outcome: Final | Diverged
    steps_used: int

    @property
    def terminated(self) -> bool:
        return isinstance(self.outcome, Final)


class _OutOfFuel(Exception):
    pass


class _TooDeep(Exception):
    pass


class _Machine:
    def __init__(self, program: Program, store: Store, fuel: int, max_depth: int):
        self.program = program
        self.store = store
        self.fuel = fuel
        self.used = 0
        self.max_depth = max_depth
        self.mask = store.mask

    def tick(self) -> None:
        self.used += 1
        if self.used > self.fuel:
            raise _OutOfFuel

    def eval(self, e: Expr, env: dict[str, int]) -> int:
        if isinstance(e, Const):
            return e.value & self.mask
        if isinstance(e, Name):
            loc = env.get(e.name)
            if loc is None:
                raise UnboundLocation(e.name)
            return self.store.read(loc)
        if isinstance(e, BinOp):
            return apply_op(e.op, self.eval(e.left, env), self.eval(e.right, env), self.mask)
        return int(not self.eval(e.operand, env))

    def write(self, loc: int, value: int, proc: str, depth: int) -> None:
        store = self.store
        if loc in store.heap:
            store.heap[loc] = value
            return
        owner = store.loc_meta[loc]
        if owner[0] != proc or owner[2] != depth:
            raise RuntimeFault("ScopeViolation", f"{proc} at depth {depth} wrote {owner[1]!r} owned by {owner[0]}")
        store.stack[loc] = value

    def exec(self, s: Stmt, env: dict[str, int], proc: str, depth: int) -> None:
        self.tick()
        if isinstance(s, Skip):
            return
        if isinstance(s, Assign):
            loc = env.get(s.target)
            if loc is None:
                raise UnboundLocation(s.target)
            self.write(loc, self.eval(s.expr, env), proc, depth)
        elif isinstance(s, Seq):
            for part in s.stmts:
                self.exec(part, env, proc, depth)
        elif isinstance(s, If):
            branch = s.then if self.eval(s.cond, env) else s.orelse
            self.exec(branch, env, proc, depth)
        elif isinstance(s, While):
            while self.eval(s.cond, env):
                self.exec(s.body, env, proc, depth)
                self.tick()
        elif isinstance(s, Letvar):
            value = self.eval(s.init, env)
            loc = self.store.fresh(proc, s.name, depth)
            self.store.stack[loc] = value
            self.exec(s.body, {**env, s.name: loc}, proc, depth)
            del self.store.stack[loc]
        elif isinstance(s, Call):
            self.call(s.proc, self.eval(s.arg, env), env[s.out], depth + 1)
        else:
            raise TypeError(s)

    def call(self, tag: str, value: int, out_loc: int, depth: int) -> dict[str, int]:
        """Run procedure ``tag``; returns the final value of its in-parameter."""
        if depth > self.max_depth:
            raise _TooDeep
        callee = self.program.proc(tag)
        env = dict(self.store.global_locs)
        loc = self.store.fresh(tag, callee.in_param, depth)
        self.store.stack[loc] = value
        env[callee.in_param] = loc
        env[callee.out_param] = out_loc
        self.exec(callee.body, env, tag, depth)
        frame = {callee.in_param: self.store.stack.pop(loc)}
        return frame


def check_constants(program: Program, bits: int, extra: Iterable[Expr] = ()) -> None:
    """Refuse literals that do not fit in the N-bit domain."""
    biggest = max([max_constant(program), *(c for e in extra for c in expr_consts(e))])
    if biggest >= 1 << bits:
        raise ConstantOutOfRange(biggest, bits)


def _run(program: Program, store: Store, fuel: int, max_depth: int, body) -> RunResult:
    machine = _Machine(program, store, fuel, max_depth)
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 20 * max_depth + 1000))
    try:
        frame = body(machine)
    except _OutOfFuel:
        return RunResult(Diverged("fuel"), fuel)
    except _TooDeep:
        return RunResult(Diverged("depth"), machine.used)
    finally:
        sys.setrecursionlimit(old_limit)
    return RunResult(Final(store, frame or {}), machine.used)


def run(
    program: Program,
    init: dict[str, int],
    bits: int,
    fuel: int = DEFAULT_FUEL,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> RunResult:
    """Execute ``main`` from the initial global valuation ``init`` (missing globals are 0)."""
    check_constants(program, bits)
    unknown = set(init) - set(program.global_names)
    if unknown:
        raise UnboundLocation(sorted(unknown)[0])
    store = Store.initial(program, init, bits)
    main = program.main
    return _run(program, store, fuel, max_depth, lambda m: m.exec(main.body, dict(store.global_locs), main.tag, 0))


def run_procedure(
    program: Program,
    tag: str,
    out_global: str,
    arg: int,
    init: dict[str, int],
    bits: int,
    fuel: int = DEFAULT_FUEL,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> RunResult:
    """Execute one call ``tag(arg, out_global)`` in isolation.

    The returned :class:`Final` carries the in-parameter's value at the end
    of the body, for comparing against the callee's stack frame.
    """
    check_constants(program, bits)
    store = Store.initial(program, init, bits)
    out_loc = store.global_locs[out_global]
    return _run(program, store, fuel, max_depth, lambda m: m.call(tag, arg & store.mask, out_loc, 1))


def eval_expr(store: Store, e: Expr, env: dict[str, int] | None = None) -> int:
    """Evaluate ``e`` against ``store``; names resolve through ``env`` (default: the globals)."""
    machine = _Machine(Program((), ()), store, DEFAULT_FUEL, DEFAULT_MAX_DEPTH)
    return machine.eval(e, store.global_locs if env is None else env)


# --------------------------------------------------------------------------
# brute-force pair oracle


def valuations(names: Sequence[str], bits: int) -> Iterator[dict[str, int]]:
    """All N-bit valuations of ``names``; the last name varies fastest."""
    for values in itertools.product(range(1 << bits), repeat=len(names)):
        yield dict(zip(names, values))


@dataclass(frozen=True)
class OracleVerdict:
    verdict: str
    pair: tuple[dict[str, int], dict[str, int]] | None = None
    finals: tuple[dict[str, int], dict[str, int]] | None = None
    pairs_checked: int = 0
    diverged_runs: int = 0

    @property
    def secure(self) -> bool:
        return self.verdict == SECURE


def _same_across(a: Expr, x: str, suffix: str) -> bool:
    names = {x, x + suffix}
    return (
        isinstance(a, BinOp) and a.op == "=" and isinstance(a.left, Name) and isinstance(a.right, Name)
        and {a.left.name, a.right.name} == names and len(names) == 2
    )


def brute_force_pair_oracle(
    program: Program,
    low: Iterable[str],
    bits: int,
    fuel: int = DEFAULT_FUEL,
    pair_assumes: Sequence[Expr] = (),
    suffix: str = "t",
    guard: int = PAIR_GUARD,
) -> OracleVerdict:
    """Decide termination-insensitive noninterference by running every store pair.

    Two runs from initial stores that agree on ``low`` must, when both
    terminate, agree on ``low`` at the end.  Runs that diverge are skipped.
    ``pair_assumes`` are extra conditions over both copies, where the second
    copy's variables carry ``suffix`` (e.g. ``b1 = b1t``).
    """
    low = [g for g in program.global_names if g in set(low)]
    names = program.global_names
    mask = (1 << bits) - 1
    check_constants(program, bits, pair_assumes)

    pins = pinned_constants(program.assumes, mask)
    open_names = [x for x in names if x not in pins]
    stores = []
    for v in valuations(open_names, bits):
        v.update(pins)
        if all(eval_pure(a, v, mask) for a in program.assumes):
            stores.append({x: v[x] for x in names})
    # "x = x<suffix>" only says both runs agree on x: group by it like a low
    agree = [x for x in names if any(_same_across(a, x, suffix) for a in pair_assumes)]
    pair_assumes = [a for a in pair_assumes if not any(_same_across(a, x, suffix) for x in agree)]
    key_names = low + [x for x in agree if x not in low]
    groups: dict[tuple[int, ...], list[dict[str, int]]] = {}
    for v in stores:
        groups.setdefault(tuple(v[x] for x in key_names), []).append(v)
    pairs = sum(len(g) ** 2 for g in groups.values())
    if pairs > guard:
        raise EnumerationTooLarge(pairs, guard)

    finals: dict[tuple[int, ...], tuple[int, ...] | None] = {}
    diverged = 0
    for v in stores:
        result = run(program, v, bits, fuel)
        key = tuple(v[x] for x in names)
        if result.terminated:
            out = result.outcome.globals()
            finals[key] = tuple(out[x] for x in low)
        else:
            finals[key] = None
            diverged += 1

    def fin(v: dict[str, int]) -> tuple[int, ...] | None:
        return finals[tuple(v[x] for x in names)]

    def final_store(v: dict[str, int]) -> dict[str, int]:
        return dict(zip(low, fin(v)))

    checked = 0
    for group in groups.values():
        if not pair_assumes:
            seen: dict[tuple[int, ...], dict[str, int]] = {}
            for v in group:
                f = fin(v)
                if f is None:
                    continue
                checked += 1
                if seen and f not in seen:
                    other = next(iter(seen.values()))
                    return OracleVerdict(INSECURE, (other, v), (final_store(other), final_store(v)), checked, diverged)
                seen.setdefault(f, v)
            continue
        for a, b in itertools.product(group, repeat=2):
            joint = {**a, **{x + suffix: b[x] for x in names}}
            if not all(eval_pure(p, joint, mask) for p in pair_assumes):
                continue
            checked += 1
            fa, fb = fin(a), fin(b)
            if fa is not None and fb is not None and fa != fb:
                return OracleVerdict(INSECURE, (a, b), (final_store(a), final_store(b)), checked, diverged)
    return OracleVerdict(SECURE, None, None, checked, diverged)
