"""Noninterference checking by post* saturation over a composed system.

The property "low-equal at the start implies low-equal whenever the copy
reaches its final point" is decided as reachability: it fails iff some
configuration with the copy's final point on top and unequal low values is
reachable from the low-equal initial set.

Reachable configurations are represented by a configuration automaton
built with the standard post* saturation procedure.  Its states are the
control locations (global valuations), one auxiliary state per
``(location, callee entry symbol)`` pair created by push rules, and a
single accepting sink.  Every transition records how it was derived, which
is enough to rebuild a concrete rule sequence for any reachable
configuration.
"""

from __future__ import annotations

import itertools
import operator
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

from .derivation import derive
from .errors import ConstantOutOfRange, PreconditionError, StateBudgetExceeded
from .frontend import HIGH, LOW, BinOp, Const, Expr, Name, Program, eval_pure, expr_consts, expr_vars, max_constant, pinned_constants
from .pds import Configuration, ExplicitPDS, GroundRule, SymbolicRule, apply_rule, state_budget
from .selfcomp import ComposedPDS, compose

SECURE = "SECURE"
INSECURE = "INSECURE"
DEFAULT_BITS = 2
DEFAULT_BATCH = 64


# --------------------------------------------------------------------------
# specification and initial set


@dataclass(frozen=True)
class SecuritySpec:
    """Which variables the adversary compares between the two runs."""

    observed: frozenset[str]
    mode: str = "confidentiality"  # or "integrity": observed are the high-integrity sinks

    @classmethod
    def for_program(cls, program: Program, integrity: bool = False, low: Iterable[str] | None = None) -> "SecuritySpec":
        if low is not None:
            observed = frozenset(low)
        else:
            observed = frozenset(program.labelled(HIGH if integrity else LOW))
        return cls(observed, "integrity" if integrity else "confidentiality")


def _pair_info(composed: ComposedPDS, spec: SecuritySpec) -> tuple[list[str], dict[str, str]]:
    """Free variables of the initial set and the copies forced equal to them."""
    pds = composed.pds
    unknown = sorted(spec.observed - set(composed.original.gvars))
    if unknown:
        raise PreconditionError("UnknownObservedVariable", f"{unknown} are not globals of the program")
    tied = {composed.copy_name(x): x for x in composed.original.gvars if x in spec.observed}
    tied = {c: x for c, x in tied.items() if c != x}
    free = [g for g in pds.gvars if g not in tied]
    free += list(pds.frames[pds.start])
    return free, tied


@dataclass
class _Layout:
    free: list[str]  # enumerated, in order
    tied: dict[str, str]  # variable -> the free variable it equals
    pins: dict[str, int]  # variable -> constant
    conditions: list[Expr]  # assumptions not already captured by ties or pins


def _layout(composed: ComposedPDS, spec: SecuritySpec, mask: int, pair_assumes: Sequence[Expr]) -> _Layout:
    """Split the initial variables into enumerated, tied and pinned ones.

    A top-level ``x = c`` assumption pins ``x``; ``x = y`` between two
    enumerated variables ties ``y`` to ``x``.  Either way the assumption is
    satisfied by construction and is not re-evaluated per row.
    """
    free, tied = _pair_info(composed, spec)
    conditions = [*composed.pds.assumes, *pair_assumes]
    pins = {v: c for v, c in pinned_constants(conditions, mask).items() if v in free}
    free = [v for v in free if v not in pins]
    rest = []
    for c in conditions:
        if isinstance(c, BinOp) and c.op == "=":
            left, right = c.left, c.right
            if isinstance(right, Name) and not isinstance(left, Name):
                left, right = right, left
            if isinstance(left, Name) and isinstance(right, Const) and pins.get(left.name) == right.value & mask:
                continue
            if isinstance(left, Name) and isinstance(right, Name) and left.name in free and right.name in free:
                if left.name != right.name:
                    free.remove(right.name)
                    for v, orig in tied.items():
                        if orig == right.name:
                            tied[v] = left.name
                    tied[right.name] = left.name
                continue
        rest.append(c)
    return _Layout(free, tied, pins, rest)


def initial_bits(
    composed: ComposedPDS, spec: SecuritySpec, bits: int, pair_assumes: Sequence[Expr] = ()
) -> int:
    """Bits of freedom in the initial set (tied and pinned variables excluded)."""
    return bits * len(_layout(composed, spec, (1 << bits) - 1, pair_assumes).free)


def build_initial_set(
    composed: ComposedPDS,
    spec: SecuritySpec,
    bits: int,
    pair_assumes: Sequence[Expr] = (),
    budget: int | None = None,
) -> Iterator[Configuration]:
    """Low-equal start configurations in lexicographic order (last variable fastest).

    Observed globals are equal across the copies; everything else, including
    the start frame's locals, ranges freely.  Program assumptions hold for
    both copies and ``pair_assumes`` add conditions relating the copies.
    """
    pds = composed.pds
    mask = (1 << bits) - 1
    layout = _layout(composed, spec, mask, pair_assumes)
    free, conditions = layout.free, layout.conditions
    needed = bits * len(free)
    limit = state_budget(budget)
    if needed > limit:
        raise StateBudgetExceeded(needed, limit)
    frame = pds.frames[pds.start]

    # layout: free values, then pinned constants; tied variables read their original's slot
    names = free + list(layout.pins)
    slot = {v: i for i, v in enumerate(names)}
    slot.update({v: slot[orig] for v, orig in layout.tied.items()})
    pick_g = operator.itemgetter(*[slot[v] for v in pds.gvars]) if pds.gvars else (lambda _: ())
    frame_slots = [slot[v] for v in frame]
    fixed = tuple(layout.pins.values())
    start = pds.start

    def gen() -> Iterator[Configuration]:
        for values in itertools.product(range(mask + 1), repeat=len(free)):
            row = values + fixed
            if conditions:
                env = {v: row[i] for v, i in slot.items()}
                if not all(eval_pure(c, env, mask) for c in conditions):
                    continue
            g = pick_g(row)
            if len(pds.gvars) == 1:
                g = (g,)
            yield Configuration(g, ((start, tuple(row[i] for i in frame_slots)),))

    return gen()


# --------------------------------------------------------------------------
# post* saturation


class Mid(NamedTuple):
    """Auxiliary automaton state for callee entry ``sym`` at location ``p``."""

    p: tuple
    sym: tuple


FINAL = "F"
EPS = None

Transition = tuple  # (source state, symbol or EPS, target state)


class Prov(NamedTuple):
    kind: str  # init | rule | push | companion | pop | eps
    rule: GroundRule | None
    first: object  # parent transition, initial configuration, or eps transition
    second: object = None  # companion transition for kind "eps"


@dataclass
class ConfigAutomaton:
    """Saturated (or partially saturated) configuration automaton."""

    rel: dict[Transition, Prov] = field(default_factory=dict)
    order: list[Transition] = field(default_factory=list)
    out_from_mid: dict[Mid, list[tuple]] = field(default_factory=dict)
    eps_into_mid: dict[Mid, list[tuple]] = field(default_factory=dict)
    initial: list[Configuration] = field(default_factory=list)
    pops: int = 0

    def __contains__(self, t: Transition) -> bool:
        return t in self.rel

    def accepted(self, max_depth: int) -> set[tuple[tuple, tuple]]:
        """All accepted configurations ``(location, stack)`` with stack depth <= ``max_depth``."""
        by_src: dict[object, list[tuple]] = {}
        locations = set()
        for (src, sym, dst) in self.rel:
            if not isinstance(src, Mid):
                locations.add(src)
            if sym is not EPS:
                by_src.setdefault(src, []).append((sym, dst))
        out: set[tuple[tuple, tuple]] = set()
        for p in locations:
            if (p, EPS, FINAL) in self.rel:
                out.add((p, ()))
            todo = [(p, ())]
            while todo:
                state, word = todo.pop()
                if len(word) >= max_depth:
                    continue
                for sym, dst in by_src.get(state, ()):
                    w = word + (sym,)
                    if dst == FINAL:
                        out.add((p, w))
                    todo.append((dst, w))
        return out


class Saturation:
    """Incremental post*: initial configurations can be added in batches."""

    def __init__(self, explicit, bad=None):
        self.explicit = explicit
        self.aut = ConfigAutomaton()
        self.work: deque[Transition] = deque()
        self.bad = bad
        self.bad_hit: Transition | None = None
        self.steps = 0

    def _add(self, t: Transition, prov: Prov) -> None:
        if t in self.aut.rel:
            return
        self.aut.rel[t] = prov
        self.aut.order.append(t)
        if self.bad_hit is None and self.bad is not None and t[1] is not EPS and self.bad(t[0], t[1]):
            self.bad_hit = t
        self.work.append(t)

    def add_initial(self, config: Configuration) -> None:
        """Add ``config`` (single-symbol stack) to the initial set."""
        assert len(config.stack) == 1, "initial configurations have one stack symbol"
        self.aut.initial.append(config)
        self._add((config.location, config.stack[0], FINAL), Prov("init", None, config))

    def run(self, stop_on_bad: bool = True) -> None:
        aut = self.aut
        work = self.work
        successors = self.explicit.successors
        while work:
            if stop_on_bad and self.bad_hit is not None:
                return
            t = work.popleft()
            self.steps += 1
            p, sym, q = t
            if sym is EPS:
                aut.pops += 1
                if isinstance(q, Mid):
                    aut.eps_into_mid.setdefault(q, []).append(p)
                    for sym2, q2 in aut.out_from_mid.get(q, ()):
                        self._add((p, sym2, q2), Prov("eps", None, t, (q, sym2, q2)))
                continue
            if isinstance(p, Mid):
                continue
            for rule in successors(p, sym):
                word = rule.word
                if not word:
                    self._add((rule.g2, EPS, q), Prov("pop", rule, t))
                elif len(word) == 1:
                    self._add((rule.g2, word[0], q), Prov("rule", rule, t))
                else:
                    mid = Mid(rule.g2, word[0])
                    self._add((rule.g2, word[0], mid), Prov("push", rule, t))
                    comp = (mid, word[1], q)
                    if comp not in aut.rel:
                        aut.rel[comp] = Prov("companion", rule, t)
                        aut.order.append(comp)
                        aut.out_from_mid.setdefault(mid, []).append((word[1], q))
                        for p2 in aut.eps_into_mid.get(mid, ()):
                            self._add((p2, word[1], q), Prov("eps", None, (p2, EPS, mid), comp))
        return


def post_star(explicit, initial: Iterable[Configuration]) -> ConfigAutomaton:
    """Saturate from ``initial``; the result accepts exactly the reachable configurations."""
    sat = Saturation(explicit)
    for c in initial:
        sat.add_initial(c)
    sat.run(stop_on_bad=False)
    return sat.aut


# --------------------------------------------------------------------------
# rule sequences from provenance


def rule_path(aut: ConfigAutomaton, target: Transition) -> tuple[Configuration, list[GroundRule]]:
    """An initial configuration and the rules leading from it to ``target``'s configuration.

    The path ends in a configuration whose location and top symbol are those
    of ``target``.  Callee segments are spliced in from the ε-transition that
    summarises them, so shared procedure summaries are handled correctly.
    """
    rel = aut.rel
    out: list[GroundRule] = []
    start: Configuration | None = None
    # items: ("reach", t) | ("within", t, head) | ("segment", eps, head) | ("rule", r)
    stack: list[tuple] = [("reach", target)]
    while stack:
        item = stack.pop()
        kind = item[0]
        if kind == "rule":
            out.append(item[1])
            continue
        if kind == "segment":
            eps, head = item[1], item[2]
            prov = rel[eps]
            assert prov.kind == "pop"
            stack.append(("rule", prov.rule))
            stack.append(("within", prov.first, head))
            continue
        t = item[1]
        prov = rel[t]
        if kind == "within" and t == item[2]:
            continue
        if prov.kind == "init":
            assert kind == "reach"
            start = prov.first
        elif prov.kind in ("rule", "push"):
            if prov.kind == "push" and kind == "within":
                raise AssertionError("push head reached inside a callee segment")
            stack.append(("rule", prov.rule))
            stack.append((kind, prov.first) + item[2:])
        elif prov.kind == "eps":
            eps, comp = prov.first, prov.second
            cprov = rel[comp]
            assert cprov.kind == "companion"
            mid = eps[2]
            head = (mid.p, mid.sym, mid)
            # caller up to the push, the push itself, then the callee's run to its pop
            stack.append(("segment", eps, head))
            stack.append(("rule", cprov.rule))
            stack.append((kind, cprov.first) + item[2:])
        else:
            raise AssertionError(f"unexpected provenance {prov.kind}")
    assert start is not None
    return start, out


# --------------------------------------------------------------------------
# witnesses


@dataclass(frozen=True)
class Witness:
    initial: Configuration
    steps: tuple[tuple[GroundRule, Configuration], ...]  # rule applied, configuration after it
    violation: Configuration
    flow_edge: int | None  # index into steps of the first high-to-low assignment
    gvars: tuple[str, ...]

    def configurations(self) -> list[Configuration]:
        return [self.initial] + [c for _, c in self.steps]

    def flow_rule(self) -> SymbolicRule | None:
        return None if self.flow_edge is None else self.steps[self.flow_edge][0].origin


def _taint_sources(composed: ComposedPDS, spec: SecuritySpec) -> set[str]:
    orig = composed.original.gvars
    sources = {g for g in orig if g not in spec.observed}
    return sources | {composed.copy_name(g) for g in sources}


def find_flow_edge(
    composed: ComposedPDS, spec: SecuritySpec, steps: Sequence[tuple[GroundRule, Configuration]]
) -> int | None:
    """Index of the first step writing a tainted value into an observed variable.

    Taint starts at the unobserved globals of both copies.  A non-identity
    equation taints its target when its right-hand side or one of the rule's
    guards reads a tainted variable.
    """
    watched = set(spec.observed) | {composed.copy_name(x) for x in spec.observed}
    gset = set(composed.pds.gvars)
    g_taint = _taint_sources(composed, spec)
    frames: list[set[str]] = [set()]
    for i, (rule, _) in enumerate(steps):
        sym = rule.origin
        visible = g_taint | frames[0]
        pc = any(expr_vars(e) & visible for e in sym.guards)
        new_g = set(g_taint)
        new_top: set[str] = set(frames[0]) if len(sym.rhs) == 1 else set()
        new_bottom: set[str] = set(frames[0])
        hit = False
        for eq in sym.equations:
            binding = sym.kind == "push" and eq.primes == 1 and eq.var not in gset
            if isinstance(eq.expr, Name) and eq.expr.name == eq.var and not binding:
                continue
            tainted = pc or bool(expr_vars(eq.expr) & visible)
            if eq.primes == 1 and eq.var in gset:
                target = new_g
                if tainted and eq.var in watched:
                    hit = True
            elif eq.primes == 1:
                target = new_top
            else:
                target = new_bottom
            if tainted:
                target.add(eq.var)
            else:
                target.discard(eq.var)
        if hit:
            return i
        g_taint = new_g
        if not sym.rhs:
            frames = frames[1:] or [set()]
        elif len(sym.rhs) == 1:
            frames = [new_top] + frames[1:]
        else:
            frames = [new_top, new_bottom] + frames[1:]
    return None


def extract_witness(
    aut: ConfigAutomaton, bad: Transition, composed: ComposedPDS, spec: SecuritySpec
) -> Witness:
    start, rules = rule_path(aut, bad)
    config = start
    steps = []
    for r in rules:
        config = apply_rule(config, r)
        steps.append((r, config))
    assert config.location == bad[0] and config.stack[0] == bad[1], "witness does not reach the bad transition"
    return Witness(start, tuple(steps), config, find_flow_edge(composed, spec, steps), composed.pds.gvars)


def replay(explicit: ExplicitPDS, witness: Witness) -> bool:
    """Check every step against the explicit system's successor relation."""
    config = witness.initial
    for rule, after in witness.steps:
        options = explicit.successors(config.location, config.stack[0])
        if rule not in options:
            return False
        config = apply_rule(config, rule)
        if config != after:
            return False
    return config == witness.violation


# --------------------------------------------------------------------------
# top level


@dataclass(frozen=True)
class Verdict:
    verdict: str
    witness: Witness | None
    stats: dict
    bits: int
    mode: str
    composed: ComposedPDS

    @property
    def secure(self) -> bool:
        return self.verdict == SECURE


def _low_unequal(composed: ComposedPDS, spec: SecuritySpec):
    idx = {v: i for i, v in enumerate(composed.pds.gvars)}
    pairs = [(idx[x], idx[composed.copy_name(x)]) for x in sorted(spec.observed)]
    final_copy = composed.final_copy_point

    def bad(p: tuple, sym: tuple) -> bool:
        return sym[0] == final_copy and any(p[a] != p[b] for a, b in pairs)

    return bad


def _check_constants(composed: ComposedPDS, bits: int, extra: Sequence[Expr] = ()) -> None:
    biggest = 0
    for r in composed.pds.rules:
        for c in r.constraints:
            biggest = max([biggest, *expr_consts(c.expr)])
    for e in (*composed.pds.assumes, *extra):
        biggest = max([biggest, *expr_consts(e)])
    if biggest >= 1 << bits:
        raise ConstantOutOfRange(biggest, bits)


def prepare(
    target: Program | ComposedPDS, spec: SecuritySpec | None, mode: str
) -> tuple[ComposedPDS, SecuritySpec]:
    if isinstance(target, Program):
        spec = spec or SecuritySpec.for_program(target)
        composed = compose(derive(target), spec.observed, mode)
    else:
        composed = target
        if spec is None:
            raise PreconditionError("MissingSpec", "a security spec is required for a composed system")
    if composed.mode == "contracted":
        shared = sorted(spec.observed & composed.rt)
        if shared:
            raise PreconditionError(
                "ReturnStoreObserved",
                f"observed globals {shared} receive callee results and are not duplicated in contracted mode",
            )
    return composed, spec


def check_ti(
    target: Program | ComposedPDS,
    spec: SecuritySpec | None = None,
    bits: int = DEFAULT_BITS,
    mode: str = "ordinary",
    pair_assumes: Sequence[Expr] = (),
    budget: int | None = None,
    batch: int = DEFAULT_BATCH,
    witness: bool = True,
) -> Verdict:
    """Decide termination-insensitive noninterference at bit-width ``bits``."""
    t0 = time.perf_counter()
    composed, spec = prepare(target, spec, mode)
    if isinstance(target, Program):
        if max_constant(target) >= 1 << bits:
            raise ConstantOutOfRange(max_constant(target), bits)
    _check_constants(composed, bits, pair_assumes)
    for a in pair_assumes:
        unknown = sorted(expr_vars(a) - set(composed.pds.gvars))
        if unknown:
            raise PreconditionError("UnknownVariable", f"assumption mentions {unknown[0]!r}, not a composed global")
    explicit = ExplicitPDS(composed.pds, bits)
    initial = build_initial_set(composed, spec, bits, pair_assumes, budget)

    sat = Saturation(explicit, _low_unequal(composed, spec))
    n_init = 0
    batches = 0
    while True:
        chunk = list(itertools.islice(initial, batch))
        if not chunk:
            break
        batches += 1
        for c in chunk:
            sat.add_initial(c)
        n_init += len(chunk)
        sat.run(stop_on_bad=True)
        if sat.bad_hit is not None:
            break

    stats = {
        "initial": n_init,
        "batches": batches,
        "transitions": len(sat.aut.rel),
        "iterations": sat.steps,
        "locations": len({t[0] for t in sat.aut.rel if not isinstance(t[0], Mid)}),
        "rules": len(composed.pds.rules),
        "conjuncts": composed.pds.conjuncts(),
        "seconds": 0.0,
    }
    if sat.bad_hit is None:
        stats["seconds"] = round(time.perf_counter() - t0, 4)
        return Verdict(SECURE, None, stats, bits, composed.mode, composed)
    w = extract_witness(sat.aut, sat.bad_hit, composed, spec) if witness else None
    stats["seconds"] = round(time.perf_counter() - t0, 4)
    return Verdict(INSECURE, w, stats, bits, composed.mode, composed)


def format_witness(witness: Witness, composed: ComposedPDS) -> str:
    """Step table: top control point, rule origin, then every global of both copies."""
    names = list(composed.pds.gvars)
    header = ["step", "point", "origin", *names]
    rows = []

    def row(i: object, config: Configuration, origin: str) -> list[str]:
        top = config.stack[0][0] if config.stack else "-"
        return [str(i), top, origin, *map(str, config.location)]

    rows.append(row(0, witness.initial, "init"))
    for i, (rule, config) in enumerate(witness.steps, 1):
        span = rule.origin.origin
        origin = f"{span.line}:{span.col}" if span is not None else "-"
        mark = " *" if witness.flow_edge == i - 1 else ""
        rows.append(row(str(i) + mark, config, origin))
    widths = [max(len(r[k]) for r in [header, *rows]) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    if witness.flow_edge is not None:
        lines.append(f"flow edge (*): step {witness.flow_edge + 1}: {witness.flow_rule()}")
    return "\n".join(lines)
