"""Symbolic and explicit pushdown systems.

A symbolic rule ``<n_i> -> <n_j n_k> | R`` relates a pre-state (globals and
the top frame's locals, unprimed) to a post-state: primed globals and primed
locals of the new top frame, plus double-primed locals of the frame below it
when the rule pushes.  Grounding a symbolic rule over N-bit valuations yields
the explicit rules ``<g, (n_i, l)> -> <g', (n_j, l1) (n_k, l2)>``.

The control location of the explicit system is simply the global valuation.
"""

from __future__ import annotations

import itertools
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence, Union

from .errors import NilError, StateBudgetExceeded
from .frontend import Const, Expr, Name, Span, UnOp, expr_vars, pretty_expr

log = logging.getLogger("nilcheck")

DEFAULT_STATE_BUDGET = 24
BUDGET_ENV = "NILCHECK_STATE_BUDGET"


def state_budget(override: int | None = None) -> int:
    if override is not None:
        return override
    return int(os.environ.get(BUDGET_ENV, DEFAULT_STATE_BUDGET))


# --------------------------------------------------------------------------
# symbolic data model


@dataclass(frozen=True)
class Eq:
    """``var' = expr`` (primes=1) or ``var'' = expr`` (primes=2); ``expr`` is over the pre-state."""

    var: str
    primes: int
    expr: Expr

    def __str__(self) -> str:
        return f"{self.var}{chr(39) * self.primes} = {pretty_expr(self.expr)}"


@dataclass(frozen=True)
class Guard:
    expr: Expr

    def __str__(self) -> str:
        return pretty_expr(self.expr)


Constraint = Union[Eq, Guard]


@dataclass(frozen=True)
class SymbolicRule:
    lhs: str
    rhs: tuple[str, ...]
    constraints: tuple[Constraint, ...]
    owner: str
    origin: Span | None = field(default=None, compare=False)

    @property
    def kind(self) -> str:
        return ("pop", "step", "push")[len(self.rhs)] if len(self.rhs) <= 2 else "long"

    @property
    def guards(self) -> tuple[Expr, ...]:
        return tuple(c.expr for c in self.constraints if isinstance(c, Guard))

    @property
    def equations(self) -> tuple[Eq, ...]:
        return tuple(c for c in self.constraints if isinstance(c, Eq))

    def __str__(self) -> str:
        rhs = " ".join(self.rhs) if self.rhs else "eps"
        body = "".join(f" {c};" for c in self.constraints)
        return f"{self.lhs} -> {rhs} |{body}"


_CHUNK = re.compile(r"(\d+)")


def natural_key(point: str) -> tuple:
    """Sort key under which n2 < n10 and n1 < n1t < n2."""
    return tuple(int(c) if c.isdigit() else c for c in _CHUNK.split(point))


def rule_sort_key(rule: SymbolicRule) -> tuple:
    origin = (rule.origin.line, rule.origin.col) if rule.origin is not None else (0, 0)
    return (natural_key(rule.lhs), origin, tuple(natural_key(p) for p in rule.rhs), str(rule))


@dataclass(frozen=True)
class SymbolicPDS:
    gvars: tuple[str, ...]
    frames: dict[str, tuple[str, ...]]  # control point -> locals of its frame, in order
    owners: dict[str, str]  # control point -> procedure tag
    rules: tuple[SymbolicRule, ...]
    start: str
    final: str
    assumes: tuple[Expr, ...] = ()  # initial-valuation constraints over globals

    @property
    def control_points(self) -> frozenset[str]:
        return frozenset(self.frames)

    @property
    def lvars(self) -> dict[str, tuple[str, ...]]:
        """Unified locals per procedure tag."""
        out: dict[str, tuple[str, ...]] = {}
        for point, tag in self.owners.items():
            out.setdefault(tag, self.frames[point])
        return out

    def sorted_rules(self) -> list[SymbolicRule]:
        return sorted(self.rules, key=rule_sort_key)

    def rules_from(self, point: str) -> list[SymbolicRule]:
        return [r for r in self.sorted_rules() if r.lhs == point]

    def conjuncts(self) -> int:
        return sum(len(r.constraints) for r in self.rules)

    def state_bits(self, bits: int) -> int:
        widest = max((len(f) for f in self.frames.values()), default=0)
        return bits * (len(self.gvars) + widest)


def dump(pds: SymbolicPDS) -> str:
    """Stable text form: header lines, then one rule per line."""
    lines = ["globals " + " ".join(pds.gvars) if pds.gvars else "globals"]
    by_tag: dict[str, list[str]] = {}
    for point in sorted(pds.frames, key=natural_key):
        by_tag.setdefault(pds.owners[point], []).append(point)
    for tag, points in by_tag.items():
        frames = {pds.frames[p] for p in points}
        if len(frames) == 1:
            lines.append(f"proc {tag} {' '.join(points)} | {' '.join(pds.frames[points[0]])}".rstrip())
        else:
            lines.append(f"proc {tag} {' '.join(points)}")
            for p in points:
                lines.append(f"frame {p} | {' '.join(pds.frames[p])}".rstrip())
    for a in pds.assumes:
        lines.append(f"assume {pretty_expr(a)}")
    lines.append(f"start {pds.start}")
    lines.append(f"final {pds.final}")
    lines.extend(str(r) for r in pds.sorted_rules())
    return "\n".join(lines) + "\n"


def check_normal_form(pds: SymbolicPDS) -> list[str]:
    """Report rules that are not in normal form or mention out-of-scope variables."""
    problems: list[str] = []
    points = pds.control_points
    gset = set(pds.gvars)
    for r in pds.sorted_rules():
        if len(r.rhs) > 2:
            problems.append(f"{r}: right-hand side has {len(r.rhs)} symbols")
            continue
        for p in (r.lhs, *r.rhs):
            if p not in points:
                problems.append(f"{r}: unknown control point {p}")
        if any(p not in points for p in (r.lhs, *r.rhs)):
            continue
        pre = gset | set(pds.frames[r.lhs])
        top = set(pds.frames[r.rhs[0]]) if r.rhs else set()
        bottom = set(pds.frames[r.rhs[1]]) if len(r.rhs) == 2 else set()
        for c in r.constraints:
            loose = expr_vars(c.expr) - pre
            if loose:
                problems.append(f"{r}: {sorted(loose)} not visible in the pre-state")
            if isinstance(c, Eq):
                if c.primes == 1 and c.var not in gset | top:
                    problems.append(f"{r}: {c.var}' is not a post-state variable")
                if c.primes == 2 and c.var not in bottom:
                    problems.append(f"{r}: {c.var}'' is not a caller-frame variable")
    return problems


# --------------------------------------------------------------------------
# explicit data model


Symbol = tuple  # (control point, local valuation tuple)


class GroundRule(NamedTuple):
    g: tuple[int, ...]
    sym: Symbol
    g2: tuple[int, ...]
    word: tuple[Symbol, ...]
    origin: SymbolicRule


@dataclass(frozen=True)
class Configuration:
    location: tuple[int, ...]
    stack: tuple[Symbol, ...]  # top first

    @property
    def top(self) -> Symbol | None:
        return self.stack[0] if self.stack else None


class NondeterministicStep(NilError):
    def __init__(self, config: Configuration, rules: Sequence[GroundRule]):
        super().__init__(f"{len(rules)} rules apply at {config}")
        self.config = config
        self.rules = list(rules)


def compile_expr(e: Expr, names: dict[str, str], mask: int) -> str:
    """Python source for ``e``; ``names`` maps variables to local identifiers."""
    if isinstance(e, Const):
        return str(e.value & mask)
    if isinstance(e, Name):
        return names[e.name]
    if isinstance(e, UnOp):
        return f"(0 if {compile_expr(e.operand, names, mask)} else 1)"
    a = compile_expr(e.left, names, mask)
    b = compile_expr(e.right, names, mask)
    if e.op in ("+", "-", "*"):
        return f"(({a} {e.op} {b}) & {mask})"
    if e.op in ("<", "<=", ">", ">="):
        return f"(1 if {a} {e.op} {b} else 0)"
    if e.op == "=":
        return f"(1 if {a} == {b} else 0)"
    if e.op == "!=":
        return f"(1 if {a} != {b} else 0)"
    if e.op == "&&":
        return f"(1 if ({a} and {b}) else 0)"
    if e.op == "||":
        return f"(1 if ({a} or {b}) else 0)"
    raise ValueError(e.op)


RuleFn = Callable[[tuple, tuple], list]


def compile_rule(rule: SymbolicRule, pds: SymbolicPDS, bits: int) -> tuple[RuleFn, list[str]]:
    """Compile one symbolic rule into ``f(g, l) -> [(g2, word), ...]``.

    Returns the function and the post-state variables left unconstrained
    (each of which ranges over the whole domain).
    """
    mask = (1 << bits) - 1
    pre_names = {v: f"a{i}" for i, v in enumerate(pds.gvars)}
    frame = pds.frames[rule.lhs]
    pre_names.update({v: f"b{i}" for i, v in enumerate(frame)})

    post: list[tuple[str, int, str]] = [(v, 1, f"p{i}") for i, v in enumerate(pds.gvars)]
    if rule.rhs:
        post += [(v, 1, f"q{i}") for i, v in enumerate(pds.frames[rule.rhs[0]])]
    if len(rule.rhs) == 2:
        post += [(v, 2, f"r{i}") for i, v in enumerate(pds.frames[rule.rhs[1]])]
    post_ident = {(v, k): ident for v, k, ident in post}

    src = ["def _rule(g, l):"]
    if pds.gvars:
        src.append(f"    {', '.join(pre_names[v] for v in pds.gvars)}, = g")
    if frame:
        src.append(f"    {', '.join(pre_names[v] for v in frame)}, = l")
    for gexpr in rule.guards:
        src.append(f"    if not {compile_expr(gexpr, pre_names, mask)}: return []")

    defined: set[tuple[str, int]] = set()
    for eq in rule.equations:
        key = (eq.var, eq.primes)
        if key not in post_ident:
            raise NilError(f"{rule}: {eq.var}{chr(39) * eq.primes} has no slot in the post-state")
        value = compile_expr(eq.expr, pre_names, mask)
        if key in defined:
            src.append(f"    if {post_ident[key]} != {value}: return []")
        else:
            src.append(f"    {post_ident[key]} = {value}")
            defined.add(key)

    free = [(v, k, ident) for v, k, ident in post if (v, k) not in defined]
    indent = "    "
    for _, _, ident in free:
        src.append(f"{indent}for {ident} in range({mask + 1}):")
        indent += "    "
    g2 = "(" + "".join(f"p{i}, " for i in range(len(pds.gvars))) + ")"
    word = []
    for pos, point in enumerate(rule.rhs):
        prefix = "q" if pos == 0 else "r"
        loc = "(" + "".join(f"{prefix}{i}, " for i in range(len(pds.frames[point]))) + ")"
        word.append(f"({point!r}, {loc})")
    word_src = "(" + "".join(w + ", " for w in word) + ")"
    if free:
        src.insert(1, "    _out = []")
        src.append(f"{indent}_out.append(({g2}, {word_src}))")
        src.append("    return _out")
    else:
        src.append(f"    return [({g2}, {word_src})]")
    namespace: dict = {}
    exec("\n".join(src), namespace)  # noqa: S102 - source is generated from our own AST
    return namespace["_rule"], [f"{v}{chr(39) * k}" for v, k, _ in free]


class ExplicitPDS:
    """Grounding of a :class:`SymbolicPDS` at a fixed bit-width.

    Successors are computed on demand and memoized, so only reachable parts
    of the state space are ever materialized.
    """

    def __init__(self, pds: SymbolicPDS, bits: int):
        self.symbolic = pds
        self.bits = bits
        self.gvars = pds.gvars
        self._by_lhs: dict[str, list[tuple[SymbolicRule, RuleFn]]] = {}
        self.lint: list[str] = []
        for rule in pds.sorted_rules():
            fn, free = compile_rule(rule, pds, bits)
            if free:
                msg = f"{rule.lhs} -> {' '.join(rule.rhs) or 'eps'}: unconstrained {', '.join(free)}"
                self.lint.append(msg)
                log.warning("lint: %s", msg)
            self._by_lhs.setdefault(rule.lhs, []).append((rule, fn))
        self._memo: dict[tuple, tuple[GroundRule, ...]] = {}

    def successors(self, g: tuple[int, ...], sym: Symbol) -> tuple[GroundRule, ...]:
        key = (g, sym)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        out = []
        for rule, fn in self._by_lhs.get(sym[0], ()):
            for g2, word in fn(g, sym[1]):
                out.append(GroundRule(g, sym, g2, word, rule))
        result = tuple(out)
        self._memo[key] = result
        return result

    def valuations(self, width: int) -> Iterator[tuple[int, ...]]:
        return itertools.product(range(1 << self.bits), repeat=width)

    def alphabet(self) -> Iterator[Symbol]:
        for point in sorted(self.symbolic.frames, key=natural_key):
            for l in self.valuations(len(self.symbolic.frames[point])):
                yield (point, l)

    def locations(self) -> Iterator[tuple[int, ...]]:
        return self.valuations(len(self.gvars))

    def all_rules(self) -> list[GroundRule]:
        rules = []
        for sym in self.alphabet():
            for g in self.locations():
                rules.extend(self.successors(g, sym))
        return rules


def flatten(pds: SymbolicPDS, bits: int, budget: int | None = None) -> ExplicitPDS:
    """Ground every rule over every valuation (refuses oversized state spaces)."""
    limit = state_budget(budget)
    needed = pds.state_bits(bits)
    if needed > limit:
        raise StateBudgetExceeded(needed, limit)
    explicit = ExplicitPDS(pds, bits)
    explicit.rules = explicit.all_rules()
    return explicit


def apply_rule(config: Configuration, rule: GroundRule) -> Configuration:
    assert config.location == rule.g and config.stack and config.stack[0] == rule.sym
    return Configuration(rule.g2, rule.word + config.stack[1:])


@dataclass(frozen=True)
class PdsDiverged:
    last: Configuration
    steps: int


def pds_exec(
    explicit: ExplicitPDS,
    config: Configuration,
    fuel: int = 10**6,
    stop: Callable[[Configuration], bool] | None = None,
) -> Configuration | PdsDiverged:
    """Run a deterministic PDS until no rule applies, ``stop`` holds, or fuel runs out."""
    for step in range(fuel):
        if not config.stack or (stop is not None and stop(config)):
            return config
        rules = explicit.successors(config.location, config.stack[0])
        if not rules:
            return config
        if len(rules) > 1:
            raise NondeterministicStep(config, rules)
        config = apply_rule(config, rules[0])
    if not config.stack or (stop is not None and stop(config)):
        return config
    return PdsDiverged(config, fuel)


def initial_configurations(
    pds: SymbolicPDS, bits: int, init: dict[str, int], locals_: dict[str, int] | None = None
) -> Configuration:
    """The start configuration for a given global valuation (missing names are 0)."""
    g = tuple(init.get(v, 0) & ((1 << bits) - 1) for v in pds.gvars)
    frame = pds.frames[pds.start]
    l = tuple((locals_ or {}).get(v, 0) for v in frame)
    return Configuration(g, ((pds.start, l),))


def location_dict(pds: SymbolicPDS, g: Iterable[int]) -> dict[str, int]:
    return dict(zip(pds.gvars, g))
