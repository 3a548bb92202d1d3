"""Self-composition of symbolic pushdown systems.

The composed system runs the program, then (through the *seam* rule that
replaces main's final pop) a renamed copy of it, and finally spins on a
*sink* self-loop at the copy's final point.  Two runs become one, so
noninterference becomes a reachability question.

Three variants:

* ``ordinary``: globals and locals are all renamed; every frame carries both
  copies' locals and every rule preserves the other copy's state.
* ``compact``: only the other copy's *globals* are preserved; locals are
  treated as unobservable.
* ``contracted``: only main's rules are copied.  Callee procedures are shared
  by both runs, and globals that receive callee results (RT) are not renamed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

from .derivation import close_rule
from .errors import PreconditionError
from .frontend import Expr, Name, expr_vars, rename_expr
from .pds import Eq, Guard, SymbolicPDS, SymbolicRule

MODES = ("ordinary", "compact", "contracted")


# --------------------------------------------------------------------------
# walks over main


def _main_walk(pds: SymbolicPDS):
    """Yield ``(point, rules_from_point)`` along main's points, FIFO.

    A push enqueues only its continuation, never the callee entry, so the
    walk never leaves main.
    """
    by_lhs: dict[str, list[SymbolicRule]] = {}
    for r in pds.sorted_rules():
        by_lhs.setdefault(r.lhs, []).append(r)
    todo = deque([pds.start])
    visited: set[str] = set()
    while todo:
        cur = todo.popleft()
        if cur in visited:
            continue
        rules = by_lhs.get(cur, [])
        yield cur, rules
        for r in rules:
            nxt = r.rhs[1] if len(r.rhs) == 2 else (r.rhs[0] if r.rhs else None)
            if nxt is not None and nxt not in visited:
                todo.append(nxt)
        visited.add(cur)


def last_transition_finding(pds: SymbolicPDS) -> SymbolicRule:
    """Main's pop rule, found by walking main's continuation chain."""
    for _, rules in _main_walk(pds):
        for r in rules:
            if not r.rhs:
                if r.lhs != pds.final:
                    raise PreconditionError("NoFinalTransition", f"walk reached a foreign pop {r}")
                return r
    raise PreconditionError("NoFinalTransition", "main has no reachable pop rule")


def main_trans(pds: SymbolicPDS) -> list[SymbolicRule]:
    """Every rule whose left-hand side is one of main's points."""
    out: list[SymbolicRule] = []
    for _, rules in _main_walk(pds):
        out.extend(rules)
    return out


# --------------------------------------------------------------------------
# renaming


@dataclass(frozen=True)
class Renaming:
    kind: str  # "xi" renames globals and locals, "xi_prime" renames non-RT globals
    map: dict[str, str]
    point_map: dict[str, str]
    suffix: str

    def var(self, name: str) -> str:
        return self.map.get(name, name)

    def expr(self, e: Expr) -> Expr:
        return rename_expr(e, self.map)

    def point(self, p: str) -> str:
        return self.point_map.get(p, p)


def choose_suffix(names: set[str]) -> str:
    """``t`` unless some ``x + "t"`` already names something else."""
    for cand in ("t", "_t", *(f"_t{k}" for k in range(2, 100))):
        if not any(n + cand in names for n in names):
            return cand
    raise PreconditionError("NoFreshSuffix", "could not pick a copy suffix")


def return_stores(pds: SymbolicPDS) -> frozenset[str]:
    """Globals that some callee writes (after out-parameter substitution)."""
    main = pds.owners[pds.start]
    rt = set()
    for r in pds.rules:
        if pds.owners[r.lhs] == main:
            continue
        for eq in r.equations:
            if eq.var in pds.gvars and eq.primes == 1 and not _identity(eq):
                rt.add(eq.var)
    return frozenset(rt)


def _identity(eq: Eq) -> bool:
    return isinstance(eq.expr, Name) and eq.expr.name == eq.var


# --------------------------------------------------------------------------
# composition


@dataclass(frozen=True)
class ComposedPDS:
    pds: SymbolicPDS
    mode: str
    seam: SymbolicRule
    sink: SymbolicRule
    renaming: Renaming
    original: SymbolicPDS
    final_point: str
    final_copy_point: str
    rt: frozenset[str]

    @property
    def suffix(self) -> str:
        return self.renaming.suffix

    def copy_name(self, var: str) -> str:
        return self.renaming.var(var)

    def stats(self) -> dict[str, int]:
        return {"rules": len(self.pds.rules), "conjuncts": self.pds.conjuncts()}


def _rename_rule(rule: SymbolicRule, ren: Renaming, keep_callee: bool) -> SymbolicRule:
    cs = []
    for c in rule.constraints:
        if isinstance(c, Guard):
            cs.append(Guard(ren.expr(c.expr)))
        else:
            cs.append(Eq(ren.var(c.var), c.primes, ren.expr(c.expr)))
    if keep_callee and len(rule.rhs) == 2:
        rhs = (rule.rhs[0], ren.point(rule.rhs[1]))
    else:
        rhs = tuple(ren.point(p) for p in rule.rhs)
    return SymbolicRule(ren.point(rule.lhs), rhs, tuple(cs), rule.owner, rule.origin)


def _strip_frame(rule: SymbolicRule, gvars: tuple[str, ...]) -> SymbolicRule:
    """Drop identities so the closure pass can rebuild them for the new frames.

    On a push, ``y' = y`` for a local binds the callee's ``y`` from the
    caller's; it is a parameter binding, not a frame identity.
    """

    def binding(c: Eq) -> bool:
        return rule.kind == "push" and c.primes == 1 and c.var not in gvars

    keep = [c for c in rule.constraints if isinstance(c, Guard) or binding(c) or not _identity(c)]
    return replace(rule, constraints=tuple(keep))


def _check_labels(pds: SymbolicPDS, observed: frozenset[str], mode: str) -> None:
    if mode == "ordinary":
        return
    locals_ = {v for f in pds.frames.values() for v in f}
    bad = sorted((observed & locals_) - set(pds.gvars))
    if bad:
        raise PreconditionError("LowLocalUnderCompact", f"observed variables {bad} are locals")


def _check_callee_purity(pds: SymbolicPDS, rt: frozenset[str]) -> None:
    main = pds.owners[pds.start]
    outside = set(pds.gvars) - rt
    for r in pds.sorted_rules():
        if pds.owners[r.lhs] == main:
            continue
        for c in r.constraints:
            if isinstance(c, Eq) and _identity(c):
                continue
            used = expr_vars(c.expr) | ({c.var} if isinstance(c, Eq) else set())
            leak = sorted(used & outside)
            if leak:
                raise PreconditionError(
                    "GlobalUsedInCallee",
                    f"procedure {r.owner} uses global {leak[0]!r} that is not a return store ({r})",
                )


def compose(pds: SymbolicPDS, observed=(), mode: str = "ordinary") -> ComposedPDS:
    """Build the self-composed system in the given mode."""
    if mode not in MODES:
        raise PreconditionError("UnknownMode", f"mode must be one of {', '.join(MODES)}")
    observed = frozenset(observed)
    _check_labels(pds, observed, mode)

    last = last_transition_finding(pds)
    locals_ = {v for f in pds.frames.values() for v in f}
    suffix = choose_suffix(set(pds.gvars) | locals_ | set(pds.frames))

    rt = return_stores(pds)
    if mode == "contracted":
        _check_callee_purity(pds, rt)
        renamed = [g for g in pds.gvars if g not in rt]
        main_points = {r.lhs for r in main_trans(pds)} | {pds.final}
        ren = Renaming(
            "xi_prime",
            {g: g + suffix for g in renamed},
            {p: p + suffix for p in main_points},
            suffix,
        )
        to_copy = main_trans(pds)
    else:
        ren = Renaming(
            "xi",
            {v: v + suffix for v in (*pds.gvars, *sorted(locals_))},
            {p: p + suffix for p in pds.frames},
            suffix,
        )
        to_copy = pds.sorted_rules()

    gvars = pds.gvars + tuple(ren.var(g) for g in pds.gvars if ren.var(g) != g)

    # frames of the composed system
    frames: dict[str, tuple[str, ...]] = {}
    owners: dict[str, str] = {}
    for p, f in pds.frames.items():
        owners[p] = pds.owners[p]
        if mode == "ordinary":
            frames[p] = f + tuple(ren.var(v) for v in f)
        else:
            frames[p] = f
    for p, cp in ren.point_map.items():
        owners[cp] = pds.owners[p]
        f = pds.frames[p]
        if mode == "ordinary":
            frames[cp] = f + tuple(ren.var(v) for v in f)
        else:
            frames[cp] = tuple(ren.var(v) for v in f)

    skeleton: list[SymbolicRule] = []
    seam = sink = None
    init_copy = ren.point(pds.start)
    for r in pds.sorted_rules():
        base = _strip_frame(r, pds.gvars)
        if r == last:
            seam = replace(base, rhs=(init_copy,))
            skeleton.append(seam)
        else:
            skeleton.append(base)
    for r in to_copy:
        c = _rename_rule(_strip_frame(r, pds.gvars), ren, keep_callee=(mode == "contracted"))
        if r == last:
            sink = replace(c, rhs=(c.lhs,))
            skeleton.append(sink)
        else:
            skeleton.append(c)

    closed: dict[SymbolicRule, None] = {}
    for r in skeleton:
        closed.setdefault(close_rule(r, gvars, frames), None)
    rules = tuple(closed)
    seam_c = close_rule(seam, gvars, frames)
    sink_c = close_rule(sink, gvars, frames)

    assumes = tuple(pds.assumes) + tuple(ren.expr(a) for a in pds.assumes if ren.expr(a) != a)
    final_copy = ren.point(pds.final)
    composed = SymbolicPDS(gvars, frames, owners, rules, pds.start, final_copy, assumes)
    return ComposedPDS(composed, mode, seam_c, sink_c, ren, pds, pds.final, final_copy, rt)


def compose_ordinary(pds: SymbolicPDS, observed=()) -> ComposedPDS:
    return compose(pds, observed, "ordinary")


def compose_compact(pds: SymbolicPDS, observed=()) -> ComposedPDS:
    return compose(pds, observed, "compact")


def compose_contracted(pds: SymbolicPDS, observed=()) -> ComposedPDS:
    return compose(pds, observed, "contracted")


def applicable_modes(pds: SymbolicPDS, observed) -> list[str]:
    """Modes whose preconditions hold for this system and observation set."""
    observed = frozenset(observed)
    modes = ["ordinary"]
    try:
        _check_labels(pds, observed, "compact")
    except PreconditionError:
        return modes
    modes.append("compact")
    rt = return_stores(pds)
    try:
        _check_callee_purity(pds, rt)
    except PreconditionError:
        return modes
    if not (observed & rt):
        modes.append("contracted")
    return modes
