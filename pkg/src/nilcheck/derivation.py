"""Translate a validated program into a symbolic pushdown system.

Each procedure call site ``f(e, g)`` refers to a procedure *instance*: the
body of ``f`` with its out-parameter replaced by the global ``g``.  Instances
are derived once and shared by every call site that needs them, which is
what lets recursive procedures work.

Control points are drawn from a single pool ``n1, n2, ...`` in a pre-order
walk: main gets ``n1`` (entry) and ``n2`` (exit), a new instance gets its
entry and exit when first called, sequences allocate their intermediate
points before recursing, branches allocate both arm entries, and loops
allocate the body entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PreconditionError
from .frontend import (
    Assign,
    Call,
    Expr,
    If,
    Letvar,
    Name,
    Program,
    Seq,
    Skip,
    Span,
    Stmt,
    While,
    Const,
    expr_vars,
    negate,
    rename_expr,
)
from .pds import Eq, Guard, SymbolicPDS, SymbolicRule, natural_key


# --------------------------------------------------------------------------
# local-variable unification


@dataclass(frozen=True)
class UnifiedLocals:
    theta: frozenset[tuple[str, str]]
    eta: dict[str, tuple[str, ...]]  # tag -> locals in frame order

    def __getitem__(self, tag: str) -> tuple[str, ...]:
        return self.eta.get(tag, ())


def _letvars(s: Stmt) -> list[str]:
    """Letvar binders of ``s`` in pre-order."""
    if isinstance(s, Letvar):
        return [s.name, *_letvars(s.body)]
    if isinstance(s, Seq):
        return [x for part in s.stmts for x in _letvars(part)]
    if isinstance(s, If):
        return _letvars(s.then) + _letvars(s.orelse)
    if isinstance(s, While):
        return _letvars(s.body)
    return []


def _calls(s: Stmt) -> list[Call]:
    if isinstance(s, Call):
        return [s]
    if isinstance(s, Seq):
        return [c for part in s.stmts for c in _calls(part)]
    if isinstance(s, If):
        return _calls(s.then) + _calls(s.orelse)
    if isinstance(s, While):
        return _calls(s.body)
    if isinstance(s, Letvar):
        return _calls(s.body)
    return []


def reachable_procedures(program: Program, root: str | None = None) -> list[str]:
    """Tags reachable from ``root`` (default main), in discovery order."""
    root = root or program.entry
    order = [root]
    i = 0
    while i < len(order):
        for call in _calls(program.proc(order[i]).body):
            if call.proc not in order:
                order.append(call.proc)
        i += 1
    return order


def unify_locals(program: Program, root: str | None = None) -> UnifiedLocals:
    """Collect the locals of every reachable procedure.

    A procedure's frame holds its in-parameter followed by its ``letvar``
    binders in pre-order.  The out-parameter is not a local: every call
    replaces it by a global before the body is derived.
    """
    eta: dict[str, tuple[str, ...]] = {}
    for tag in reachable_procedures(program, root):
        proc = program.proc(tag)
        names = ([proc.in_param] if proc.in_param is not None else []) + _letvars(proc.body)
        eta[tag] = tuple(dict.fromkeys(names))
    theta = frozenset((tag, x) for tag, xs in eta.items() for x in xs)
    return UnifiedLocals(theta, eta)


# --------------------------------------------------------------------------
# substitution and write sets


def substitute(s: Stmt, mapping: dict[str, str]) -> Stmt:
    """Rename variables in ``s`` (used for ``[g/out]S``)."""
    if not mapping:
        return s
    if isinstance(s, Skip):
        return s
    if isinstance(s, Assign):
        return Assign(mapping.get(s.target, s.target), rename_expr(s.expr, mapping), s.span)
    if isinstance(s, Seq):
        return Seq(tuple(substitute(x, mapping) for x in s.stmts), s.span)
    if isinstance(s, If):
        return If(rename_expr(s.cond, mapping), substitute(s.then, mapping), substitute(s.orelse, mapping), s.span)
    if isinstance(s, While):
        return While(rename_expr(s.cond, mapping), substitute(s.body, mapping), s.span)
    if isinstance(s, Letvar):
        return Letvar(s.name, rename_expr(s.init, mapping), substitute(s.body, mapping), s.span)
    if isinstance(s, Call):
        return Call(s.proc, rename_expr(s.arg, mapping), mapping.get(s.out, s.out), s.span)
    raise TypeError(s)


Instance = tuple[str, str]  # (procedure tag, global bound to the out-parameter)


def instance_body(program: Program, inst: Instance) -> Stmt:
    proc = program.proc(inst[0])
    return substitute(proc.body, {proc.out_param: inst[1]})


def instance_writes(program: Program, root: Instance | None = None) -> dict[Instance, frozenset[str]]:
    """Globals each reachable instance may write, transitively (least fixpoint)."""
    globals_ = set(program.global_names)
    bodies: dict[Instance, Stmt] = {}
    todo = [c for c in _calls(program.main.body)]
    if root is not None:
        todo.append(Call(root[0], Const(0), root[1]))
    seen: set[Instance] = set()
    while todo:
        call = todo.pop()
        inst = (call.proc, call.out)
        if inst in seen:
            continue
        seen.add(inst)
        bodies[inst] = instance_body(program, inst)
        todo.extend(_calls(bodies[inst]))
    writes = {inst: frozenset() for inst in bodies}
    changed = True
    while changed:
        changed = False
        for inst, body in bodies.items():
            new = frozenset(w for w in _direct_writes(body, writes) if w in globals_)
            if new != writes[inst]:
                writes[inst] = new
                changed = True
    return writes


def _direct_writes(s: Stmt, inst_writes: dict[Instance, frozenset[str]]) -> set[str]:
    if isinstance(s, Assign):
        return {s.target}
    if isinstance(s, Seq):
        return set().union(*(_direct_writes(x, inst_writes) for x in s.stmts))
    if isinstance(s, If):
        return _direct_writes(s.then, inst_writes) | _direct_writes(s.orelse, inst_writes)
    if isinstance(s, While):
        return _direct_writes(s.body, inst_writes)
    if isinstance(s, Letvar):
        return {s.name} | _direct_writes(s.body, inst_writes)
    if isinstance(s, Call):
        return set(inst_writes.get((s.proc, s.out), ()))
    return set()


# --------------------------------------------------------------------------
# rule derivation


@dataclass
class Derivation:
    """Raw derived rules plus the bookkeeping needed to close them."""

    program: Program
    rules: list[SymbolicRule] = field(default_factory=list)
    owners: dict[str, str] = field(default_factory=dict)
    instances: dict[Instance, tuple[str, str]] = field(default_factory=dict)  # -> (entry, exit)
    counter: int = 0
    writes: dict[Instance, frozenset[str]] = field(default_factory=dict)
    entry: str = ""
    exit: str = ""

    def fresh(self, owner: str) -> str:
        self.counter += 1
        point = f"n{self.counter}"
        self.owners[point] = owner
        return point

    def emit(self, lhs: str, rhs: tuple[str, ...], cs: list, owner: str, origin: Span | None) -> None:
        self.rules.append(SymbolicRule(lhs, rhs, tuple(cs), owner, origin))

    def written(self, s: Stmt) -> set[str]:
        return _direct_writes(s, self.writes)

    # the seven cases

    def phi(self, s: Stmt, ni: str, nj: str, p: str, R: tuple[Expr, ...]) -> None:
        guards = [Guard(e) for e in R]
        if isinstance(s, Skip):
            self.emit(ni, (nj,), guards, p, s.span)
        elif isinstance(s, Assign):
            self.emit(ni, (nj,), guards + [Eq(s.target, 1, s.expr)], p, s.span)
        elif isinstance(s, Seq):
            mids = [self.fresh(p) for _ in s.stmts[1:]]
            points = [ni, *mids, nj]
            written: set[str] = set()
            for k, part in enumerate(s.stmts):
                self.phi(part, points[k], points[k + 1], p, _kill(R, written))
                written |= self.written(part)
        elif isinstance(s, If):
            nk, nl = self.fresh(p), self.fresh(p)
            yes, no = R + (s.cond,), R + (negate(s.cond),)
            self.emit(ni, (nk,), [Guard(e) for e in yes], p, s.span)
            self.emit(ni, (nl,), [Guard(e) for e in no], p, s.span)
            self.phi(s.then, nk, nj, p, yes)
            self.phi(s.orelse, nl, nj, p, no)
        elif isinstance(s, While):
            nq = self.fresh(p)
            # guards the body may falsify cannot be re-asserted on later iterations
            R0 = _kill(R, self.written(s.body))
            stay, leave = R0 + (s.cond,), R0 + (negate(s.cond),)
            self.emit(ni, (nj,), [Guard(e) for e in leave], p, s.span)
            self.emit(ni, (nq,), [Guard(e) for e in stay], p, s.span)
            self.phi(s.body, nq, ni, p, stay)
        elif isinstance(s, Letvar):
            nk = self.fresh(p)
            self.emit(ni, (nk,), guards + [Eq(s.name, 1, s.init)], p, s.span)
            self.phi(s.body, nk, nj, p, _kill(R, {s.name}))
        elif isinstance(s, Call):
            inst = (s.proc, s.out)
            callee = self.program.proc(s.proc)
            fresh_instance = inst not in self.instances
            if fresh_instance:
                self.instances[inst] = (self.fresh(s.proc), self.fresh(s.proc))
            nk, nq = self.instances[inst]
            self.emit(ni, (nk, nj), guards + [Eq(callee.in_param, 1, s.arg)], p, s.span)
            if fresh_instance:
                self.phi(instance_body(self.program, inst), nk, nq, s.proc, ())
                # the pop carries no caller guards: they mention the caller's frame,
                # which is not the top frame at this point
                self.emit(nq, (), [], s.proc, callee.span)
        else:
            raise TypeError(s)


def _kill(R: tuple[Expr, ...], written: set[str]) -> tuple[Expr, ...]:
    if not written:
        return R
    return tuple(e for e in R if not (expr_vars(e) & written))


def derive_rules(program: Program, root: Instance | None = None) -> Derivation:
    """Run the rule derivation from main (or from one procedure instance)."""
    d = Derivation(program, writes=instance_writes(program, root))
    if root is None:
        main = program.main
        d.entry, d.exit = d.fresh(main.tag), d.fresh(main.tag)
        d.phi(main.body, d.entry, d.exit, main.tag, ())
        d.emit(d.exit, (), [], main.tag, main.span)
    else:
        tag, out = root
        callee = program.proc(tag)
        d.entry, d.exit = d.fresh(tag), d.fresh(tag)
        d.instances[root] = (d.entry, d.exit)
        d.phi(instance_body(program, root), d.entry, d.exit, tag, ())
        d.emit(d.exit, (), [], tag, callee.span)
    return d


# --------------------------------------------------------------------------
# frame closure


def close_rule(
    rule: SymbolicRule,
    gvars: tuple[str, ...],
    frames: dict[str, tuple[str, ...]],
) -> SymbolicRule:
    """Add the equalities for every post-state variable the rule leaves alone.

    Globals keep their value.  On a step, a local keeps its value if the
    source frame has it and is zeroed otherwise.  On a push, the new callee
    frame starts at zero except for what the rule binds, and the caller's
    frame (now below the top) is preserved with double-primed equalities.
    """
    given: dict[tuple[str, int], Expr] = {}
    for eq in rule.equations:
        key = (eq.var, eq.primes)
        if key in given and given[key] != eq.expr:
            raise PreconditionError("ConflictingConstraint", f"{rule}: two equations for {eq.var}")
        given[key] = eq.expr

    pre = set(frames[rule.lhs])
    out: list[Eq] = []
    for g in gvars:
        out.append(Eq(g, 1, given.get((g, 1), Name(g))))
    if len(rule.rhs) == 1:
        for y in frames[rule.rhs[0]]:
            out.append(Eq(y, 1, given.get((y, 1), Name(y) if y in pre else Const(0))))
    elif len(rule.rhs) == 2:
        for y in frames[rule.rhs[0]]:
            out.append(Eq(y, 1, given.get((y, 1), Const(0))))
        for y in frames[rule.rhs[1]]:
            out.append(Eq(y, 2, given.get((y, 2), Name(y) if y in pre else Const(0))))
    known = {(e.var, e.primes) for e in out}
    stray = [k for k in given if k not in known]
    if stray:
        raise PreconditionError("ConflictingConstraint", f"{rule}: {stray[0][0]} is not in the post-state")
    guards = list(dict.fromkeys(c for c in rule.constraints if isinstance(c, Guard)))
    return SymbolicRule(rule.lhs, rule.rhs, tuple(guards + out), rule.owner, rule.origin)


def to_symbolic(
    d: Derivation,
    unified: UnifiedLocals,
    gvars: tuple[str, ...],
    assumes: tuple[Expr, ...] = (),
) -> SymbolicPDS:
    frames = {point: unified[owner] for point, owner in d.owners.items()}
    rules = tuple(close_rule(r, gvars, frames) for r in d.rules)
    return SymbolicPDS(gvars, frames, dict(d.owners), rules, d.entry, d.exit, tuple(assumes))


def derive(program: Program) -> SymbolicPDS:
    """Full pipeline: unify locals, derive rules, close frames."""
    d = derive_rules(program)
    return to_symbolic(d, unify_locals(program), program.global_names, program.assumes)


def derive_instance(program: Program, tag: str, out_global: str) -> SymbolicPDS:
    """Pushdown system for a single call ``tag(_, out_global)``, starting in the callee."""
    d = derive_rules(program, (tag, out_global))
    return to_symbolic(d, unify_locals(program, tag), program.global_names)


def points_in_order(pds: SymbolicPDS) -> list[str]:
    return sorted(pds.frames, key=natural_key)
