"""Text export of a composed system for an external pushdown model checker.

Grammar of the output::

    file     := comment* globals module* init property
    globals  := "global int" decl ("," decl)* ";"
    decl     := NAME "(" BITS ")"
    module   := "module" TAG "{" locals? rule* "}"
    locals   := "local int" decl ("," decl)* ";"
    rule     := POINT "-->" (POINT | POINT POINT | "eps") "(" conj ")" ";"
    conj     := constraint (" & " constraint)*      # "true" when empty
    init     := "init" POINT ";"
    property := "property" QUOTED ";"

Primed names (``x'``) denote post-state values, double-primed names the
caller frame after a push.  Main's exit point is written ``_final`` and its
copy ``_final`` plus the copy suffix, so the property can be stated over the
original system's names.
"""

from __future__ import annotations

from .frontend import pretty_expr
from .pds import Eq, natural_key
from .selfcomp import ComposedPDS


def _point_names(composed: ComposedPDS) -> dict[str, str]:
    names = {p: p for p in composed.pds.frames}
    names[composed.final_point] = "_final"
    names[composed.final_copy_point] = "_final" + composed.suffix
    return names


def property_string(composed: ComposedPDS, observed) -> str:
    pairs = [f"{x} = {composed.copy_name(x)}" for x in composed.original.gvars if x in set(observed)]
    low_eq = "(" + (" && ".join(pairs) if pairs else "true") + ")"
    return f"{low_eq} => G(_final{composed.suffix} => {low_eq})"


def export_checker_input(composed: ComposedPDS, observed, bits: int) -> str:
    pds = composed.pds
    names = _point_names(composed)
    out = [
        f"# {composed.mode} self-composition, {bits}-bit integers",
        f"# {len(pds.rules)} rules, {pds.conjuncts()} conjuncts",
    ]
    decls = ", ".join(f"{g}({bits})" for g in pds.gvars)
    out.append(f"global int {decls};" if decls else "global int;")

    modules: dict[str, list[str]] = {}
    for p in sorted(pds.frames, key=natural_key):
        modules.setdefault(pds.owners[p], []).append(p)
    main_tag = pds.owners[pds.start]
    order = [main_tag] + [t for t in modules if t != main_tag]
    rules = pds.sorted_rules()
    for tag in order:
        out.append("")
        out.append(f"module {tag} {{")
        frame_vars = list(dict.fromkeys(v for p in modules[tag] for v in pds.frames[p]))
        if frame_vars:
            out.append("  local int " + ", ".join(f"{v}({bits})" for v in frame_vars) + ";")
        for r in rules:
            if pds.owners[r.lhs] != tag:
                continue
            rhs = " ".join(names[p] for p in r.rhs) if r.rhs else "eps"
            parts = []
            for c in r.constraints:
                if isinstance(c, Eq):
                    parts.append(f"{c.var}{chr(39) * c.primes} = {pretty_expr(c.expr)}")
                else:
                    parts.append(pretty_expr(c.expr))
            conj = " & ".join(f"({x})" if " " in x else x for x in parts) or "true"
            out.append(f"  {names[r.lhs]} --> {rhs} ({conj});")
        out.append("}")
    out.append("")
    out.append(f"init {names[pds.start]};")
    out.append(f'property "{property_string(composed, observed)}";')
    return "\n".join(out) + "\n"
