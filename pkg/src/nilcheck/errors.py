"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class NilError(Exception):
    """Base class for user-facing errors (bad input, violated preconditions)."""


class InputError(NilError):
    """The source program or a command-line argument is malformed."""


class LexError(InputError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ParseError(InputError):
    def __init__(self, message: str, line: int, col: int, expected: frozenset[str] = frozenset()):
        detail = message
        if expected:
            detail += f" (expected one of: {', '.join(sorted(expected))})"
        super().__init__(f"{line}:{col}: {detail}")
        self.line = line
        self.col = col
        self.expected = expected


class ValidationError(InputError):
    """A structural rule of the language is broken; ``kind`` names which one."""

    def __init__(self, kind: str, message: str, span=None):
        where = f"{span.line}:{span.col}: " if span is not None else ""
        super().__init__(f"{where}{kind}: {message}")
        self.kind = kind
        self.span = span


class PreconditionError(NilError):
    """A transformation was asked to run on an input outside its assumptions."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class BudgetError(NilError):
    """Explicit enumeration would exceed the configured state budget."""

    def __init__(self, kind: str, needed: int, budget: int):
        super().__init__(f"{kind}: needs {needed} bits of state, budget is {budget}")
        self.kind = kind
        self.needed = needed
        self.budget = budget


class StateBudgetExceeded(BudgetError):
    def __init__(self, needed: int, budget: int):
        super().__init__("StateBudgetExceeded", needed, budget)


class EnumerationTooLarge(BudgetError):
    """The brute-force pair oracle would visit more pairs than its guard allows."""

    def __init__(self, needed: int, budget: int):
        NilError.__init__(self, f"EnumerationTooLarge: {needed} store pairs exceeds the guard of {budget}")
        self.kind = "EnumerationTooLarge"
        self.needed = needed
        self.budget = budget


class RuntimeFault(NilError):
    """The reference interpreter hit a state its semantics does not define."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class UnboundLocation(RuntimeFault):
    def __init__(self, name: str):
        super().__init__("UnboundLocation", f"no location bound for {name!r}")
        self.name = name


class ConstantOutOfRange(InputError):
    def __init__(self, value: int, bits: int):
        super().__init__(f"ConstantOutOfRange: constant {value} does not fit in {bits} bits (max {2**bits - 1})")
        self.value = value
        self.bits = bits
