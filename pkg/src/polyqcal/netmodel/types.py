"""Abstract model types for stochastic reaction networks.

All node classes are frozen dataclasses; source positions are carried
for diagnostics but excluded from equality so that parse -> serialize ->
parse round-trips compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message}"


class ModelError(Exception):
    """Raised when a model fails to parse or validate."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


# --- initial laws ---------------------------------------------------------

@dataclass(frozen=True)
class FixedInit:
    count: int


@dataclass(frozen=True)
class DLNInit:
    """Discrete log-normal: mass pi(i) = Pr(i-0.5 < X < i+0.5), X ~ LN(mu, sigma^2)."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class UniformInit:
    low: int
    high: int  # inclusive


@dataclass(frozen=True)
class ComplementInit:
    total: int
    other: str


InitialLaw = Union[FixedInit, DLNInit, UniformInit, ComplementInit]


@dataclass(frozen=True)
class SpeciesDecl:
    name: str
    init: InitialLaw
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ParamDecl:
    name: str
    value: float | None = None          # fixed value, None for uncertain rates
    theta_index: int | None = None      # 1-based slot in the log-rate vector
    log_median: float | None = None     # prior median of the log rate
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def is_theta(self) -> bool:
        return self.theta_index is not None


# --- rate expressions -----------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    """Unresolved identifier; refers to a species count or a parameter."""

    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "RateExpr"
    right: "RateExpr"


@dataclass(frozen=True)
class Choose:
    """Mass-action combinatorial count: species count choose k."""

    species: str
    k: int
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Hill:
    """S^n / (S^n + K^n) saturation term."""

    s: "RateExpr"
    k: "RateExpr"
    n: "RateExpr"


RateExpr = Union[Num, Ref, BinOp, Choose, Hill]


class RateEvalError(ValueError):
    pass


def evaluate_expr(expr: RateExpr, state: Mapping[str, int], params: Mapping[str, float]) -> float:
    """Tree-walking evaluation; the reference semantics for hazards."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        if expr.name in state:
            return float(state[expr.name])
        if expr.name in params:
            return float(params[expr.name])
        raise RateEvalError(f"unknown identifier {expr.name!r}")
    if isinstance(expr, BinOp):
        a = evaluate_expr(expr.left, state, params)
        b = evaluate_expr(expr.right, state, params)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if b == 0.0:
            raise RateEvalError("division by zero")
        return a / b
    if isinstance(expr, Choose):
        x = float(state[expr.species])
        acc = 1.0
        for j in range(expr.k):
            acc *= x - j
        for j in range(2, expr.k + 1):
            acc /= j
        return max(acc, 0.0)
    if isinstance(expr, Hill):
        s = evaluate_expr(expr.s, state, params)
        k = evaluate_expr(expr.k, state, params)
        n = evaluate_expr(expr.n, state, params)
        num = s if n == 1.0 else s ** n
        den = num + (k if n == 1.0 else k ** n)
        return 0.0 if den == 0.0 else num / den
    raise TypeError(f"not a rate expression: {expr!r}")


def expr_identifiers(expr: RateExpr) -> set[str]:
    """All names referenced by an expression (species or parameters)."""
    out: set[str] = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Ref):
            out.add(e.name)
        elif isinstance(e, BinOp):
            stack.extend((e.left, e.right))
        elif isinstance(e, Choose):
            out.add(e.species)
        elif isinstance(e, Hill):
            stack.extend((e.s, e.k, e.n))
    return out


# --- predicates (observables) ---------------------------------------------

@dataclass(frozen=True)
class Compare:
    op: str  # > < >= <= == !=
    left: RateExpr
    right: RateExpr


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class NotOp:
    operand: "Predicate"


Predicate = Union[Compare, BoolOp, NotOp]


def evaluate_predicate(pred: Predicate, state: Mapping[str, int]) -> bool:
    if isinstance(pred, Compare):
        a = evaluate_expr(pred.left, state, {})
        b = evaluate_expr(pred.right, state, {})
        return {
            ">": a > b, "<": a < b, ">=": a >= b,
            "<=": a <= b, "==": a == b, "!=": a != b,
        }[pred.op]
    if isinstance(pred, BoolOp):
        if pred.op == "and":
            return evaluate_predicate(pred.left, state) and evaluate_predicate(pred.right, state)
        return evaluate_predicate(pred.left, state) or evaluate_predicate(pred.right, state)
    if isinstance(pred, NotOp):
        return not evaluate_predicate(pred.operand, state)
    raise TypeError(f"not a predicate: {pred!r}")


def predicate_identifiers(pred: Predicate) -> set[str]:
    if isinstance(pred, Compare):
        return expr_identifiers(pred.left) | expr_identifiers(pred.right)
    if isinstance(pred, BoolOp):
        return predicate_identifiers(pred.left) | predicate_identifiers(pred.right)
    return predicate_identifiers(pred.operand)


# --- network elements ------------------------------------------------------

@dataclass(frozen=True)
class Reaction:
    label: str
    reactants: tuple[tuple[str, int], ...]  # (species, multiplicity)
    products: tuple[tuple[str, int], ...]
    rate: RateExpr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Event:
    time: float  # seconds
    assignments: tuple[tuple[str, float], ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Observable:
    name: str
    predicate: Predicate
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Condition:
    name: str
    overrides: tuple[tuple[str, float], ...] = ()
    events: tuple[Event, ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ReactionNetwork:
    """Immutable, validated model; safe to share across workers."""

    species: tuple[SpeciesDecl, ...]
    params: tuple[ParamDecl, ...]
    reactions: tuple[Reaction, ...]
    events: tuple[Event, ...] = ()
    observables: tuple[Observable, ...] = ()
    conditions: tuple[Condition, ...] = ()

    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    def species_index(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.species)}

    def param_index(self) -> dict[str, int]:
        return {p.name: i for i, p in enumerate(self.params)}

    def param_map(self) -> dict[str, ParamDecl]:
        return {p.name: p for p in self.params}

    @property
    def n_theta(self) -> int:
        return sum(1 for p in self.params if p.is_theta)

    def theta_params(self) -> list[ParamDecl]:
        """Uncertain parameters ordered by their theta index."""
        ps = [p for p in self.params if p.is_theta]
        return sorted(ps, key=lambda p: p.theta_index)

    def theta_log_medians(self):
        return [p.log_median for p in self.theta_params()]

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(f"no condition named {name!r}")

    def observable(self, name: str) -> Observable:
        for o in self.observables:
            if o.name == name:
                return o
        raise KeyError(f"no observable named {name!r}")


# --- serialization ---------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def _fmt_num(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return _fmt_float(x)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(expr: RateExpr, _parent_prec: int = 0) -> str:
    if isinstance(expr, Num):
        return _fmt_num(expr.value)
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Choose):
        return f"choose({expr.species}, {expr.k})"
    if isinstance(expr, Hill):
        return f"hill({format_expr(expr.s)}, {format_expr(expr.k)}, {format_expr(expr.n)})"
    prec = _PREC[expr.op]
    left = format_expr(expr.left, prec)
    right = format_expr(expr.right, prec + 1)  # left-associative
    body = f"{left} {expr.op} {right}"
    if prec < _parent_prec:
        return f"({body})"
    return body


def format_predicate(pred: Predicate, _parent: int = 0) -> str:
    # precedence: or=1, and=2, not=3, compare=4
    if isinstance(pred, Compare):
        return f"{format_expr(pred.left)} {pred.op} {format_expr(pred.right)}"
    if isinstance(pred, NotOp):
        body = f"not {format_predicate(pred.operand, 3)}"
        return f"({body})" if _parent > 3 else body
    prec = 2 if pred.op == "and" else 1
    body = f"{format_predicate(pred.left, prec)} {pred.op} {format_predicate(pred.right, prec + 1)}"
    return f"({body})" if prec < _parent else body


def _fmt_side(side: tuple[tuple[str, int], ...]) -> str:
    if not side:
        return ""
    return " + ".join(name if m == 1 else f"{m} {name}" for name, m in side)


def _fmt_event(ev: Event) -> str:
    sets = "; ".join(f"set {n} = {_fmt_num(v)}" for n, v in ev.assignments)
    return f"event at {_fmt_num(ev.time)} {sets}"


def serialize(net: ReactionNetwork) -> str:
    """Canonical text form; parse(serialize(net)) == net."""
    lines: list[str] = []
    for s in net.species:
        init = s.init
        if isinstance(init, FixedInit):
            lines.append(f"species {s.name} = {init.count}")
        elif isinstance(init, DLNInit):
            lines.append(f"species {s.name} ~ DLN({_fmt_float(init.mu)}, {_fmt_float(init.sigma)})")
        elif isinstance(init, UniformInit):
            lines.append(f"species {s.name} ~ U{{{init.low}..{init.high}}}")
        else:
            lines.append(f"species {s.name} = {init.total} - {init.other}")
    for p in net.params:
        if p.is_theta:
            lines.append(f"param {p.name} = theta({p.theta_index}, logmedian={_fmt_float(p.log_median)})")
        else:
            lines.append(f"param {p.name} = {_fmt_float(p.value)}")
    for r in net.reactions:
        lines.append(
            f"reaction {r.label}: {_fmt_side(r.reactants)} -> {_fmt_side(r.products)}"
            f" @ {format_expr(r.rate)}"
        )
    for ev in net.events:
        lines.append(_fmt_event(ev))
    for o in net.observables:
        lines.append(f"observable {o.name} = {format_predicate(o.predicate)}")
    for c in net.conditions:
        body: list[str] = []
        for n, v in c.overrides:
            body.append(f"set {n} = {_fmt_num(v)}")
        for ev in c.events:
            body.append(_fmt_event(ev))
        if body:
            lines.append(f"condition {c.name} {{ " + "; ".join(body) + " }")
        else:
            lines.append(f"condition {c.name} {{ }}")
    return "\n".join(lines) + "\n"
