"""Network validation: name resolution, theta-slot bookkeeping and
hazard/stoichiometry consistency probes."""

from __future__ import annotations

import math

from .types import (
    ComplementInit, Diagnostic, DLNInit, FixedInit, Num, RateEvalError,
    ReactionNetwork, UniformInit, evaluate_expr, expr_identifiers,
    predicate_identifiers,
)

_PROBE_COUNT = 1000  # generous non-limiting count for other species


def _probe_params(net: ReactionNetwork) -> dict[str, float]:
    out: dict[str, float] = {}
    for p in net.params:
        out[p.name] = math.exp(p.log_median) if p.is_theta else float(p.value)
    return out


def _static_zero_denominators(expr, diags: list[Diagnostic], where: str) -> None:
    from .types import BinOp, Choose, Hill
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, BinOp):
            if e.op == "/" and isinstance(e.right, Num) and e.right.value == 0.0:
                diags.append(Diagnostic("error", f"division by constant zero in {where}"))
            stack.extend((e.left, e.right))
        elif isinstance(e, Hill):
            stack.extend((e.s, e.k, e.n))
        elif isinstance(e, Choose):
            pass


def validate(net: ReactionNetwork) -> list[Diagnostic]:
    """Empty result means the network satisfies every structural invariant.

    Warnings flag hazards that do not provably vanish when a reactant is
    exhausted; errors make the network unusable.
    """
    diags: list[Diagnostic] = []

    species_names: set[str] = set()
    for s in net.species:
        if s.name in species_names:
            diags.append(Diagnostic("error", f"duplicate species {s.name!r}", s.line, s.col))
        species_names.add(s.name)

    param_names: set[str] = set()
    for p in net.params:
        if p.name in param_names:
            diags.append(Diagnostic("error", f"duplicate parameter {p.name!r}", p.line, p.col))
        if p.name in species_names:
            diags.append(Diagnostic("error", f"parameter {p.name!r} shadows a species", p.line, p.col))
        param_names.add(p.name)

    declared = species_names | param_names

    # initial laws
    seen: set[str] = set()
    for s in net.species:
        init = s.init
        if isinstance(init, FixedInit) and init.count < 0:
            diags.append(Diagnostic("error", f"negative initial count for {s.name!r}", s.line, s.col))
        elif isinstance(init, UniformInit):
            if init.low < 0 or init.high < init.low:
                diags.append(Diagnostic("error", f"bad uniform range for {s.name!r}", s.line, s.col))
        elif isinstance(init, DLNInit) and init.sigma <= 0:
            diags.append(Diagnostic("error", f"DLN sigma must be positive for {s.name!r}", s.line, s.col))
        elif isinstance(init, ComplementInit):
            if init.other not in seen:
                diags.append(Diagnostic(
                    "error",
                    f"complement for {s.name!r} references {init.other!r}, which is not declared earlier",
                    s.line, s.col))
            if init.total <= 0:
                diags.append(Diagnostic("error", f"complement total must be positive for {s.name!r}",
                                        s.line, s.col))
        seen.add(s.name)

    # theta slots: distinct and contiguous from 1
    idxs = sorted(p.theta_index for p in net.params if p.is_theta)
    if idxs:
        if len(set(idxs)) != len(idxs):
            diags.append(Diagnostic("error", "duplicate theta indices"))
        elif idxs != list(range(1, len(idxs) + 1)):
            diags.append(Diagnostic("error",
                                    f"theta indices must be 1..{len(idxs)}, found {idxs}"))

    # reactions
    labels: set[str] = set()
    probe_params = _probe_params(net) if not diags else {}
    for r in net.reactions:
        if r.label in labels:
            diags.append(Diagnostic("error", f"duplicate reaction label {r.label!r}", r.line, r.col))
        labels.add(r.label)
        for name, mult in r.reactants + r.products:
            if name not in species_names:
                diags.append(Diagnostic("error",
                                        f"reaction {r.label!r} references unknown species {name!r}",
                                        r.line, r.col))
            if mult < 1:
                diags.append(Diagnostic("error",
                                        f"reaction {r.label!r} has non-positive stoichiometry",
                                        r.line, r.col))
        undeclared = expr_identifiers(r.rate) - declared
        for name in sorted(undeclared):
            diags.append(Diagnostic("error",
                                    f"rate of reaction {r.label!r} references unknown identifier {name!r}",
                                    r.line, r.col))
        _static_zero_denominators(r.rate, diags, f"rate of reaction {r.label!r}")

        if not undeclared and probe_params:
            diags.extend(_probe_reaction(net, r, probe_params))

    # events
    for ev in list(net.events) + [e for c in net.conditions for e in c.events]:
        if ev.time < 0:
            diags.append(Diagnostic("error", "event time must be non-negative", ev.line, ev.col))
        for name, _ in ev.assignments:
            if name not in param_names:
                diags.append(Diagnostic("error", f"event assigns unknown parameter {name!r}",
                                        ev.line, ev.col))

    # observables
    obs_names: set[str] = set()
    for o in net.observables:
        if o.name in obs_names:
            diags.append(Diagnostic("error", f"duplicate observable {o.name!r}", o.line, o.col))
        obs_names.add(o.name)
        for name in sorted(predicate_identifiers(o.predicate) - species_names):
            diags.append(Diagnostic("error",
                                    f"observable {o.name!r} references unknown species {name!r}",
                                    o.line, o.col))
        if _predicate_has_division(o.predicate):
            diags.append(Diagnostic(
                "error",
                f"observable {o.name!r} uses division; predicates must be "
                f"total over all non-negative states", o.line, o.col))

    # conditions
    cond_names: set[str] = set()
    for c in net.conditions:
        if c.name in cond_names:
            diags.append(Diagnostic("error", f"duplicate condition {c.name!r}", c.line, c.col))
        cond_names.add(c.name)
        for name, _ in c.overrides:
            if name not in param_names:
                diags.append(Diagnostic("error",
                                        f"condition {c.name!r} overrides unknown parameter {name!r}",
                                        c.line, c.col))

    return diags


def _predicate_has_division(pred) -> bool:
    from .types import BinOp, BoolOp, Compare, Hill, NotOp
    if isinstance(pred, Compare):
        stack = [pred.left, pred.right]
        while stack:
            e = stack.pop()
            if isinstance(e, BinOp):
                if e.op == "/":
                    return True
                stack.extend((e.left, e.right))
            elif isinstance(e, Hill):
                stack.extend((e.s, e.k, e.n))
        return False
    if isinstance(pred, BoolOp):
        return (_predicate_has_division(pred.left)
                or _predicate_has_division(pred.right))
    if isinstance(pred, NotOp):
        return _predicate_has_division(pred.operand)
    return False


def _probe_reaction(net: ReactionNetwork, r, probe_params) -> list[Diagnostic]:
    """Check the hazard vanishes whenever a reactant is under-stocked.

    Applying the net stoichiometry must never drive a count negative
    while the hazard is positive, so for each consumed species we probe
    every deficient count below the requirement.
    """
    diags: list[Diagnostic] = []
    need: dict[str, int] = {}
    net_delta: dict[str, int] = {}
    for name, m in r.reactants:
        need[name] = need.get(name, 0) + m
        net_delta[name] = net_delta.get(name, 0) - m
    for name, m in r.products:
        net_delta[name] = net_delta.get(name, 0) + m
    base = {s.name: _PROBE_COUNT for s in net.species}
    for name in need:
        # consumption that is restocked by the products cannot go negative
        if net_delta.get(name, 0) >= 0:
            continue
        required = -net_delta[name]
        for deficient in range(required):
            state = dict(base)
            state[name] = deficient
            try:
                h = evaluate_expr(r.rate, state, probe_params)
            except RateEvalError as exc:
                diags.append(Diagnostic(
                    "warning",
                    f"hazard of reaction {r.label!r} failed to evaluate at a probe state ({exc})",
                    r.line, r.col))
                break
            if h > 0.0:
                diags.append(Diagnostic(
                    "warning",
                    f"hazard of reaction {r.label!r} does not vanish at {name}={deficient} "
                    f"although the reaction consumes {required}",
                    r.line, r.col))
                break
    return diags
