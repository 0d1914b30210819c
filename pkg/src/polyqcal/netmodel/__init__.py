"""Reaction-network model language: types, parsing, validation, compilation."""

from __future__ import annotations

import importlib.resources

from .compile import CompiledNetwork, compile_network
from .parser import parse
from .types import (
    BinOp, BoolOp, Choose, Compare, ComplementInit, Condition, Diagnostic,
    DLNInit, Event, FixedInit, Hill, ModelError, NotOp, Num, Observable,
    ParamDecl, Predicate, RateEvalError, RateExpr, Reaction, ReactionNetwork,
    Ref, SpeciesDecl, UniformInit, evaluate_expr, evaluate_predicate,
    format_expr, format_predicate, serialize,
)
from .validate import validate

__all__ = [
    "BinOp", "BoolOp", "Choose", "Compare", "ComplementInit", "CompiledNetwork",
    "Condition", "Diagnostic", "DLNInit", "Event", "FixedInit", "Hill",
    "ModelError", "NotOp", "Num", "Observable", "ParamDecl", "Predicate",
    "RateEvalError", "RateExpr", "Reaction", "ReactionNetwork", "Ref",
    "SpeciesDecl", "UniformInit", "compile_network", "evaluate_expr",
    "evaluate_predicate", "evaluate_rate", "format_expr", "format_predicate",
    "load_builtin_model", "parse", "parse_model", "serialize", "try_parse_model",
    "validate",
]


def try_parse_model(text: str):
    """Parse and validate; returns (network | None, diagnostics)."""
    net, diags = parse(text)
    if net is None or any(d.severity == "error" for d in diags):
        return None, diags
    diags = diags + validate(net)
    if any(d.severity == "error" for d in diags):
        return None, diags
    return net, diags


def parse_model(text: str) -> ReactionNetwork:
    """Parse and validate model text, raising ModelError on any error."""
    net, diags = try_parse_model(text)
    if net is None:
        raise ModelError([d for d in diags if d.severity == "error"])
    return net


def evaluate_rate(expr: RateExpr, state, params) -> float:
    """Hazard of a rate expression at integer counts and parameter values."""
    value = evaluate_expr(expr, state, params)
    if not (value >= 0.0) or value != value:
        raise RateEvalError(f"hazard evaluated to {value!r}")
    return value


def load_builtin_model(name: str = "polyq") -> ReactionNetwork:
    """Load a model file bundled with the package (default: the PolyQ
    aggregation network with its three experimental conditions)."""
    ref = importlib.resources.files("polyqcal").joinpath("models", f"{name}.model")
    return parse_model(ref.read_text(encoding="utf-8"))
