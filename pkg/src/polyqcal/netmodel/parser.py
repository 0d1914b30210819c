"""Line-oriented parser for the model-definition language.

Statement grammar::

    species NAME = INT | = TOTAL - NAME | ~ DLN(mu, sigma) | ~ U{a..b}
    param NAME = FLOAT | theta(INDEX, logmedian=FLOAT)
    reaction LABEL: m1 S1 + ... -> n1 P1 + ... @ EXPR
    event at TIME[h] set NAME = FLOAT [; set NAME = FLOAT ...]
    observable NAME = PREDICATE
    condition NAME { set NAME = FLOAT; event ... }

``#`` starts a comment; times accept an ``h`` suffix (converted to
seconds); everything else is stored exactly as written.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .types import (
    BinOp, BoolOp, Choose, Compare, ComplementInit, Condition, Diagnostic,
    DLNInit, Event, FixedInit, Hill, ModelError, NotOp, Num, Observable,
    ParamDecl, Predicate, RateExpr, Reaction, ReactionNetwork, Ref,
    SpeciesDecl, UniformInit,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(\d+\.\d+|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>->|\.\.|>=|<=|==|!=|[-+*/@=~(){},:;><])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # NUMBER IDENT OP NEWLINE EOF
    text: str
    line: int
    col: int


class ParseFailure(Exception):
    def __init__(self, message: str, token: Token):
        self.diagnostic = Diagnostic("error", message, token.line, token.col)
        super().__init__(message)


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseFailure(f"unexpected character {text[pos]!r}",
                               Token("OP", text[pos], line, col))
        kind = m.lastgroup
        raw = m.group()
        if kind == "newline":
            tokens.append(Token("NEWLINE", raw, line, col))
            line += 1
            col = 1
        else:
            if kind == "number":
                tokens.append(Token("NUMBER", raw, line, col))
            elif kind == "ident":
                tokens.append(Token("IDENT", raw, line, col))
            elif kind == "op":
                tokens.append(Token("OP", raw, line, col))
            col += len(raw)
        pos = m.end()
    tokens.append(Token("EOF", "", line, col))
    return tokens


def _num_value(tok: Token) -> float:
    return float(tok.text)


def _is_int_literal(tok: Token) -> bool:
    return re.fullmatch(r"\d+", tok.text) is not None


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    # -- token plumbing -----------------------------------------------------
    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            return self.next()
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise ParseFailure(f"expected {want!r}, found {tok.text!r}", tok)
        return self.next()

    def skip_newlines(self) -> None:
        while self.peek().kind == "NEWLINE":
            self.next()

    def skip_to_newline(self) -> None:
        while self.peek().kind not in ("NEWLINE", "EOF"):
            self.next()

    # -- statements ----------------------------------------------------------
    def parse_network(self):
        species: list[SpeciesDecl] = []
        params: list[ParamDecl] = []
        reactions: list[Reaction] = []
        events: list[Event] = []
        observables: list[Observable] = []
        conditions: list[Condition] = []
        diagnostics: list[Diagnostic] = []

        while True:
            self.skip_newlines()
            tok = self.peek()
            if tok.kind == "EOF":
                break
            try:
                if tok.kind != "IDENT":
                    raise ParseFailure(f"expected a declaration, found {tok.text!r}", tok)
                if tok.text == "species":
                    species.append(self.parse_species())
                elif tok.text == "param":
                    params.append(self.parse_param())
                elif tok.text == "reaction":
                    reactions.append(self.parse_reaction())
                elif tok.text == "event":
                    events.append(self.parse_event())
                elif tok.text == "observable":
                    observables.append(self.parse_observable())
                elif tok.text == "condition":
                    conditions.append(self.parse_condition())
                else:
                    raise ParseFailure(f"unknown declaration {tok.text!r}", tok)
                nxt = self.peek()
                if nxt.kind not in ("NEWLINE", "EOF"):
                    raise ParseFailure(f"unexpected trailing input {nxt.text!r}", nxt)
            except ParseFailure as exc:
                diagnostics.append(exc.diagnostic)
                self.skip_to_newline()

        net = ReactionNetwork(
            species=tuple(species), params=tuple(params),
            reactions=tuple(reactions), events=tuple(events),
            observables=tuple(observables), conditions=tuple(conditions),
        )
        return net, diagnostics

    def parse_species(self) -> SpeciesDecl:
        kw = self.expect("IDENT", "species")
        name = self.expect("IDENT").text
        if self.accept("OP", "~"):
            law = self.parse_distribution()
        else:
            self.expect("OP", "=")
            first = self.expect("NUMBER")
            if not _is_int_literal(first):
                raise ParseFailure("species counts must be non-negative integers", first)
            if self.accept("OP", "-"):
                other = self.expect("IDENT").text
                law = ComplementInit(total=int(first.text), other=other)
            else:
                law = FixedInit(count=int(first.text))
        return SpeciesDecl(name=name, init=law, line=kw.line, col=kw.col)

    def parse_distribution(self):
        tok = self.expect("IDENT")
        if tok.text == "DLN":
            self.expect("OP", "(")
            mu = self.parse_signed_number()
            self.expect("OP", ",")
            sigma = self.parse_signed_number()
            self.expect("OP", ")")
            return DLNInit(mu=mu, sigma=sigma)
        if tok.text == "U":
            self.expect("OP", "{")
            lo = self.expect("NUMBER")
            self.expect("OP", "..")
            hi = self.expect("NUMBER")
            self.expect("OP", "}")
            if not (_is_int_literal(lo) and _is_int_literal(hi)):
                raise ParseFailure("uniform bounds must be integers", lo)
            return UniformInit(low=int(lo.text), high=int(hi.text))
        raise ParseFailure(f"unknown distribution {tok.text!r}", tok)

    def parse_signed_number(self) -> float:
        if self.accept("OP", "-"):
            return -_num_value(self.expect("NUMBER"))
        return _num_value(self.expect("NUMBER"))

    def parse_param(self) -> ParamDecl:
        kw = self.expect("IDENT", "param")
        name = self.expect("IDENT").text
        self.expect("OP", "=")
        if self.peek().kind == "IDENT" and self.peek().text == "theta":
            self.next()
            self.expect("OP", "(")
            idx_tok = self.expect("NUMBER")
            if not _is_int_literal(idx_tok):
                raise ParseFailure("theta index must be an integer", idx_tok)
            self.expect("OP", ",")
            self.expect("IDENT", "logmedian")
            self.expect("OP", "=")
            log_median = self.parse_signed_number()
            self.expect("OP", ")")
            return ParamDecl(name=name, theta_index=int(idx_tok.text),
                             log_median=log_median, line=kw.line, col=kw.col)
        value = self.parse_signed_number()
        return ParamDecl(name=name, value=value, line=kw.line, col=kw.col)

    def parse_reaction(self) -> Reaction:
        kw = self.expect("IDENT", "reaction")
        label = self.expect("IDENT").text
        self.expect("OP", ":")
        reactants = self.parse_side(stop={"->"})
        self.expect("OP", "->")
        products = self.parse_side(stop={"@"})
        self.expect("OP", "@")
        rate = self.parse_expr()
        return Reaction(label=label, reactants=reactants, products=products,
                        rate=rate, line=kw.line, col=kw.col)

    def parse_side(self, stop: set[str]) -> tuple[tuple[str, int], ...]:
        side: list[tuple[str, int]] = []
        if self.peek().kind == "OP" and self.peek().text in stop:
            return ()
        while True:
            mult = 1
            tok = self.peek()
            if tok.kind == "NUMBER":
                if not _is_int_literal(tok):
                    raise ParseFailure("stoichiometric multiplicity must be an integer", tok)
                mult = int(self.next().text)
            name = self.expect("IDENT").text
            side.append((name, mult))
            if not self.accept("OP", "+"):
                break
        return tuple(side)

    def parse_event(self) -> Event:
        kw = self.expect("IDENT", "event")
        self.expect("IDENT", "at")
        t = self.parse_signed_number()
        unit = self.peek()
        if unit.kind == "IDENT" and unit.text in ("h", "s"):
            self.next()
            if unit.text == "h":
                t *= 3600.0
        assignments = [self.parse_set_clause()]
        while self.accept("OP", ";"):
            assignments.append(self.parse_set_clause())
        return Event(time=t, assignments=tuple(assignments), line=kw.line, col=kw.col)

    def parse_set_clause(self) -> tuple[str, float]:
        self.expect("IDENT", "set")
        name = self.expect("IDENT").text
        self.expect("OP", "=")
        return (name, self.parse_signed_number())

    def parse_observable(self) -> Observable:
        kw = self.expect("IDENT", "observable")
        name = self.expect("IDENT").text
        self.expect("OP", "=")
        pred = self.parse_predicate()
        return Observable(name=name, predicate=pred, line=kw.line, col=kw.col)

    def parse_condition(self) -> Condition:
        kw = self.expect("IDENT", "condition")
        name = self.expect("IDENT").text
        self.expect("OP", "{")
        overrides: list[tuple[str, float]] = []
        events: list[Event] = []
        while True:
            while self.accept("OP", ";") or self.accept("NEWLINE"):
                pass
            if self.accept("OP", "}"):
                break
            tok = self.peek()
            if tok.kind == "EOF":
                raise ParseFailure("unterminated condition block", tok)
            if tok.kind == "IDENT" and tok.text == "set":
                overrides.append(self.parse_set_clause())
            elif tok.kind == "IDENT" and tok.text == "event":
                events.append(self.parse_event())
            else:
                raise ParseFailure(
                    f"expected 'set' or 'event' in condition block, found {tok.text!r}", tok)
        return Condition(name=name, overrides=tuple(overrides),
                         events=tuple(events), line=kw.line, col=kw.col)

    # -- rate expressions -----------------------------------------------------
    def parse_expr(self) -> RateExpr:
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("+", "-"):
                self.next()
                node = BinOp(op=tok.text, left=node, right=self.parse_term())
            else:
                return node

    def parse_term(self) -> RateExpr:
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("*", "/"):
                self.next()
                node = BinOp(op=tok.text, left=node, right=self.parse_factor())
            else:
                return node

    def parse_factor(self) -> RateExpr:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "-":
            self.next()
            inner = self.parse_factor()
            if isinstance(inner, Num):
                return Num(-inner.value)
            return BinOp(op="-", left=Num(0.0), right=inner)
        if tok.kind == "OP" and tok.text == "(":
            self.next()
            node = self.parse_expr()
            self.expect("OP", ")")
            return node
        if tok.kind == "NUMBER":
            self.next()
            return Num(_num_value(tok))
        if tok.kind == "IDENT":
            if tok.text == "choose":
                self.next()
                self.expect("OP", "(")
                sp = self.expect("IDENT")
                self.expect("OP", ",")
                k_tok = self.expect("NUMBER")
                if not _is_int_literal(k_tok) or int(k_tok.text) < 1:
                    raise ParseFailure("choose() needs a positive integer order", k_tok)
                self.expect("OP", ")")
                return Choose(species=sp.text, k=int(k_tok.text), line=sp.line, col=sp.col)
            if tok.text == "hill":
                self.next()
                self.expect("OP", "(")
                s = self.parse_expr()
                self.expect("OP", ",")
                k = self.parse_expr()
                self.expect("OP", ",")
                n = self.parse_expr()
                self.expect("OP", ")")
                return Hill(s=s, k=k, n=n)
            self.next()
            return Ref(name=tok.text, line=tok.line, col=tok.col)
        raise ParseFailure(f"expected an expression, found {tok.text!r}", tok)

    # -- predicates ------------------------------------------------------------
    def parse_predicate(self) -> Predicate:
        node = self.parse_pred_and()
        while self.peek().kind == "IDENT" and self.peek().text == "or":
            self.next()
            node = BoolOp(op="or", left=node, right=self.parse_pred_and())
        return node

    def parse_pred_and(self) -> Predicate:
        node = self.parse_pred_not()
        while self.peek().kind == "IDENT" and self.peek().text == "and":
            self.next()
            node = BoolOp(op="and", left=node, right=self.parse_pred_not())
        return node

    def parse_pred_not(self) -> Predicate:
        tok = self.peek()
        if tok.kind == "IDENT" and tok.text == "not":
            self.next()
            return NotOp(operand=self.parse_pred_not())
        if tok.kind == "OP" and tok.text == "(":
            # either a parenthesized predicate or a parenthesized arithmetic
            # term starting a comparison; try the predicate reading first
            save = self.i
            try:
                self.next()
                inner = self.parse_predicate()
                self.expect("OP", ")")
                return inner
            except ParseFailure:
                self.i = save
        return self.parse_comparison()

    def parse_comparison(self) -> Compare:
        left = self.parse_expr()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in (">", "<", ">=", "<=", "==", "!="):
            self.next()
            right = self.parse_expr()
            return Compare(op=tok.text, left=left, right=right)
        raise ParseFailure(f"expected a comparison operator, found {tok.text!r}", tok)


def parse(text: str):
    """Parse model text; returns (network, diagnostics).

    The network is the best-effort parse; callers should treat it as
    unusable when any error-severity diagnostics are present.
    """
    try:
        tokens = tokenize(text)
    except ParseFailure as exc:
        return None, [exc.diagnostic]
    net, diags = _Parser(tokens).parse_network()
    return net, diags
