"""Textual mechanism expressions f(t) with exact first derivatives.

Grammar (standard precedence, tightest first):

    power   >  unary minus  >  * /  >  + -
    atom    := NUMBER | 't' | 'pi' | name '(' args ')' | '(' expr ')'
    power   := atom ['^' unary]        (exponent must not contain t)
    functions: cos, sin, exp (1 arg), max (2 args), gausspdf (3 args)

``gausspdf(x, mu, sigma)`` is the normal density with *standard
deviation* sigma: exp(-(x-mu)^2 / (2 sigma^2)) / (sigma sqrt(2 pi)).

Expressions are immutable ASTs.  ``to_text`` prints a canonical string
that re-parses to an equal AST.  Evaluation runs on dual numbers, so
values and t-derivatives are exact to rounding, on scalars or numpy
arrays alike.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError, MechanismParseError, NumericalDomainError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class TimeVar:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "MechanismExpr"


@dataclass(frozen=True)
class Fun:
    """cos, sin or exp applied to one argument."""

    name: str
    arg: "MechanismExpr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "MechanismExpr"
    right: "MechanismExpr"


@dataclass(frozen=True)
class Max:
    left: "MechanismExpr"
    right: "MechanismExpr"


@dataclass(frozen=True)
class GaussPdf:
    arg: "MechanismExpr"
    mu: "MechanismExpr"
    sigma: "MechanismExpr"


MechanismExpr = Union[Const, Pi, TimeVar, Neg, Fun, Binary, Max, GaussPdf]


@dataclass(frozen=True)
class Dual:
    """Value and d/dt at one point (or elementwise over an array)."""

    value: object
    deriv: object


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_FUNCTIONS = {"cos": 1, "sin": 1, "exp": 1, "max": 2, "gausspdf": 3}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            offset = len(text) - len(stripped)
            raise MechanismParseError(
                f"unexpected character {stripped[0]!r}", offset,
                expected={"number", "identifier", "operator"},
            )
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.idx = 0

    def peek(self):
        return self.tokens[self.idx]

    def advance(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def fail(self, expected):
        kind, text, offset = self.peek()
        found = "end of input" if kind == "end" else repr(text)
        raise MechanismParseError(
            f"expected one of {sorted(expected)}, found {found}",
            offset, expected=expected,
        )

    def expect_op(self, op):
        kind, text, _ = self.peek()
        if kind == "op" and text == op:
            return self.advance()
        self.fail({op})

    def parse(self):
        expr = self.expr()
        if self.peek()[0] != "end":
            self.fail({"end of input", "+", "-", "*", "/"})
        return expr

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            _, _, offset = self.advance()
            exponent = self.unary()
            if _depends_on_t(exponent):
                raise MechanismParseError(
                    "exponent must be a constant (no t)", offset,
                    expected={"constant expression"},
                )
            return Binary("^", base, exponent)
        return base

    def atom(self):
        kind, text, offset = self.peek()
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "ident":
            self.advance()
            if text == "t":
                return TimeVar()
            if text == "pi":
                return Pi()
            if text in _FUNCTIONS:
                return self.call(text, offset)
            raise MechanismParseError(
                f"unknown name {text!r}", offset,
                expected={"t", "pi", *_FUNCTIONS},
            )
        if kind == "op" and text == "(":
            self.advance()
            inner = self.expr()
            self.expect_op(")")
            return inner
        self.fail({"number", "t", "pi", "(", *_FUNCTIONS})

    def call(self, name, offset):
        arity = _FUNCTIONS[name]
        self.expect_op("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.advance()
            args.append(self.expr())
        self.expect_op(")")
        if len(args) != arity:
            raise MechanismParseError(
                f"{name} takes {arity} argument(s), got {len(args)}", offset,
                expected={f"{arity} arguments"},
            )
        if name == "max":
            return Max(args[0], args[1])
        if name == "gausspdf":
            return GaussPdf(args[0], args[1], args[2])
        return Fun(name, args[0])


def _depends_on_t(expr):
    if isinstance(expr, TimeVar):
        return True
    if isinstance(expr, (Const, Pi)):
        return False
    if isinstance(expr, Neg):
        return _depends_on_t(expr.arg)
    if isinstance(expr, Fun):
        return _depends_on_t(expr.arg)
    if isinstance(expr, Binary):
        return _depends_on_t(expr.left) or _depends_on_t(expr.right)
    if isinstance(expr, Max):
        return _depends_on_t(expr.left) or _depends_on_t(expr.right)
    if isinstance(expr, GaussPdf):
        return any(_depends_on_t(e) for e in (expr.arg, expr.mu, expr.sigma))
    raise TypeError(f"not a mechanism expression: {expr!r}")


def parse(text):
    """Parse a mechanism string into an AST.

    Raises :class:`MechanismParseError` with the byte offset of the
    failure and the token set that would have been accepted there.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printing

_LEVEL_ADD, _LEVEL_MUL, _LEVEL_UNARY, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(expr):
    if isinstance(expr, Binary):
        if expr.op in "+-":
            return _LEVEL_ADD
        if expr.op in "*/":
            return _LEVEL_MUL
        return _LEVEL_POW
    if isinstance(expr, Neg):
        return _LEVEL_UNARY
    return _LEVEL_ATOM


def _fmt_number(value):
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_text(expr):
    """Canonical string form; ``parse(to_text(e)) == e`` for any AST."""

    def wrap(child, need_parens):
        s = to_text(child)
        return f"({s})" if need_parens else s

    if isinstance(expr, Const):
        return _fmt_number(expr.value)
    if isinstance(expr, Pi):
        return "pi"
    if isinstance(expr, TimeVar):
        return "t"
    if isinstance(expr, Neg):
        return "-" + wrap(expr.arg, _level(expr.arg) < _LEVEL_UNARY)
    if isinstance(expr, Fun):
        return f"{expr.name}({to_text(expr.arg)})"
    if isinstance(expr, Max):
        return f"max({to_text(expr.left)}, {to_text(expr.right)})"
    if isinstance(expr, GaussPdf):
        return (f"gausspdf({to_text(expr.arg)}, {to_text(expr.mu)}, "
                f"{to_text(expr.sigma)})")
    if isinstance(expr, Binary):
        if expr.op in "+-":
            left = wrap(expr.left, _level(expr.left) < _LEVEL_ADD)
            right = wrap(expr.right, _level(expr.right) <= _LEVEL_ADD)
            return f"{left} {expr.op} {right}"
        if expr.op in "*/":
            left = wrap(expr.left, _level(expr.left) < _LEVEL_MUL)
            right = wrap(expr.right, _level(expr.right) <= _LEVEL_MUL)
            return f"{left}{expr.op}{right}"
        base = wrap(expr.left, _level(expr.left) < _LEVEL_ATOM)
        exponent = wrap(expr.right, _level(expr.right) < _LEVEL_UNARY)
        return f"{base}^{exponent}"
    raise TypeError(f"not a mechanism expression: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _eval(expr, t, dt):
    if isinstance(expr, Const):
        return expr.value, np.zeros_like(dt)
    if isinstance(expr, Pi):
        return math.pi, np.zeros_like(dt)
    if isinstance(expr, TimeVar):
        return t, dt
    if isinstance(expr, Neg):
        v, d = _eval(expr.arg, t, dt)
        return -v, -d
    if isinstance(expr, Fun):
        v, d = _eval(expr.arg, t, dt)
        if expr.name == "cos":
            return np.cos(v), -np.sin(v) * d
        if expr.name == "sin":
            return np.sin(v), np.cos(v) * d
        ev = np.exp(v)
        return ev, ev * d
    if isinstance(expr, Max):
        av, ad = _eval(expr.left, t, dt)
        bv, bd = _eval(expr.right, t, dt)
        take_left = av >= bv  # ties follow the left argument
        return np.where(take_left, av, bv), np.where(take_left, ad, bd)
    if isinstance(expr, GaussPdf):
        xv, xd = _eval(expr.arg, t, dt)
        mu, _ = _eval(expr.mu, t, dt)
        sigma, _ = _eval(expr.sigma, t, dt)
        if np.any(np.asarray(sigma) <= 0):
            raise NumericalDomainError(
                "gausspdf needs sigma > 0", value=float(np.min(sigma)))
        z = (xv - mu) / sigma
        v = np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)
        return v, v * (-(xv - mu) / (sigma * sigma)) * xd
    if isinstance(expr, Binary):
        av, ad = _eval(expr.left, t, dt)
        if expr.op == "^":
            p, _ = _eval(expr.right, t, dt)
            p = float(p)
            if np.any(np.asarray(av) == 0) and p < 0:
                raise NumericalDomainError(
                    "0 raised to a negative power", value=p)
            if np.any(np.asarray(av) < 0) and p != int(p):
                raise NumericalDomainError(
                    "negative base with non-integer exponent", value=p)
            if p != 0 and p < 1 and np.any(np.asarray(av) == 0):
                raise NumericalDomainError(
                    "derivative of x^p is unbounded at 0 for p < 1", value=p)
            value = av ** p
            deriv = np.zeros_like(dt) if p == 0 else p * av ** (p - 1) * ad
            return value, deriv
        bv, bd = _eval(expr.right, t, dt)
        if expr.op == "+":
            return av + bv, ad + bd
        if expr.op == "-":
            return av - bv, ad - bd
        if expr.op == "*":
            return av * bv, ad * bv + av * bd
        if np.any(np.asarray(bv) == 0):
            raise NumericalDomainError("division by zero")
        return av / bv, (ad * bv - av * bd) / (bv * bv)
    raise TypeError(f"not a mechanism expression: {expr!r}")


def eval_dual(expr, t0):
    """Evaluate f and df/dt at ``t0`` (scalar or numpy array)."""
    t = np.asarray(t0, dtype=np.float64)
    value, deriv = _eval(expr, t, np.ones_like(t))
    value = np.broadcast_to(np.asarray(value, dtype=np.float64), t.shape)
    deriv = np.broadcast_to(np.asarray(deriv, dtype=np.float64), t.shape)
    if np.isscalar(t0) or np.ndim(t0) == 0:
        return Dual(float(value), float(deriv))
    return Dual(value.copy(), deriv.copy())


def evaluate(expr, t0):
    """Value channel only."""
    return eval_dual(expr, t0).value


# ---------------------------------------------------------------------------
# Built-in mechanisms for the four stock experiments

BUILTIN_MECHANISMS = {
    "spring_prior": "cos(t)",
    "spring_int": "1/3*cos(2*t) - 2/3",
    "pendulum_prior": "cos(t)",
    "pendulum_int": "exp(-t/(2*pi))*cos(t)",
    "fall_prior": "1 - t^2",
    "fall_int": "max(0, 1 - 2.53*t^2)",
    "pulsar_prior": (
        "0.125*gausspdf(t, 0.055, 0.05) + 0.085*gausspdf(t, 0.5, 0.08)"),
    "pulsar_int": (
        "0.0193*gausspdf(t, 0.195, 0.007) + 0.006*gausspdf(t, 0.6, 0.008)"),
}


def builtin(name):
    """Return the AST of one of the stock mechanisms."""
    try:
        text = BUILTIN_MECHANISMS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown builtin mechanism {name!r}; "
            f"choose from {sorted(BUILTIN_MECHANISMS)}"
        ) from None
    return parse(text)
