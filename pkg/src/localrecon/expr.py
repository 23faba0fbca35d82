"""Operator expressions over site-indexed Pauli and ladder tokens.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := ('+' | '-') factor | NUMBER | 'pi' | NAME | OPERATOR | '(' expr ')'

``OPERATOR`` is one of ``I X Y Z plus minus`` immediately followed by a
1-based site index (``X1``, ``plus3``). Any other identifier is a
parameter name. Parsing yields a list of :class:`ProductTerm`, each a
polynomial coefficient times a product of single-site operators.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .operators import PAULIS, SIGMA_MINUS, SIGMA_PLUS

SITE_OPS = {**PAULIS, "plus": SIGMA_PLUS, "minus": SIGMA_MINUS}
_OP_RE = re.compile(r"^(I|X|Y|Z|plus|minus)(\d+)$")
_TOKEN_RE = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


class ExpressionError(ValueError):
    def __init__(self, message, text="", pos=None):
        where = f" at column {pos + 1}" if pos is not None else ""
        super().__init__(f"{message}{where}: {text!r}" if text else message)
        self.pos = pos


class Polynomial:
    """Real polynomial in named parameters.

    Stored as ``{monomial: coefficient}`` where a monomial is a sorted tuple
    of ``(name, power)`` pairs; the empty tuple is the constant term.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        for mono, c in (terms or {}).items():
            if c != 0:
                self.terms[mono] = self.terms.get(mono, 0.0) + float(c)

    @classmethod
    def constant(cls, c: float) -> "Polynomial":
        return cls({(): c})

    @classmethod
    def variable(cls, name: str) -> "Polynomial":
        return cls({((name, 1),): 1.0})

    @property
    def variables(self) -> set:
        return {name for mono in self.terms for name, _ in mono}

    def __add__(self, other):
        other = _as_poly(other)
        out = dict(self.terms)
        for mono, c in other.terms.items():
            out[mono] = out.get(mono, 0.0) + c
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __mul__(self, other):
        other = _as_poly(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                powers = dict(m1)
                for name, p in m2:
                    powers[name] = powers.get(name, 0) + p
                mono = tuple(sorted(powers.items()))
                out[mono] = out.get(mono, 0.0) + c1 * c2
        return Polynomial(out)

    __rmul__ = __mul__

    def __call__(self, values: Mapping[str, float]) -> float:
        total = 0.0
        for mono, c in self.terms.items():
            v = c
            for name, p in mono:
                if name not in values:
                    raise KeyError(f"no value for parameter {name!r}")
                v *= float(values[name]) ** p
            total += v
        return total

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.terms == other.terms

    def __hash__(self):
        return hash(tuple(sorted(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for mono, c in sorted(self.terms.items()):
            names = "*".join(n if p == 1 else f"{n}^{p}" for n, p in mono)
            parts.append(f"{c:g}*{names}" if names else f"{c:g}")
        return " + ".join(parts)


def _as_poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial.constant(float(x))


@dataclass(frozen=True)
class ProductTerm:
    """``coefficient * ⊗_{site} op`` with ops keyed by 1-based site."""

    coefficient: Polynomial
    factors: tuple  # ((site, 2x2 matrix), ...) sorted by site

    @property
    def sites(self) -> tuple:
        return tuple(q for q, _ in self.factors)

    def local_operator(self) -> np.ndarray:
        """Kronecker product of the factors in site order."""
        out = np.eye(1, dtype=complex)
        for _, op in self.factors:
            out = np.kron(out, op)
        return out

    def times(self, other: "ProductTerm") -> "ProductTerm":
        ops = dict(self.factors)
        for q, op in other.factors:
            # same-site factors multiply left to right
            ops[q] = ops[q] @ op if q in ops else op
        return ProductTerm(self.coefficient * other.coefficient, tuple(sorted(ops.items())))


def _scalar(poly: Polynomial) -> list[ProductTerm]:
    return [ProductTerm(poly, ())]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = []
        for m in _TOKEN_RE.finditer(text):
            num, name, other = m.groups()
            if num is None and name is None and other is None:
                continue
            pos = m.start(m.lastindex) if m.lastindex else m.start()
            if num is not None:
                self.tokens.append(("num", num, pos))
            elif name is not None:
                self.tokens.append(("name", name, pos))
            elif not other.isspace():
                self.tokens.append(("sym", other, pos))
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self) -> list[ProductTerm]:
        if not self.tokens:
            raise ExpressionError("empty expression", self.text)
        out = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {val!r}", self.text, pos)
        return out

    def expr(self):
        terms = self.term()
        while self.peek()[:2] in (("sym", "+"), ("sym", "-")):
            _, op, _ = self.take()
            rhs = self.term()
            if op == "-":
                rhs = [ProductTerm(-t.coefficient, t.factors) for t in rhs]
            terms = terms + rhs
        return terms

    def term(self):
        acc = self.factor()
        while self.peek()[:2] == ("sym", "*"):
            self.take()
            rhs = self.factor()
            acc = [a.times(b) for a in acc for b in rhs]
        return acc

    def factor(self):
        kind, val, pos = self.take()
        if kind == "sym" and val in "+-":
            inner = self.factor()
            if val == "-":
                inner = [ProductTerm(-t.coefficient, t.factors) for t in inner]
            return inner
        if kind == "num":
            return _scalar(Polynomial.constant(float(val)))
        if kind == "name":
            if val == "pi":
                return _scalar(Polynomial.constant(math.pi))
            m = _OP_RE.match(val)
            if m:
                site = int(m.group(2))
                if site < 1:
                    raise ExpressionError(f"site index must be >= 1 in {val!r}", self.text, pos)
                return [ProductTerm(Polynomial.constant(1.0), ((site, SITE_OPS[m.group(1)]),))]
            return _scalar(Polynomial.variable(val))
        if kind == "sym" and val == "(":
            inner = self.expr()
            k2, v2, p2 = self.take()
            if (k2, v2) != ("sym", ")"):
                raise ExpressionError("expected ')'", self.text, p2)
            return inner
        if kind == "end":
            raise ExpressionError("unexpected end of expression", self.text)
        raise ExpressionError(f"unexpected {val!r}", self.text, pos)


def parse_operator_expression(text: str) -> list[ProductTerm]:
    """Parse e.g. ``"alpha1*X1 + delta1*X1*X2"`` into product terms."""
    return _Parser(text).parse()
