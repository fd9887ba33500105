"""Sparse multivariate polynomials and polynomial vector fields.

Polynomials are stored as ``{exponent tuple: coefficient}`` dictionaries.  They
are only used to describe model families, so clarity wins over speed here; the
hot evaluation path goes through :func:`PolyField.to_terms` and the kernels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_ZERO_TOL = 0.0


class Poly:
    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms = {}
        if terms:
            for e, c in terms.items():
                if c != _ZERO_TOL:
                    self.terms[tuple(int(v) for v in e)] = float(c)

    @classmethod
    def const(cls, n, c):
        return cls(n, {(0,) * n: c})

    @classmethod
    def var(cls, n, i):
        e = [0] * n
        e[i] = 1
        return cls(n, {tuple(e): 1.0})

    def _coerce(self, other):
        if isinstance(other, Poly):
            if other.n != self.n:
                raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
            return other
        return Poly.const(self.n, float(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Poly(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Poly(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Poly.const(self.n, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Poly):
            return NotImplemented
        return self.n == other.n and self.terms == other.terms

    def __repr__(self):
        return f"Poly({self.n}, {self.terms})"

    def is_zero(self):
        return not self.terms

    @property
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def diff(self, i: int, order: int = 1) -> "Poly":
        out = {}
        for e, c in self.terms.items():
            k = e[i]
            if k < order:
                continue
            f = 1.0
            for j in range(order):
                f *= k - j
            e2 = list(e)
            e2[i] -= order
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * f
        return Poly(self.n, out)

    def partial(self, alpha) -> "Poly":
        """Mixed partial ``D^alpha``."""
        p = self
        for i, a in enumerate(alpha):
            if a:
                p = p.diff(i, a)
        return p

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        val = 0.0
        for e, c in self.terms.items():
            m = c
            for xi, k in zip(x, e):
                if k:
                    m *= xi**k
            val += m
        return val

    def to_sympy(self, symbols):
        import sympy

        expr = sympy.Integer(0)
        for e, c in self.terms.items():
            term = sympy.nsimplify(c)
            for s, k in zip(symbols, e):
                term *= s**k
            expr += term
        return expr


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|(x\d+)|(.))")


class ParseError(ValueError):
    pass


def _tokenize(src):
    pos = 0
    tokens = []
    src = src.strip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            break
        num, var, op = m.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif var is not None:
            tokens.append(("var", int(var[1:])))
        elif op is not None and not op.isspace():
            if op not in "+-*^()":
                raise ParseError(f"unexpected character {op!r} in {src!r}")
            tokens.append(("op", op))
        pos = m.end()
    return tokens


def parse_poly(src: str, n: int) -> Poly:
    """Parse ``+ - * ^``, parentheses, numeric constants and ``x1..xn``."""
    tokens = _tokenize(src)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None)

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def expr():
        out = term()
        while peek() in (("op", "+"), ("op", "-")):
            _, op = take()
            rhs = term()
            out = out + rhs if op == "+" else out - rhs
        return out

    def term():
        out = unary()
        while peek() == ("op", "*"):
            take()
            out = out * unary()
        return out

    def unary():
        if peek() == ("op", "-"):
            take()
            return -unary()
        if peek() == ("op", "+"):
            take()
            return unary()
        return power()

    def power():
        base = atom()
        if peek() == ("op", "^"):
            take()
            kind, val = take()
            if kind != "num" or val != int(val) or val < 0:
                raise ParseError(f"exponent must be a non-negative integer in {src!r}")
            base = base ** int(val)
        return base

    def atom():
        kind, val = take()
        if kind == "num":
            return Poly.const(n, val)
        if kind == "var":
            if not 1 <= val <= n:
                raise ParseError(f"variable x{val} out of range 1..{n}")
            return Poly.var(n, val - 1)
        if (kind, val) == ("op", "("):
            inner = expr()
            if take() != ("op", ")"):
                raise ParseError(f"unbalanced parenthesis in {src!r}")
            return inner
        raise ParseError(f"unexpected token {val!r} in {src!r}")

    if not tokens:
        raise ParseError("empty expression")
    out = expr()
    if pos != len(tokens):
        raise ParseError(f"trailing input in {src!r}")
    return out


# -- vector fields ------------------------------------------------------------


@dataclass(frozen=True)
class PolyField:
    """Vector field ``sum_i comps[i] * d/dx_i`` with polynomial coefficients."""

    comps: tuple

    @property
    def n(self):
        return len(self.comps)

    @classmethod
    def from_strings(cls, exprs, n=None):
        n = len(exprs) if n is None else n
        if len(exprs) != n:
            raise ParseError(f"expected {n} coefficient expressions, got {len(exprs)}")
        return cls(tuple(parse_poly(e, n) for e in exprs))

    def __call__(self, x):
        return np.array([p(x) for p in self.comps])

    @cached_property
    def _jac_polys(self):
        return [[p.diff(k) for k in range(self.n)] for p in self.comps]

    def jacobian(self, x):
        return np.array([[d(x) for d in row] for row in self._jac_polys])

    def derivative(self, k):
        return PolyField(tuple(p.diff(k) for p in self.comps))

    def scale(self, c):
        return PolyField(tuple(c * p for p in self.comps))

    def __add__(self, other):
        return PolyField(tuple(a + b for a, b in zip(self.comps, other.comps)))

    def bracket(self, other: "PolyField") -> "PolyField":
        """[V, W] = DW.V - DV.W."""
        n = self.n
        out = []
        for i in range(n):
            acc = Poly(n)
            for k in range(n):
                acc = acc + self.comps[k] * other.comps[i].diff(k) - other.comps[k] * self.comps[i].diff(k)
            out.append(acc)
        return PolyField(tuple(out))

    def is_zero(self):
        return all(p.is_zero() for p in self.comps)

    def to_terms(self):
        exps, coefs, comps = [], [], []
        for i, p in enumerate(self.comps):
            for e, c in sorted(p.terms.items()):
                exps.append(e)
                coefs.append(c)
                comps.append(i)
        n = self.n
        return (
            np.array(exps, dtype=np.int64).reshape(-1, n),
            np.array(coefs, dtype=np.float64),
            np.array(comps, dtype=np.int64),
        )


def pack_fields(fields) -> tuple:
    """Concatenate term arrays of several fields with a field-index column."""
    n = fields[0].n
    parts = [f.to_terms() for f in fields]
    exps = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, n), np.int64)
    coefs = np.concatenate([p[1] for p in parts])
    comps = np.concatenate([p[2] for p in parts])
    fidx = np.concatenate([np.full(len(p[1]), j, dtype=np.int64) for j, p in enumerate(parts)])
    return (
        np.ascontiguousarray(exps.reshape(-1, n), dtype=np.int64),
        np.ascontiguousarray(coefs, dtype=np.float64),
        np.ascontiguousarray(comps, dtype=np.int64),
        np.ascontiguousarray(fidx, dtype=np.int64),
    )
