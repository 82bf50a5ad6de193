"""Exact polynomial vector fields on coordinate charts.

Polynomials carry rational (``fractions.Fraction``) coefficients so that Lie
brackets, and the ranks computed from them, are exact.  Evaluation accepts
rational points (exact result) or floating points (float result).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Chart",
    "Covector",
    "DimensionError",
    "ExpressionError",
    "Polynomial",
    "PolyVectorField",
    "lie_bracket",
    "pairing",
    "parse_polynomial",
    "poly_eval",
    "pushforward_projection",
    "compile_polys",
]


class DimensionError(ValueError):
    """Raised when objects living on charts of different dimension are combined."""


class ExpressionError(ValueError):
    """Polynomial expression could not be parsed.

    ``line`` and ``column`` are 1-based positions in the source text.
    """

    def __init__(self, message: str, text: str, pos: int):
        line = text.count("\n", 0, pos) + 1
        column = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    if isinstance(c, float):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as a rational coefficient")


@dataclass(frozen=True)
class Chart:
    """Coordinate chart: a dimension and one distinct name per coordinate."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("a chart needs at least one coordinate")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate coordinate names in {self.names}")

    @classmethod
    def standard(cls, dim: int, prefix: str = "x") -> "Chart":
        return cls(tuple(f"{prefix}{i + 1}" for i in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


class Polynomial:
    """Multivariate polynomial with rational coefficients.

    Terms are stored as ``{exponent tuple: Fraction}`` with zero coefficients
    dropped, so two equal polynomials always have equal term maps.
    """

    __slots__ = ("_terms", "nvars", "_hash")

    def __init__(self, terms: Mapping[Sequence[int], object] | None, nvars: int):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        clean: dict[tuple[int, ...], Fraction] = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise DimensionError(f"exponent {exps} has length {len(exps)}, expected {nvars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            c = _as_fraction(c)
            if c:
                clean[exps] = clean.get(exps, Fraction(0)) + c
                if not clean[exps]:
                    del clean[exps]
        self._terms = clean
        self.nvars = nvars
        self._hash = None

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def constant(cls, c, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: c}, nvars)

    @classmethod
    def variable(cls, i: int, nvars: int) -> "Polynomial":
        if not 0 <= i < nvars:
            raise DimensionError(f"variable index {i} outside chart of dimension {nvars}")
        e = [0] * nvars
        e[i] = 1
        return cls({tuple(e): 1}, nvars)

    @property
    def terms(self) -> dict[tuple[int, ...], Fraction]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=-1)

    # arithmetic
    def _check(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise DimensionError(f"polynomials on {self.nvars} and {other.nvars} variables")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        return Polynomial.constant(_as_fraction(other), self.nvars)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out: dict[tuple[int, ...], Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(1, self.nvars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.nvars == other.nvars and self._terms == other._terms
        try:
            return self == Polynomial.constant(_as_fraction(other), self.nvars)
        except TypeError:
            return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    # calculus
    def diff(self, i: int) -> "Polynomial":
        if not 0 <= i < self.nvars:
            raise DimensionError(f"cannot differentiate by variable {i} of {self.nvars}")
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = c * e[i]
        return Polynomial(out, self.nvars)

    def depends_on(self, i: int) -> bool:
        return any(e[i] for e in self._terms)

    def relabel(self, perm: Sequence[int], nvars: int) -> "Polynomial":
        """Move variable ``i`` to position ``perm[i]`` of a chart with ``nvars`` variables."""
        out = {}
        for e, c in self._terms.items():
            e2 = [0] * nvars
            for i, k in enumerate(e):
                if k:
                    e2[perm[i]] = k
            out[tuple(e2)] = c
        return Polynomial(out, nvars)

    def __call__(self, x):
        return poly_eval(self, x)

    def compile(self):
        """Return a numpy evaluator ``f(X)`` for points stacked along the last axis."""
        exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(-1, self.nvars)
        coefs = np.array([float(c) for c in self._terms.values()])
        if not len(coefs):
            return lambda X: np.zeros(np.shape(X)[:-1])

        def f(X):
            X = np.asarray(X, dtype=float)
            mon = np.prod(X[..., None, :] ** exps, axis=-1)
            return mon @ coefs

        return f

    def __repr__(self):
        return f"Polynomial({self.to_string()!r}, nvars={self.nvars})"

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if names is None:
            names = [f"x{i + 1}" for i in range(self.nvars)]
        if not self._terms:
            return "0"
        parts = []
        for e in sorted(self._terms, key=lambda e: (-sum(e), [-k for k in e])):
            c = self._terms[e]
            mono = "*".join(
                names[i] if k == 1 else f"{names[i]}^{k}" for i, k in enumerate(e) if k
            )
            mag = abs(c)
            cs = str(mag) if mag.denominator == 1 else f"({mag})"
            body = mono if (mono and mag == 1) else (f"{cs}*{mono}" if mono else cs)
            parts.append(("- " if c < 0 else "+ ") + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]


def compile_polys(polys: Sequence[Polynomial], nvars: int | None = None):
    """Compile several polynomials into one numpy evaluator.

    The returned ``f(X)`` maps points of shape ``(..., nvars)`` to values of
    shape ``(..., len(polys))``, sharing one monomial table.
    """
    polys = list(polys)
    nv = polys[0].nvars if polys else (nvars or 0)
    monos: dict[tuple[int, ...], int] = {}
    for p in polys:
        for e in p._terms:
            monos.setdefault(e, len(monos))
    C = np.zeros((len(polys), max(len(monos), 1)))
    for i, p in enumerate(polys):
        for e, c in p._terms.items():
            C[i, monos[e]] = float(c)
    E = np.array(list(monos), dtype=np.int64).reshape(-1, nv)
    if not monos:
        return lambda X: np.zeros(np.shape(X)[:-1] + (len(polys),))
    maxdeg = int(E.max()) if E.size else 0

    def f(X):
        X = np.asarray(X, dtype=float)
        if maxdeg <= 1:
            mon = np.prod(np.where(E == 1, X[..., None, :], 1.0), axis=-1)
        else:
            mon = np.prod(X[..., None, :] ** E, axis=-1)
        return mon @ C.T

    return f


def poly_eval(p: Polynomial, x):
    """Evaluate ``p`` at ``x``.  Exact when every coordinate is rational."""
    x = list(x)
    if len(x) != p.nvars:
        raise DimensionError(f"point of length {len(x)} for polynomial on {p.nvars} variables")
    exact = all(isinstance(v, (int, Fraction)) for v in x)
    if exact:
        x = [Fraction(v) for v in x]
        total = Fraction(0)
    else:
        x = [float(v) for v in x]
        total = 0.0
    for e, c in p._terms.items():
        term = c if exact else float(c)
        for v, k in zip(x, e):
            if k:
                term = term * v**k
        total += term
    return total


# ---------------------------------------------------------------------------
# vector fields


class PolyVectorField:
    """Vector field whose components are polynomials on a common chart.

    A field may carry *parameters*: extra trailing variables that appear in the
    coefficients but have no component of their own (``nstate < nvars``).
    This is how coordinates dropped by a projection become control parameters.
    """

    __slots__ = ("components", "nvars", "nstate")

    def __init__(self, components: Sequence[Polynomial], nvars: int | None = None):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        nv = comps[0].nvars if nvars is None else nvars
        for c in comps:
            if c.nvars != nv:
                raise DimensionError("field components live on different charts")
        if len(comps) > nv:
            raise DimensionError(f"{len(comps)} components on a chart of {nv} variables")
        self.components = comps
        self.nvars = nv
        self.nstate = len(comps)

    @classmethod
    def from_strings(cls, exprs: Sequence[str], chart: Chart) -> "PolyVectorField":
        return cls([parse_polynomial(e, chart) for e in exprs], chart.dim)

    @classmethod
    def coordinate(cls, i: int, n: int) -> "PolyVectorField":
        """The coordinate field d/dx_i."""
        return cls(
            [Polynomial.constant(1 if j == i else 0, n) for j in range(n)], n
        )

    @property
    def nparams(self) -> int:
        return self.nvars - self.nstate

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def __eq__(self, other):
        return (
            isinstance(other, PolyVectorField)
            and self.nvars == other.nvars
            and self.components == other.components
        )

    def __hash__(self):
        return hash(self.components)

    def _check(self, other: "PolyVectorField"):
        if self.nvars != other.nvars or self.nstate != other.nstate:
            raise DimensionError(
                f"fields on charts of dimension {self.nstate}/{self.nvars} and "
                f"{other.nstate}/{other.nvars}"
            )

    def __add__(self, other: "PolyVectorField"):
        self._check(other)
        return PolyVectorField([a + b for a, b in zip(self.components, other.components)], self.nvars)

    def __sub__(self, other: "PolyVectorField"):
        self._check(other)
        return PolyVectorField([a - b for a, b in zip(self.components, other.components)], self.nvars)

    def __neg__(self):
        return PolyVectorField([-a for a in self.components], self.nvars)

    def scale(self, f) -> "PolyVectorField":
        """Multiply by a scalar or a polynomial function."""
        return PolyVectorField([f * a for a in self.components], self.nvars)

    __rmul__ = scale

    def apply(self, f: Polynomial) -> Polynomial:
        """Directional derivative X(f) = sum_j X_j df/dx_j."""
        if f.nvars != self.nvars:
            raise DimensionError("function and field live on different charts")
        out = Polynomial.zero(self.nvars)
        for j, c in enumerate(self.components):
            if not c.is_zero() and f.depends_on(j):
                out = out + c * f.diff(j)
        return out

    def bracket(self, other: "PolyVectorField") -> "PolyVectorField":
        return lie_bracket(self, other)

    def at(self, x) -> list:
        """Components at ``x`` (exact for rational ``x``)."""
        return [poly_eval(c, x) for c in self.components]

    def __call__(self, x):
        return np.array([float(v) for v in self.at(x)])

    def compile(self):
        """Vectorised numpy evaluator; returns shape ``(..., nstate)``."""
        fs = [c.compile() for c in self.components]
        return lambda X: np.stack([f(X) for f in fs], axis=-1)

    def numeric(self):
        """Float evaluators ``(f, df)``: values (nstate,) and Jacobian (nstate, nvars)."""
        f = compile_polys(self.components)
        n, nv = self.nstate, self.nvars
        J = compile_polys([c.diff(j) for c in self.components for j in range(nv)])
        return f, (lambda x: J(x).reshape(n, nv))

    def jacobian(self) -> list[list[Polynomial]]:
        """Matrix of partials d(component i)/d(variable j), all variables included."""
        return [[c.diff(j) for j in range(self.nvars)] for c in self.components]

    def to_strings(self, names: Sequence[str] | None = None) -> list[str]:
        return [c.to_string(names) for c in self.components]

    def __repr__(self):
        return f"PolyVectorField({self.to_strings()})"


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """[X, Y] = X(Y) - Y(X), componentwise and exact."""
    if X.nvars != Y.nvars or X.nstate != Y.nstate:
        raise DimensionError(f"cannot bracket fields on {X.nvars} and {Y.nvars} variables")
    if X.nparams:
        raise DimensionError("brackets are only defined for fields without parameters")
    return PolyVectorField(
        [X.apply(b) - Y.apply(a) for a, b in zip(X.components, Y.components)], X.nvars
    )


@dataclass(frozen=True)
class Covector:
    """A covector ``sum p_j dx_j`` attached to a base point."""

    base: tuple
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(self.base))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.base) != len(self.components):
            raise DimensionError(
                f"covector with {len(self.components)} components at a point of dimension {len(self.base)}"
            )

    @property
    def dim(self) -> int:
        return len(self.base)

    def as_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.components])


def pairing(p: Covector, X: PolyVectorField):
    """<p, X(p.base)>."""
    if p.dim != X.nstate or X.nparams:
        raise DimensionError(f"covector of dimension {p.dim} against field on {X.nvars} variables")
    vals = X.at(p.base)
    return sum((a * b for a, b in zip(p.components, vals)), start=0 * vals[0])


def pushforward_projection(X: PolyVectorField, keep: Iterable[int]) -> PolyVectorField:
    """Push ``X`` through the coordinate projection onto the ``keep`` coordinates.

    The result lives on the quotient chart (kept coordinates first, in order);
    the dropped coordinates are moved behind them and become parameters.
    Parameters already present in ``X`` stay at the end.
    """
    keep = sorted(set(keep))
    n = X.nstate
    if not keep or keep[0] < 0 or keep[-1] >= n:
        raise DimensionError(f"keep set {keep} not inside 0..{n - 1}")
    dropped = [i for i in range(n) if i not in keep]
    order = keep + dropped + list(range(n, X.nvars))
    perm = [0] * X.nvars
    for new, old in enumerate(order):
        perm[old] = new
    comps = [X.components[i].relabel(perm, X.nvars) for i in keep]
    return PolyVectorField(comps, X.nvars)


# ---------------------------------------------------------------------------
# expression parser
#
# grammar:
#   expr   := term (('+' | '-') term)*
#   term   := unary ('*' unary)*
#   unary  := ('+' | '-') unary | power
#   power  := atom ('^' INT)?
#   atom   := NUMBER | NAME | '(' expr ')'
# A '/' is accepted only between two integer literals, e.g. (1/2).


class _Parser:
    def __init__(self, text: str, chart: Chart):
        self.text = text
        self.chart = chart
        self.pos = 0
        self.n = chart.dim

    def error(self, msg, pos=None):
        raise ExpressionError(msg, self.text, self.pos if pos is None else pos)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Polynomial:
        if not self.text.strip():
            self.error("empty expression")
        p = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        p = self.unary()
        while self.peek() == "*":
            self.pos += 1
            p = p * self.unary()
        return p

    def unary(self) -> Polynomial:
        c = self.peek()
        if c == "-":
            self.pos += 1
            return -self.unary()
        if c == "+":
            self.pos += 1
            return self.unary()
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            self.skip()
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            if start == self.pos:
                self.error("expected a nonnegative integer exponent")
            base = base ** int(self.text[start:self.pos])
        return base

    def integer(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        return int(self.text[start:self.pos])

    def atom(self) -> Polynomial:
        c = self.peek()
        start = self.pos
        if c.isdigit():
            num = Fraction(self.integer())
            if self.peek() == "/":
                self.pos += 1
                self.skip()
                if not self.peek().isdigit():
                    self.error("expected an integer denominator")
                den = self.integer()
                if den == 0:
                    self.error("division by zero", start)
                num = num / den
            return Polynomial.constant(num, self.n)
        if c.isalpha() or c == "_":
            while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
                self.pos += 1
            name = self.text[start:self.pos]
            if name not in self.chart.names:
                self.error(f"unknown variable {name!r}", start)
            return Polynomial.variable(self.chart.index(name), self.n)
        if c == "(":
            self.pos += 1
            p = self.expr()
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
            return p
        if not c:
            self.error("unexpected end of expression")
        self.error(f"unexpected {c!r}")


def parse_polynomial(text: str, chart: Chart) -> Polynomial:
    """Parse strings like ``"x1*x2 + (1/2)*x1^2"`` against ``chart``."""
    return _Parser(text, chart).parse()
