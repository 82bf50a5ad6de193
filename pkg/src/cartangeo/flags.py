"""Derived flags, growth vectors and annihilators of distributions.

A distribution is presented by a frame of fields that support ``bracket`` and
pointwise evaluation.  Ranks are exact over the rationals when the frame is
polynomial and the point rational; otherwise singular values decide, with a
threshold relative to the largest one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .vecfield import Covector, DimensionError

__all__ = [
    "DistributionFlag",
    "FlagError",
    "annihilator_basis",
    "derived_flag",
    "exact_nullspace",
    "exact_rank",
    "float_nullspace",
    "float_rank",
    "is_bracket_generating",
    "is_cartan",
]

FLOAT_RANK_TOL = 1e-8


class FlagError(ValueError):
    pass


def _rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form over Q; returns (rows, pivot columns)."""
    m = [list(r) for r in rows]
    if not m:
        return m, []
    ncols = len(m[0])
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [v * inv for v in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m[:r], pivots


def exact_rank(vectors: Sequence[Sequence]) -> int:
    rows = [[Fraction(v) for v in vec] for vec in vectors]
    return len(_rref(rows)[1])


def exact_nullspace(vectors: Sequence[Sequence], dim: int) -> list[list[Fraction]]:
    """Basis of {p : <p, v> = 0 for all v}, one covector per free column."""
    rows = [[Fraction(v) for v in vec] for vec in vectors]
    if not rows:
        return [[Fraction(int(i == j)) for j in range(dim)] for i in range(dim)]
    red, pivots = _rref(rows)
    free = [c for c in range(dim) if c not in pivots]
    basis = []
    for f in free:
        p = [Fraction(0)] * dim
        p[f] = Fraction(1)
        for row, pc in zip(red, pivots):
            p[pc] = -row[f]
        basis.append(p)
    return basis


def float_rank(vectors, tol: float = FLOAT_RANK_TOL) -> int:
    A = np.atleast_2d(np.asarray(vectors, dtype=float))
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def float_nullspace(vectors, dim: int, tol: float = FLOAT_RANK_TOL) -> np.ndarray:
    """Orthonormal rows spanning the annihilator of the given vectors."""
    A = np.asarray(vectors, dtype=float).reshape(-1, dim)
    if A.shape[0] == 0:
        return np.eye(dim)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return vt[rank:]


@dataclass
class FlagStage:
    depth: int
    words: list[tuple[int, ...]]
    vectors: list
    rank: int


@dataclass
class DistributionFlag:
    """Derived flag D = D(1) c D(2) c ... of a frame at a point.

    ``stages[k-1]`` holds the spanning vectors of D(k) (all bracket words of
    length <= k, in length-lexicographic order).
    """

    point: tuple
    dim: int
    exact: bool
    stages: list[FlagStage] = field(default_factory=list)
    complete: bool = True

    @property
    def growth(self) -> tuple[int, ...]:
        return tuple(s.rank for s in self.stages)

    def spanning_vectors(self, k: int):
        if not 1 <= k <= len(self.stages):
            raise FlagError(f"stage {k} not computed (depth {len(self.stages)})")
        return self.stages[k - 1].vectors


def _is_exact_frame(frame, x) -> bool:
    from .vecfield import PolyVectorField

    return all(isinstance(f, PolyVectorField) for f in frame) and all(
        isinstance(v, (int, Fraction)) for v in x
    )


def derived_flag(frame: Sequence, x, maxdepth: int = 6, *, exact: bool | None = None,
                 tol: float = FLOAT_RANK_TOL) -> DistributionFlag:
    """Compute the derived flag of ``frame`` at ``x``.

    D(k+1) = D(k) + [D, D(k)].  Stops when the rank reaches the ambient
    dimension or stops growing; if ``maxdepth`` runs out first the flag is
    marked incomplete.
    """
    frame = list(frame)
    if not frame:
        raise FlagError("empty frame")
    x = tuple(x)
    dim = len(x)
    if exact is None:
        exact = _is_exact_frame(frame, x)
    if exact and not _is_exact_frame(frame, x):
        raise FlagError("exact mode needs a polynomial frame and a rational point")

    def value(f):
        if exact:
            return [Fraction(v) for v in f.at(x)]
        return np.asarray(f(x), dtype=float)

    for f in frame:
        if len(value(f)) != dim:
            raise DimensionError(f"frame field of dimension {len(value(f))} at a point of dimension {dim}")
    rank_fn = exact_rank if exact else (lambda v: float_rank(v, tol))

    words = [(i,) for i in range(len(frame))]
    fields = list(frame)
    vectors = [value(f) for f in fields]
    flag = DistributionFlag(point=x, dim=dim, exact=exact)
    flag.stages.append(FlagStage(1, list(words), list(vectors), rank_fn(vectors)))
    last_words, last_fields = list(words), list(fields)
    depth = 1
    while flag.stages[-1].rank < dim:
        if depth >= maxdepth:
            flag.complete = False
            break
        depth += 1
        new_words, new_fields = [], []
        for i, Xi in enumerate(frame):
            for w, W in zip(last_words, last_fields):
                if len(w) == 1 and w[0] == i:
                    continue  # [X, X] = 0
                B = Xi.bracket(W)
                new_words.append((i,) + w)
                new_fields.append(B)
        words = words + new_words
        vectors = vectors + [value(B) for B in new_fields]
        rank = rank_fn(vectors)
        flag.stages.append(FlagStage(depth, list(words), list(vectors), rank))
        last_words, last_fields = new_words, new_fields
        if rank == flag.stages[-2].rank:
            break
    return flag


def is_cartan(frame: Sequence, x, **kw) -> bool:
    """True iff the frame spans a rank-2 distribution with growth (2, 3, 5) at ``x``."""
    if len(tuple(x)) != 5:
        raise DimensionError("Cartan distributions live on 5-dimensional spaces")
    flag = derived_flag(frame, x, maxdepth=3, **kw)
    return flag.growth == (2, 3, 5)


def is_bracket_generating(frame: Sequence, x, maxdepth: int = 6, **kw) -> bool:
    flag = derived_flag(frame, x, maxdepth=maxdepth, **kw)
    return flag.growth[-1] == len(tuple(x))


def annihilator_basis(flag: DistributionFlag, k: int, tol: float = FLOAT_RANK_TOL) -> list[Covector]:
    """Basis of the annihilator of D(k) at the flag's point.

    Exact rational covectors for exact flags, orthonormal float covectors
    otherwise.
    """
    vecs = flag.spanning_vectors(k)
    if flag.exact:
        basis = exact_nullspace(vecs, flag.dim)
    else:
        basis = [list(r) for r in float_nullspace(vecs, flag.dim, tol)]
    return [Covector(flag.point, tuple(b)) for b in basis]
