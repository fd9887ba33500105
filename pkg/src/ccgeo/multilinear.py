"""Wedge products of commutator tuples, Cramer coordinates and maximal tuples.

Tuples are exposed 1-based (as :class:`TupleIndex`) and handled 0-based
internally.  Everything is exhaustive over ``I(p, q)``; ``q`` stays small for
the model families.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegeneratePoint, DegenerateTuple, NotInSpan

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class TupleIndex:
    """Strictly increasing 1-based multi-index with its total degree."""

    indices: tuple
    degree: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx or any(a >= b for a, b in zip(idx, idx[1:])) or idx[0] < 1:
            raise ValueError(f"tuple indices must be strictly increasing and >= 1: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_basis(cls, basis, indices):
        idx = tuple(int(i) for i in indices)
        if idx and idx[-1] > basis.q:
            raise ValueError(f"tuple index {idx[-1]} exceeds q={basis.q}")
        return cls(idx, int(sum(basis.lengths[i - 1] for i in idx)))

    @property
    def p(self):
        return len(self.indices)

    @property
    def zero_based(self):
        return [i - 1 for i in self.indices]

    def lengths(self, basis):
        return basis.lengths[self.zero_based]

    def __str__(self):
        return "(" + ",".join(map(str, self.indices)) + ")"


@dataclass
class WedgeVector:
    p: int
    components: dict  # K (1-based row tuple) -> value

    @property
    def norm(self):
        return float(np.sqrt(sum(v * v for v in self.components.values())))


@lru_cache(maxsize=None)
def _row_combos(n, p):
    return np.array(list(itertools.combinations(range(n), p)), dtype=np.int64).reshape(-1, p)


def minors(M: np.ndarray) -> np.ndarray:
    """All ``p x p`` row minors of an ``n x p`` matrix, rows in lex order."""
    n, p = M.shape
    if p == 0:
        return np.ones(1)
    rows = _row_combos(n, p)
    return np.linalg.det(M[rows])


def wedge_norm(M: np.ndarray) -> float:
    """Volume ``|v_1 ^ ... ^ v_p|`` of the columns of ``M``."""
    return float(np.sqrt(np.sum(minors(M) ** 2)))


def cramer_solve(M: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``xi^k = <M_I, iota^k(W) M_I> / |M_I|^2`` (exact for ``W`` in the span)."""
    n, p = M.shape
    base = minors(M)
    denom = float(np.dot(base, base))
    if denom == 0.0:
        raise DegenerateTuple("tuple has zero wedge volume")
    xi = np.empty(p)
    for k in range(p):
        Mk = M.copy()
        Mk[:, k] = W
        xi[k] = np.dot(base, minors(Mk)) / denom
    return xi


def _tuple_matrix(basis, I, x):
    idx = I.zero_based if isinstance(I, TupleIndex) else list(I)
    return np.stack([basis.members[i](x) for i in idx], axis=1)


def wedge_components(basis, I: TupleIndex, x) -> WedgeVector:
    x = np.asarray(x, dtype=float)
    n = basis.dim
    if I.p > min(n, basis.q):
        raise ValueError(f"grade {I.p} exceeds min(n, q) = {min(n, basis.q)}")
    M = _tuple_matrix(basis, I, x)
    vals = minors(M)
    rows = _row_combos(n, I.p)
    return WedgeVector(I.p, {tuple(int(k) + 1 for k in K): float(v) for K, v in zip(rows, vals)})


@dataclass
class CramerResult:
    xi: np.ndarray
    residual: float


def cramer_coordinates(basis, I: TupleIndex, x, W, rank_tol: float = DEFAULT_RANK_TOL) -> CramerResult:
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    M = _tuple_matrix(basis, I, x)
    vol = wedge_norm(M)
    scale = np.prod(np.linalg.norm(M, axis=0))
    if vol <= rank_tol * max(scale, 1e-300) or vol == 0.0:
        raise DegenerateTuple(f"|Y_I(x)| = {vol:.3e} below rank tolerance for I={I}")
    xi = cramer_solve(M, W)
    res = float(np.linalg.norm(M @ xi - W))
    if res > max(rank_tol * max(np.linalg.norm(W), np.linalg.norm(M, 2)), 1e-12):
        raise NotInSpan(res)
    return CramerResult(xi, res)


def all_tuples(q: int, p: int):
    return itertools.combinations(range(q), p)


def tuple_volumes(basis, x, p: int):
    """``(tuples, |Y_I(x)|)`` over every ``I`` in ``I(p, q)`` (0-based tuples)."""
    x = np.asarray(x, dtype=float)
    G = basis.frame(x)
    tuples = list(all_tuples(basis.q, p))
    vols = np.array([wedge_norm(G[:, list(I)]) for I in tuples])
    return tuples, vols


def lambda_vector(basis, p: int, x, r: float) -> float:
    """``|Lambda_p(x, r)| = sqrt(sum_I r^(2 l(I)) |Y_I(x)|^2)``."""
    if not 1 <= p <= min(basis.dim, basis.q):
        raise ValueError(f"p must lie in 1..{min(basis.dim, basis.q)}")
    if r <= 0:
        raise ValueError("r must be positive")
    tuples, vols = tuple_volumes(basis, x, p)
    deg = np.array([basis.lengths[list(I)].sum() for I in tuples])
    return float(np.sqrt(np.sum((r**deg * vols) ** 2)))


def pointwise_rank(basis, x, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    G = basis.frame(np.asarray(x, dtype=float))
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def nu_infimum(basis, sample, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    if sample.shape[0] == 0:
        raise ValueError("sample must be non-empty")
    vals = []
    for x in sample:
        p = pointwise_rank(basis, x, rank_tol)
        vals.append(0.0 if p == 0 else lambda_vector(basis, p, x, 1.0))
    return float(min(vals))


@dataclass
class MaximalTuple:
    tuple: TupleIndex
    weighted_volume: float
    runner_up: TupleIndex | None
    runner_up_volume: float

    def to_dict(self):
        return {
            "tuple": list(self.tuple.indices),
            "degree": self.tuple.degree,
            "weighted_volume": self.weighted_volume,
            "runner_up": None if self.runner_up is None else list(self.runner_up.indices),
            "runner_up_degree": None if self.runner_up is None else self.runner_up.degree,
            "runner_up_volume": self.runner_up_volume,
        }


def rank_tuples(basis, x, r: float, rank_tol: float = DEFAULT_RANK_TOL):
    """All ``p_x``-tuples sorted by weighted volume (desc), then degree, then lex."""
    if r <= 0:
        raise ValueError("r must be positive")
    p = pointwise_rank(basis, x, rank_tol)
    if p == 0:
        raise DegeneratePoint(f"all commutators vanish at {list(map(float, np.asarray(x)))}")
    tuples, vols = tuple_volumes(basis, x, p)
    ranked = []
    for I, v in zip(tuples, vols):
        deg = int(basis.lengths[list(I)].sum())
        ranked.append((float(v * r**deg), deg, I))
    top = max(w for w, _, _ in ranked)
    # volumes agreeing to rounding count as ties
    key = lambda item: (-round(item[0] / top, 12) if top > 0 else 0.0, item[1], item[2])
    ranked.sort(key=key)
    return [(TupleIndex(tuple(i + 1 for i in I), d), w) for w, d, I in ranked]


def select_maximal_tuple_report(basis, x, r: float, eta: float = 0.5, rank_tol: float = DEFAULT_RANK_TOL) -> MaximalTuple:
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    ranked = rank_tuples(basis, x, r, rank_tol)
    best, wbest = ranked[0]
    if len(ranked) > 1:
        ru, wru = ranked[1]
    else:
        ru, wru = None, 0.0
    return MaximalTuple(best, wbest, ru, wru)


def select_maximal_tuple(basis, x, r: float, eta: float = 0.5, rank_tol: float = DEFAULT_RANK_TOL) -> TupleIndex:
    """Maximizer of ``|Y_I(x)| r^l(I)`` over ``I(p_x, q)``; ties go to the
    smaller degree, then lexicographic order."""
    return select_maximal_tuple_report(basis, x, r, eta, rank_tol).tuple


def is_eta_maximal(basis, I: TupleIndex, x, r: float, eta: float) -> bool:
    ranked = rank_tuples(basis, x, r)
    top = ranked[0][1]
    M = _tuple_matrix(basis, I, np.asarray(x, dtype=float))
    return wedge_norm(M) * r**I.degree > eta * top
