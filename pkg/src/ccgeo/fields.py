"""Horizontal families, iterated commutators and structure constants."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from . import multilinear as ml
from .errors import NotInvolutive
from .polynomial import ParseError, PolyField, pack_fields

DEFAULT_RANK_TOL = 1e-8
NESTED_FD_STEP = 1e-4


def fd_step(x):
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def fd_jacobian(f, x, step=None):
    """Central-difference Jacobian, column ``k`` = d f / d x_k."""
    x = np.asarray(x, dtype=float)
    hs = fd_step(x) if step is None else np.full(x.shape, float(step))
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = hs[k]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * hs[k]))
    return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Coefficient map ``x -> f(x)`` of ``f . grad`` plus bracket-word metadata.

    ``jacobian_fn`` is used when supplied; otherwise the Jacobian comes from
    central differences (``fd_step``).  ``poly`` carries an exact polynomial
    form when one is known, which the flow kernels require.
    """

    dim: int
    coeffs: Callable
    jacobian_fn: Callable | None = None
    word: tuple = (1,)
    poly: PolyField | None = None
    fd_step: float | None = None

    def __post_init__(self):
        if len(self.word) < 1:
            raise ValueError("bracket word must be non-empty")

    @classmethod
    def from_poly(cls, poly: PolyField, word=(1,)):
        return cls(poly.n, poly, poly.jacobian, tuple(word), poly)

    @property
    def length(self):
        return len(self.word)

    def __call__(self, x):
        return np.asarray(self.coeffs(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(x), dtype=float)
        return fd_jacobian(self.coeffs, x, self.fd_step)

    @property
    def analytic(self):
        return self.jacobian_fn is not None


@dataclass(frozen=True, eq=False)
class Family:
    horizontal: tuple
    step: int
    domain_box: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if not self.horizontal:
            raise ValueError("family needs at least one field")
        dims = {f.dim for f in self.horizontal}
        if len(dims) != 1:
            raise ValueError(f"horizontal fields disagree on dimension: {sorted(dims)}")
        if any(f.length != 1 for f in self.horizontal):
            raise ValueError("horizontal fields must have length 1")
        box = np.asarray(self.domain_box, dtype=float)
        if box.shape != (self.dim, 2) or np.any(box[:, 0] >= box[:, 1]):
            raise ValueError(f"domain_box must be {self.dim} [lo, hi] pairs with lo < hi")
        object.__setattr__(self, "domain_box", box)

    @property
    def dim(self):
        return self.horizontal[0].dim

    @property
    def m(self):
        return len(self.horizontal)

    @property
    def lo(self):
        return self.domain_box[:, 0].copy()

    @property
    def hi(self):
        return self.domain_box[:, 1].copy()

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.domain_box[:, 0]) and np.all(x <= self.domain_box[:, 1]))

    @cached_property
    def packed(self):
        """Kernel term arrays of the horizontal fields (polynomial families only)."""
        if any(f.poly is None for f in self.horizontal):
            return None
        return pack_fields([f.poly for f in self.horizontal])


@dataclass(frozen=True, eq=False)
class CommutatorBasis:
    family: Family
    members: tuple
    analytic_constants: Callable | None = None

    def __post_init__(self):
        m = self.family.m
        if len(self.members) < m or any(a is not b for a, b in zip(self.members, self.family.horizontal)):
            raise ValueError("the first m members must be the horizontal fields")
        if any(y.length > self.family.step for y in self.members):
            raise ValueError("member longer than the step")

    @property
    def q(self):
        return len(self.members)

    @property
    def dim(self):
        return self.family.dim

    @property
    def step(self):
        return self.family.step

    @cached_property
    def lengths(self):
        return np.array([y.length for y in self.members], dtype=np.int64)

    @cached_property
    def words(self):
        return [y.word for y in self.members]

    @cached_property
    def index_of(self):
        return {w: i for i, w in enumerate(self.words)}

    def frame(self, x):
        """``n x q`` matrix with columns ``Y_j(x)``."""
        return np.stack([y(x) for y in self.members], axis=1)

    @cached_property
    def packed(self):
        if any(y.poly is None for y in self.members):
            return None
        return pack_fields([y.poly for y in self.members])

    @cached_property
    def algebraic(self):
        """``{(j, k): {i: a_jk^i}}`` for ``l_j + l_k <= s`` via the Jacobi identity."""
        out = {}
        s = self.step
        for j, k in itertools.product(range(self.q), repeat=2):
            if self.lengths[j] + self.lengths[k] > s:
                continue
            coeffs = expand_bracket(self.words[j], self.words[k])
            acc = {}
            for w, c in coeffs.items():
                if len(w) >= 2 and w[-1] == w[-2]:
                    continue  # identically zero word
                i = self.index_of[w]
                acc[i] = acc.get(i, 0) + c
            out[(j, k)] = {i: c for i, c in acc.items() if c != 0}
        return out


# -- brackets -----------------------------------------------------------------


def bracket(V: VectorField, W: VectorField, x) -> np.ndarray:
    """Coefficients of ``[V, W] = DW.V - DV.W`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if not (V.dim == W.dim == x.size):
        raise ValueError(f"dimension mismatch: V.dim={V.dim}, W.dim={W.dim}, len(x)={x.size}")
    return W.jacobian(x) @ V(x) - V.jacobian(x) @ W(x)


def expand_bracket(u: tuple, v: tuple) -> dict:
    """Write ``[X_u, X_v]`` as a combination of right-nested words
    ``X_(w1, w2, ...) = [X_w1, [X_w2, ...]]``."""
    if len(u) == 1:
        return {tuple(u) + tuple(v): 1}
    u1, rest = u[:1], u[1:]
    out = {}
    # [[A, B], C] = [A, [B, C]] - [B, [A, C]]
    for w, c in expand_bracket(rest, v).items():
        key = u1 + w
        out[key] = out.get(key, 0) + c
    for w, c in expand_bracket(rest, u1 + tuple(v)).items():
        out[w] = out.get(w, 0) - c
    return {w: c for w, c in out.items() if c != 0}


def enumerate_words(m: int, s: int):
    """Right-nested words of length <= s, length-then-lex; words ending in a
    repeated letter are skipped because ``[X_j, X_j] = 0`` identically."""
    for L in range(1, s + 1):
        for w in itertools.product(range(1, m + 1), repeat=L):
            if L >= 2 and w[-1] == w[-2]:
                continue
            yield w


def _numeric_bracket_field(V: VectorField, W: VectorField, word) -> VectorField:
    def coeffs(x):
        return bracket(V, W, x)

    return VectorField(V.dim, coeffs, None, tuple(word), None, NESTED_FD_STEP)


def generate_commutators(fam: Family, analytic: bool = True) -> CommutatorBasis:
    """All ``X_w`` with ``1 <= |w| <= s``, length-then-lex order.

    With ``analytic`` and polynomial horizontal fields the brackets are exact
    polynomials; otherwise each member is evaluated by recursive ``bracket``
    with finite-difference Jacobians of the inner brackets.
    """
    exact = analytic and all(f.poly is not None for f in fam.horizontal)
    built = {}
    members = []
    for w in enumerate_words(fam.m, fam.step):
        if len(w) == 1:
            Y = fam.horizontal[w[0] - 1]
        else:
            V, W = built[w[:1]], built[w[1:]]
            if exact:
                Y = VectorField.from_poly(V.poly.bracket(W.poly), w)
            else:
                Y = _numeric_bracket_field(V, W, w)
        built[w] = Y
        members.append(Y)
    return CommutatorBasis(fam, tuple(members))


# -- structure constants --------------------------------------------------------


@dataclass
class StructureConstants:
    c: np.ndarray  # c[i, j, k] = c_ij^k
    residual: np.ndarray  # residual[i, j]
    support: tuple  # independent sub-tuple used for the expansion
    x: np.ndarray = field(repr=False, default=None)


def independent_subtuple(G: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> tuple:
    """Greedy maximal linearly independent set of columns of ``G``."""
    smax = np.linalg.norm(G, 2) if G.size else 0.0
    if smax == 0.0:
        return ()
    chosen = []
    for k in range(G.shape[1]):
        trial = chosen + [k]
        if len(trial) > G.shape[0]:
            break
        sv = np.linalg.svd(G[:, trial], compute_uv=False)
        if sv[-1] > rank_tol * smax:
            chosen = trial
    return tuple(chosen)


def structure_constants(basis: CommutatorBasis, x, rank_tol: float = DEFAULT_RANK_TOL) -> StructureConstants:
    """Expand ``[Y_i, Y_j](x)`` over a maximal independent sub-tuple by Cramer's rule.

    Raises :class:`NotInvolutive` when the bracket leaves the span, i.e. its
    residual exceeds ``rank_tol * max(|[Y_i, Y_j](x)|, |G(x)|)``.
    """
    x = np.asarray(x, dtype=float)
    q = basis.q
    G = basis.frame(x)
    support = independent_subtuple(G, rank_tol)
    scale = np.linalg.norm(G, 2) if G.size else 0.0
    c = np.zeros((q, q, q))
    res = np.zeros((q, q))
    Gs = G[:, list(support)]
    for i in range(q):
        for j in range(i + 1, q):
            B = bracket(basis.members[i], basis.members[j], x)
            nb = np.linalg.norm(B)
            if support:
                xi = ml.cramer_solve(Gs, B)
                r = np.linalg.norm(Gs @ xi - B)
            else:
                xi, r = np.zeros(0), nb
            if r > rank_tol * max(nb, scale):
                raise NotInvolutive(i, j, x, r)
            c[i, j, list(support)] = xi
            c[j, i, list(support)] = -xi
            res[i, j] = res[j, i] = r
    return StructureConstants(c, res, support, x)


def scaled_structure_constants(basis: CommutatorBasis, c: np.ndarray, r: float) -> np.ndarray:
    """Constants of the rescaled family ``r^{l_j} Y_j``: ``hat c[j, k, i]``."""
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    if isinstance(c, StructureConstants):
        c = c.c
    ell = basis.lengths
    q = basis.q
    out = np.zeros((q, q, q))
    alg = basis.algebraic
    for j in range(q):
        for k in range(q):
            if ell[j] + ell[k] > basis.step:
                out[j, k, :] = r ** (ell[j] + ell[k] - ell) * c[j, k, :]
            else:
                for i, a in alg[(j, k)].items():
                    out[j, k, i] = a
    return out


# -- admissible constant ------------------------------------------------------------


def multi_indices(n: int, max_order: int):
    for total in range(max_order + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            yield tuple(alpha)


def fd_partial(f, x, alpha):
    """Nested central difference ``D^alpha f(x)``; the first order uses
    ``fd_step``, every extra order a fixed ``1e-4``."""
    alpha = list(alpha)
    order = sum(alpha)
    if order == 0:
        return np.asarray(f(x), dtype=float)
    i = next(k for k, a in enumerate(alpha) if a)
    alpha[i] -= 1
    h = NESTED_FD_STEP if order > 1 else float(fd_step(x[i]))
    e = np.zeros_like(x)
    e[i] = h
    return (fd_partial(f, x + e, alpha) - fd_partial(f, x - e, alpha)) / (2 * h)


def admissible_constant_L1(fam: Family, basis: CommutatorBasis, grid, rank_tol: float = DEFAULT_RANK_TOL, delta: float = 1e-4) -> float:
    """Sum of coefficient sup-norms up to order ``s`` plus structure-constant
    sups and their derivatives along the commutator flows, over ``grid``."""
    from .flows import flow

    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[0] == 0:
        raise ValueError("grid must be non-empty")
    n = fam.dim
    total = 0.0
    for f in fam.horizontal:
        for alpha in multi_indices(n, fam.step):
            if f.poly is not None:
                d = PolyField(tuple(p.partial(alpha) for p in f.poly.comps))
                vals = [np.linalg.norm(d(x)) for x in grid]
            else:
                vals = [np.linalg.norm(fd_partial(f.coeffs, x, alpha)) for x in grid]
            total += max(vals)
    q = basis.q
    sup_c = np.zeros((q, q, q))
    sup_dc = np.zeros((q, q, q, q))
    for x in grid:
        sc = structure_constants(basis, x, rank_tol)
        sup_c = np.maximum(sup_c, np.abs(sc.c))
        for k, Y in enumerate(basis.members):
            if not np.any(Y(x)):
                continue
            xp = flow(Y, x, delta, fam=fam)
            xm = flow(Y, x, -delta, fam=fam)
            dc = (structure_constants(basis, xp, rank_tol).c - structure_constants(basis, xm, rank_tol).c) / (2 * delta)
            sup_dc[:, :, k, :] = np.maximum(sup_dc[:, :, k, :], np.abs(dc))
    # sum over i, j, k, l of sup|c_ij^l| + sup|Y_k c_ij^l|
    total += q * sup_c.sum() + sup_dc.sum()
    return float(total)


# -- built-in and custom families --------------------------------------------------


def _poly_family(name, exprs, n, step, box=2.0):
    fields = tuple(VectorField.from_poly(PolyField.from_strings(e, n), (j + 1,)) for j, e in enumerate(exprs))
    return Family(fields, step, np.array([[-box, box]] * n), name)


BUILTIN_SPECS = {
    "euclid2in3": (3, 1, [["1", "0", "0"], ["0", "1", "0"]], 10.0),
    "heisenberg": (3, 2, [["1", "0", "-x2/2"], ["0", "1", "x1/2"]]),
    "grushin": (2, 2, [["1", "0"], ["0", "x1"]]),
    "martinet": (3, 3, [["1", "0", "0"], ["0", "1", "x1^2"]]),
    "shear": (3, 2, [["1", "0", "0"], ["0", "x3", "0"]]),
}

# reference points used by the experiment runner when --point is omitted
DEFAULT_POINTS = {
    "euclid2in3": (0.0, 0.0, 0.0),
    "heisenberg": (0.0, 0.0, 0.0),
    "grushin": (0.0, 0.0),
    "martinet": (0.0, 0.0, 0.0),
    "shear": (0.0, 0.0, 1.0),
}


def builtin_family(name: str) -> Family:
    try:
        n, s, exprs, *box = BUILTIN_SPECS[name]
    except KeyError:
        raise KeyError(f"unknown family {name!r}; built-ins: {sorted(BUILTIN_SPECS)}") from None
    # "/2" is not polynomial syntax; rewrite as a multiplication
    exprs = [[e.replace("/2", "*0.5") for e in f] for f in exprs]
    return _poly_family(name, exprs, n, s, *box)


_FAMILY_KEYS = {"dim", "step", "fields", "domain_box", "name"}


def family_from_dict(doc: dict) -> Family:
    unknown = set(doc) - _FAMILY_KEYS
    if unknown:
        raise ValueError(f"unknown family keys: {sorted(unknown)}")
    try:
        n = int(doc["dim"])
        s = int(doc["step"])
        specs = doc["fields"]
        box = np.asarray(doc["domain_box"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"family document is missing {exc.args[0]!r}") from None
    fields = []
    for j, spec in enumerate(specs):
        coeffs = spec["coeffs"]
        try:
            poly = PolyField.from_strings(coeffs, n)
        except ParseError as exc:
            raise ValueError(f"field {j + 1}: {exc}") from None
        fields.append(VectorField.from_poly(poly, (j + 1,)))
    return Family(tuple(fields), s, box, doc.get("name", "custom"))


def load_family(spec) -> Family:
    """Built-in name, path to a JSON document, or an already-parsed dict."""
    if isinstance(spec, Family):
        return spec
    if isinstance(spec, dict):
        return family_from_dict(spec)
    if spec in BUILTIN_SPECS:
        return builtin_family(spec)
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        return family_from_dict(json.loads(path.read_text()))
    raise KeyError(f"unknown family {spec!r}; built-ins: {sorted(BUILTIN_SPECS)}")
