"""Flows, approximate exponentials and the maps ``E_{I,x,r}`` and ``Phi_{I,x,r}``.

Polynomial families go through the compiled Dormand-Prince kernel; any other
family falls back to :func:`scipy.integrate.solve_ivp` with a domain event.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from . import kernels as K
from .errors import EscapedDomain, IntegrationStalled
from .multilinear import TupleIndex
from .polynomial import pack_fields

JACOBIAN_STEP = 1e-5


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 1.0
    scheme: str = "dopri5"

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.max_step <= 0:
            raise ValueError("integrator tolerances and max_step must be positive")
        if self.scheme != "dopri5":
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    @property
    def args(self):
        return (self.rel_tol, self.abs_tol, self.max_step)


DEFAULT_CFG = IntegratorConfig()


@dataclass
class BoxPoint:
    h: np.ndarray
    tuple: TupleIndex
    box_norm: float


def _bounds(fam, n):
    if fam is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    return fam.lo, fam.hi


def _raise_status(status, t, x):
    if status == K.ESCAPED:
        raise EscapedDomain(float(t), np.asarray(x))
    if status == K.STALLED:
        raise IntegrationStalled(f"integrator stalled at t={float(t):.6g}")


def _generic_flow(rhs, x, T, lo, hi, cfg):
    """scipy fallback: flow of ``rhs`` for signed time ``T`` with a box event."""
    x = np.asarray(x, dtype=float)
    if T == 0:
        return x.copy()
    sg = np.sign(T)

    def f(_t, y):
        return sg * rhs(y)

    def leave(_t, y):
        return float(min(np.min(y - lo), np.min(hi - y)))

    leave.terminal = True
    sol = solve_ivp(f, (0.0, abs(T)), x, method="RK45", rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step, events=leave)
    if sol.status == 1:
        raise EscapedDomain(float(sol.t_events[0][0]), sol.y[:, -1])
    if sol.status < 0:
        raise IntegrationStalled(sol.message)
    return sol.y[:, -1]


def run_schedule(fields, packed, W, D, x, lo, hi, cfg=DEFAULT_CFG):
    """Apply segment ``s``: flow of ``sum_f W[s, f] fields[f]`` for time ``D[s]``."""
    x = np.ascontiguousarray(x, dtype=float)
    W = np.ascontiguousarray(W, dtype=float)
    D = np.ascontiguousarray(D, dtype=float)
    if packed is not None:
        y, status, _, t = K.integrate_segments(*packed, W, D, x, lo, hi, *cfg.args)
        _raise_status(status, t, y)
        return y
    y = x
    for w, d in zip(W, D):
        active = [(c, f) for c, f in zip(w, fields) if c != 0]
        y = _generic_flow(lambda z, a=active: sum(c * f(z) for c, f in a), y, d, lo, hi, cfg)
    return y


def flow(field, x, t, cfg: IntegratorConfig = DEFAULT_CFG, fam=None):
    """Time-``t`` flow of one field; ``fam`` supplies the domain box."""
    x = np.asarray(x, dtype=float)
    lo, hi = _bounds(fam, x.size)
    packed = pack_fields([field.poly]) if field.poly is not None else None
    return run_schedule([field], packed, np.ones((1, 1)), np.array([float(t)]), x, lo, hi, cfg)


def flow_combination(coeffs, basis, x, T, cfg: IntegratorConfig = DEFAULT_CFG):
    """Time-``T`` flow of ``sum_j b_j Y_j`` over the commutator basis."""
    b = np.asarray(coeffs, dtype=float)
    if b.shape != (basis.q,):
        raise ValueError(f"expected {basis.q} coefficients, got shape {b.shape}")
    fam = basis.family
    return run_schedule(basis.members, basis.packed, b[None, :], np.array([float(T)]), x, fam.lo, fam.hi, cfg)


# -- approximate exponentials ---------------------------------------------------------


@lru_cache(maxsize=None)
def exp_ap_template(word: tuple) -> tuple:
    """Horizontal flow schedule ``((field, sign), ...)`` of ``exp_ap(t^l X_w)``
    at unit time ``t``, in application order (0-based fields).

    ``C_(j) = [X_j]`` and ``C_(w1, w') = X_w1, C_w', -X_w1, C_w'^{-1}`` where the
    inverse reverses the schedule and flips every sign.
    """
    if len(word) == 1:
        return ((word[0] - 1, 1.0),)
    inner = exp_ap_template(tuple(word[1:]))
    inv = tuple((f, -s) for f, s in reversed(inner))
    head = word[0] - 1
    return ((head, 1.0),) + inner + ((head, -1.0),) + inv


def _template_tables(words):
    starts, lens, fields, signs = [], [], [], []
    for w in words:
        tpl = exp_ap_template(tuple(w))
        starts.append(len(fields))
        lens.append(len(tpl))
        fields.extend(f for f, _ in tpl)
        signs.extend(s for _, s in tpl)
    return (
        np.array(starts, dtype=np.int64),
        np.array(lens, dtype=np.int64),
        np.array(fields, dtype=np.int64),
        np.array(signs, dtype=np.float64),
    )


def approx_exponential(word, h, x, fam, cfg: IntegratorConfig = DEFAULT_CFG):
    """``exp_ap(h X_w) x`` built from horizontal flows with ``t = |h|^{1/l}``."""
    word = tuple(int(w) for w in word)
    if not word or min(word) < 1 or max(word) > fam.m:
        raise ValueError(f"word {word} uses fields outside 1..{fam.m}")
    tables = _template_tables([word])
    W, D = K.e_segments(np.array([float(h)]), 1.0, np.array([len(word)], dtype=np.int64), *tables, fam.m)
    return run_schedule(fam.horizontal, fam.packed, W, D, x, fam.lo, fam.hi, cfg)


def box_norm(h, ell) -> float:
    h = np.asarray(h, dtype=float)
    ell = np.asarray(ell, dtype=float)
    if h.size == 0:
        return 0.0
    return float(np.max(np.abs(h) ** (1.0 / ell)))


def box_point(h, I: TupleIndex, basis) -> BoxPoint:
    h = np.asarray(h, dtype=float)
    return BoxPoint(h, I, box_norm(h, I.lengths(basis)))


def box_grid(ell, eps: float, density: int) -> np.ndarray:
    """Tensor grid of ``density^p`` points filling the closure of ``Q_I(eps)``."""
    axes = [np.linspace(-1.0, 1.0, density) * eps ** float(l) for l in ell]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def jacobian_of_map(fn, h, step: float = JACOBIAN_STEP):
    """Central-difference ``n x p`` Jacobian of ``fn`` at ``h``."""
    h = np.asarray(h, dtype=float)
    cols = []
    for k in range(h.size):
        e = np.zeros_like(h)
        e[k] = step
        cols.append((np.asarray(fn(h + e)) - np.asarray(fn(h - e))) / (2 * step))
    return np.stack(cols, axis=1)


# -- E and Phi -------------------------------------------------------------------------


def _as_tuple(basis, I):
    return I if isinstance(I, TupleIndex) else TupleIndex.from_basis(basis, I)


@dataclass(frozen=True, eq=False)
class EMap:
    """``E_{I,x,r}(h) = exp_ap(h_1 r^l1 Y_i1) ... exp_ap(h_p r^lp Y_ip) x``."""

    basis: object
    tuple: TupleIndex
    x: np.ndarray
    r: float
    cfg: IntegratorConfig = DEFAULT_CFG

    def __post_init__(self):
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=float))
        object.__setattr__(self, "tuple", _as_tuple(self.basis, self.tuple))
        if self.r <= 0:
            raise ValueError("r must be positive")

    @property
    def fam(self):
        return self.basis.family

    @property
    def p(self):
        return self.tuple.p

    @cached_property
    def ell(self):
        return np.ascontiguousarray(self.tuple.lengths(self.basis), dtype=np.int64)

    @cached_property
    def tables(self):
        return _template_tables([self.basis.words[i] for i in self.tuple.zero_based])

    @property
    def compiled(self):
        return self.fam.packed is not None

    def _kargs(self):
        fam = self.fam
        return (self.x, float(self.r), self.ell, *self.tables, *fam.packed, fam.m, fam.lo, fam.hi, *self.cfg.args)

    def schedule(self, h):
        """``(W, D)`` horizontal segments realizing ``E(h)``, first applied first."""
        return K.e_segments(np.asarray(h, dtype=float), float(self.r), self.ell, *self.tables, self.fam.m)

    def path_length(self, h) -> float:
        """Length of the horizontal path behind ``E(h)``: an upper bound for
        ``d_cc(x, E(h))``."""
        _, D = self.schedule(h)
        return float(np.sum(np.abs(D)))

    def __call__(self, h):
        h = np.ascontiguousarray(h, dtype=float)
        if h.shape != (self.p,):
            raise ValueError(f"h must have length {self.p}")
        if self.compiled:
            y, status = K.eval_E(h, *self._kargs())
            _raise_status(status, 0.0, y)
            return y
        W, D = self.schedule(h)
        return run_schedule(self.fam.horizontal, None, W, D, self.x, self.fam.lo, self.fam.hi, self.cfg)

    def batch(self, H):
        """Images of many ``h``; rows that failed carry ``status != 0``."""
        H = np.ascontiguousarray(np.atleast_2d(H), dtype=float)
        if self.compiled:
            return K.eval_E_batch(H, *self._kargs())
        out = np.empty((H.shape[0], self.x.size))
        st = np.zeros(H.shape[0], dtype=np.int64)
        for b, h in enumerate(H):
            try:
                out[b] = self(h)
            except EscapedDomain:
                st[b] = K.ESCAPED
        return out, st

    def jacobian(self, h, step: float = JACOBIAN_STEP):
        h = np.ascontiguousarray(h, dtype=float)
        if self.compiled:
            J, status = K.jac_E(h, float(step), *self._kargs())
            _raise_status(status, 0.0, self.x)
            return J
        return jacobian_of_map(self, h, step)

    def jacobian_batch(self, H, step: float = JACOBIAN_STEP):
        H = np.ascontiguousarray(np.atleast_2d(H), dtype=float)
        if self.compiled:
            return K.jac_E_batch(H, float(step), *self._kargs())
        out = np.empty((H.shape[0], self.x.size, self.p))
        st = np.zeros(H.shape[0], dtype=np.int64)
        for b, h in enumerate(H):
            try:
                out[b] = self.jacobian(h, step)
            except EscapedDomain:
                st[b] = K.ESCAPED
        return out, st

    def box_norm(self, h):
        return box_norm(h, self.ell)


@dataclass(frozen=True, eq=False)
class PhiMap:
    """``Phi_{I,x,r}(u) = exp(sum_j u_j r^{l_ij} Y_ij) x``."""

    basis: object
    tuple: TupleIndex
    x: np.ndarray
    r: float
    cfg: IntegratorConfig = DEFAULT_CFG

    def __post_init__(self):
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=float))
        object.__setattr__(self, "tuple", _as_tuple(self.basis, self.tuple))
        if self.r <= 0:
            raise ValueError("r must be positive")

    @property
    def p(self):
        return self.tuple.p

    @cached_property
    def scales(self):
        return float(self.r) ** self.tuple.lengths(self.basis).astype(float)

    def weights(self, u):
        w = np.zeros(self.basis.q)
        w[self.tuple.zero_based] = np.asarray(u, dtype=float) * self.scales
        return w

    def __call__(self, u, t: float = 1.0):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.p,):
            raise ValueError(f"u must have length {self.p}")
        return flow_combination(self.weights(u), self.basis, self.x, t, self.cfg)

    def jacobian(self, u, step: float = JACOBIAN_STEP):
        return jacobian_of_map(self, u, step)

    def ray(self, u, points: int):
        """``Phi(t u)`` for ``t = 0, 1/points, ..., 1``."""
        fam = self.basis.family
        w = self.weights(u)
        if self.basis.packed is not None:
            W = np.ascontiguousarray(w[None, :])
            pts, status = K.path_checkpoints(*self.basis.packed, W, np.ones(1), points, self.x, fam.lo, fam.hi, *self.cfg.args)
            _raise_status(status, 0.0, pts[-1])
            return pts
        out = [self.x]
        for _ in range(points):
            out.append(run_schedule(self.basis.members, None, w[None, :], np.array([1.0 / points]), out[-1], fam.lo, fam.hi, self.cfg))
        return np.array(out)


def map_E(basis, I, x, r, h, cfg: IntegratorConfig = DEFAULT_CFG):
    return EMap(basis, I, x, r, cfg)(h)


def map_Phi(basis, I, x, r, u, cfg: IntegratorConfig = DEFAULT_CFG):
    return PhiMap(basis, I, x, r, cfg)(u)
