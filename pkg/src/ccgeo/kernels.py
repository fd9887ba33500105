"""Hot numeric loops: polynomial field evaluation, Dormand-Prince flows, the
almost-exponential map E and its path-lifting continuation.

Every function below is written so that it runs both as plain Python/numpy and
under ``numba.njit``; :mod:`ccgeo._accel` decides which one is used.

Packed field sets are four arrays ``(exps, coefs, comps, fidx)``: term ``t``
contributes ``coefs[t] * w[fidx[t]] * prod(x ** exps[t])`` to component
``comps[t]`` of the combined field ``sum_f w[f] * field_f``.

Status codes shared by all integrating kernels:
  0 ok, 1 escaped domain box, 2 step-size underflow / step budget,
  3 frame collapse (rank loss of dE), 4 lift did not converge.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, jit

OK, ESCAPED, STALLED, COLLAPSED, DIVERGED = 0, 1, 2, 3, 4

MAX_STEPS = 100000


def _poly_eval_loops(exps, coefs, comps, fidx, w, x, out):
    for i in range(out.shape[0]):
        out[i] = 0.0
    for t in range(coefs.shape[0]):
        wt = w[fidx[t]]
        if wt == 0.0:
            continue
        v = coefs[t] * wt
        for i in range(x.shape[0]):
            for _ in range(exps[t, i]):
                v *= x[i]
        out[comps[t]] += v


def _poly_eval_numpy(exps, coefs, comps, fidx, w, x, out):
    mono = np.prod(x[None, :] ** exps, axis=1)
    out[:] = np.bincount(comps, weights=coefs * w[fidx] * mono, minlength=out.shape[0])


if NUMBA_ENABLED:
    poly_eval = jit(_poly_eval_loops)
else:
    poly_eval = _poly_eval_numpy


@jit
def integrate(exps, coefs, comps, fidx, w, x0, T, lo, hi, rtol, atol, max_step):
    """Dormand-Prince 5(4) flow of the combined field for time ``T >= 0``.

    Returns ``(x, status, t_reached)``.
    """
    n = x0.shape[0]
    x = x0.copy()
    if T <= 0.0:
        return x, OK, 0.0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    y = np.empty(n)
    xn = np.empty(n)
    poly_eval(exps, coefs, comps, fidx, w, x, k1)
    t = 0.0
    h = min(T, max_step)
    steps = 0
    while t < T:
        last = h >= T - t
        if last:
            h = T - t
        for i in range(n):
            y[i] = x[i] + h * (0.2 * k1[i])
        poly_eval(exps, coefs, comps, fidx, w, y, k2)
        for i in range(n):
            y[i] = x[i] + h * (3.0 / 40.0 * k1[i] + 9.0 / 40.0 * k2[i])
        poly_eval(exps, coefs, comps, fidx, w, y, k3)
        for i in range(n):
            y[i] = x[i] + h * (44.0 / 45.0 * k1[i] - 56.0 / 15.0 * k2[i] + 32.0 / 9.0 * k3[i])
        poly_eval(exps, coefs, comps, fidx, w, y, k4)
        for i in range(n):
            y[i] = x[i] + h * (
                19372.0 / 6561.0 * k1[i] - 25360.0 / 2187.0 * k2[i] + 64448.0 / 6561.0 * k3[i] - 212.0 / 729.0 * k4[i]
            )
        poly_eval(exps, coefs, comps, fidx, w, y, k5)
        for i in range(n):
            y[i] = x[i] + h * (
                9017.0 / 3168.0 * k1[i]
                - 355.0 / 33.0 * k2[i]
                + 46732.0 / 5247.0 * k3[i]
                + 49.0 / 176.0 * k4[i]
                - 5103.0 / 18656.0 * k5[i]
            )
        poly_eval(exps, coefs, comps, fidx, w, y, k6)
        for i in range(n):
            xn[i] = x[i] + h * (
                35.0 / 384.0 * k1[i]
                + 500.0 / 1113.0 * k3[i]
                + 125.0 / 192.0 * k4[i]
                - 2187.0 / 6784.0 * k5[i]
                + 11.0 / 84.0 * k6[i]
            )
        poly_eval(exps, coefs, comps, fidx, w, xn, k7)
        err = 0.0
        for i in range(n):
            e = h * (
                71.0 / 57600.0 * k1[i]
                - 71.0 / 16695.0 * k3[i]
                + 71.0 / 1920.0 * k4[i]
                - 17253.0 / 339200.0 * k5[i]
                + 22.0 / 525.0 * k6[i]
                - 1.0 / 40.0 * k7[i]
            )
            sc = atol + rtol * max(abs(x[i]), abs(xn[i]))
            err += (e / sc) ** 2
        err = np.sqrt(err / n)
        if err <= 1.0:
            t = T if last else t + h
            for i in range(n):
                x[i] = xn[i]
                k1[i] = k7[i]
            for i in range(n):
                if x[i] < lo[i] or x[i] > hi[i]:
                    return x, ESCAPED, t
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
        else:
            fac = max(0.2, 0.9 * err**-0.2)
        h = min(h * fac, max_step)
        steps += 1
        if steps > MAX_STEPS or h <= 1e-14 * T:
            return x, STALLED, t
    return x, OK, t


@jit
def integrate_segments(exps, coefs, comps, fidx, W, D, x0, lo, hi, rtol, atol, max_step):
    """Concatenate flows: segment ``s`` flows ``sum_f W[s, f] field_f`` for
    signed time ``D[s]``.  Returns ``(x, status, failed_segment, t)``."""
    x = x0.copy()
    w = np.empty(W.shape[1])
    for s in range(W.shape[0]):
        d = D[s]
        if d == 0.0:
            continue
        sg = 1.0
        if d < 0.0:
            sg = -1.0
            d = -d
        for f in range(W.shape[1]):
            w[f] = sg * W[s, f]
        x, status, t = integrate(exps, coefs, comps, fidx, w, x, d, lo, hi, rtol, atol, max_step)
        if status != OK:
            return x, status, s, t
    return x, OK, -1, 0.0


@jit
def integrate_segments_batch(exps, coefs, comps, fidx, W, D, x0, lo, hi, rtol, atol, max_step):
    """Batched :func:`integrate_segments` from a common start ``x0``:
    ``W`` is ``(B, S, F)`` and ``D`` is ``(B, S)``."""
    B = W.shape[0]
    out = np.empty((B, x0.shape[0]))
    status = np.zeros(B, dtype=np.int64)
    for b in range(B):
        x, st, _, _ = integrate_segments(exps, coefs, comps, fidx, W[b], D[b], x0, lo, hi, rtol, atol, max_step)
        out[b] = x
        status[b] = st
    return out, status


@jit
def path_checkpoints(exps, coefs, comps, fidx, W, D, substeps, x0, lo, hi, rtol, atol, max_step):
    """Points of a piecewise-constant control path, ``substeps`` per segment."""
    S = W.shape[0]
    n = x0.shape[0]
    pts = np.empty((S * substeps + 1, n))
    pts[0] = x0
    x = x0.copy()
    w = np.empty(W.shape[1])
    k = 1
    for s in range(S):
        d = D[s] / substeps
        sg = 1.0
        if d < 0.0:
            sg = -1.0
            d = -d
        for f in range(W.shape[1]):
            w[f] = sg * W[s, f]
        for _ in range(substeps):
            x, status, _t = integrate(exps, coefs, comps, fidx, w, x, d, lo, hi, rtol, atol, max_step)
            if status != OK:
                return pts[:k], status
            pts[k] = x
            k += 1
    return pts, OK


# -- almost exponential map -----------------------------------------------------


@jit
def e_segments(h, r, ell, tstart, tlen, tfield, tsign, m):
    """Flow schedule of ``E(h) = exp_ap(h_1 r^l1 Y_i1) ... exp_ap(h_p r^lp Y_ip) x``.

    Member ``k`` owns the template slice ``tstart[k]:tstart[k]+tlen[k]`` of
    horizontal flows ``(tfield, tsign)`` describing ``exp_ap`` for ``h_k > 0``
    with unit time; for ``h_k < 0`` the reversed, negated schedule is used.
    The rightmost factor acts first.
    """
    p = h.shape[0]
    total = 0
    for k in range(p):
        total += tlen[k]
    W = np.zeros((total, m))
    D = np.zeros(total)
    s = 0
    for k in range(p - 1, -1, -1):
        hk = h[k]
        t = r * abs(hk) ** (1.0 / ell[k])
        L = tlen[k]
        st = tstart[k]
        for a in range(L):
            if hk >= 0.0:
                idx = st + a
                sg = tsign[idx]
            else:
                idx = st + L - 1 - a
                sg = -tsign[idx]
            W[s, tfield[idx]] = 1.0
            D[s] = sg * t
            s += 1
    return W, D


@jit
def eval_E(h, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step):
    W, D = e_segments(h, r, ell, tstart, tlen, tfield, tsign, m)
    x, status, _, _ = integrate_segments(exps, coefs, comps, fidx, W, D, x0, lo, hi, rtol, atol, max_step)
    return x, status


@jit
def jac_E(h, step, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step):
    p = h.shape[0]
    n = x0.shape[0]
    J = np.empty((n, p))
    hp = h.copy()
    for k in range(p):
        hp[k] = h[k] + step
        xp, s1 = eval_E(hp, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
        hp[k] = h[k] - step
        xm, s2 = eval_E(hp, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
        hp[k] = h[k]
        if s1 != OK:
            return J, s1
        if s2 != OK:
            return J, s2
        for i in range(n):
            J[i, k] = (xp[i] - xm[i]) / (2.0 * step)
    return J, OK


@jit
def eval_E_batch(H, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step):
    B = H.shape[0]
    out = np.empty((B, x0.shape[0]))
    status = np.zeros(B, dtype=np.int64)
    for b in range(B):
        x, st = eval_E(H[b], x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
        out[b] = x
        status[b] = st
    return out, status


@jit
def jac_E_batch(H, step, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step):
    B, p = H.shape
    out = np.empty((B, x0.shape[0], p))
    status = np.zeros(B, dtype=np.int64)
    for b in range(B):
        J, st = jac_E(H[b], step, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
        out[b] = J
        status[b] = st
    return out, status


@jit
def _svd_solve(J, rhs, rank_tol):
    U, S, Vt = np.linalg.svd(J, full_matrices=False)
    if S[S.shape[0] - 1] <= rank_tol * S[0]:
        return np.zeros(J.shape[1]), False
    c = U.T @ rhs
    for i in range(c.shape[0]):
        c[i] /= S[i]
    return Vt.T @ c, True


@jit
def box_norm(h, ell):
    v = 0.0
    for k in range(h.shape[0]):
        v = max(v, abs(h[k]) ** (1.0 / ell[k]))
    return v


@jit
def lift_track(G, theta0, step, tol, max_newton, rank_tol, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step):
    """Continuation lift of the checkpoints ``G`` through ``E``.

    At every checkpoint a least-squares predictor along ``dE`` is followed by
    Newton corrections until ``|E(theta) - G[k]| <= tol``.  Returns
    ``(thetas, residuals, status, failed_index)``.
    """
    K = G.shape[0]
    p = theta0.shape[0]
    thetas = np.zeros((K, p))
    res_hist = np.zeros(K)
    theta = theta0.copy()
    thetas[0] = theta
    for k in range(1, K):
        J, st = jac_E(theta, step, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
        if st != OK:
            return thetas[:k], res_hist[:k], st, k
        d, ok = _svd_solve(J, G[k] - G[k - 1], rank_tol)
        if not ok:
            return thetas[:k], res_hist[:k], COLLAPSED, k
        theta = theta + d
        done = False
        rn = 0.0
        for it in range(max_newton):
            Ex, st = eval_E(theta, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
            if st != OK:
                return thetas[:k], res_hist[:k], st, k
            res = G[k] - Ex
            rn = np.sqrt(np.sum(res * res))
            if rn <= tol:
                done = True
                break
            if it > 0:
                J, st = jac_E(theta, step, x0, r, ell, tstart, tlen, tfield, tsign, exps, coefs, comps, fidx, m, lo, hi, rtol, atol, max_step)
                if st != OK:
                    return thetas[:k], res_hist[:k], st, k
            d, ok = _svd_solve(J, res, rank_tol)
            if not ok:
                return thetas[:k], res_hist[:k], COLLAPSED, k
            theta = theta + d
        if not done:
            return thetas[:k], res_hist[:k], DIVERGED, k
        thetas[k] = theta
        res_hist[k] = rn
    return thetas, res_hist, OK, -1


# -- pullback frame ODE -----------------------------------------------------------


@jit
def poly_eval_all(exps, coefs, comps, fidx, F, x):
    """Evaluate every field of a packed set separately: returns ``(F, n)``."""
    out = np.zeros((F, x.shape[0]))
    for t in range(coefs.shape[0]):
        v = coefs[t]
        for i in range(x.shape[0]):
            for _ in range(exps[t, i]):
                v *= x[i]
        out[fidx[t], comps[t]] += v
    return out


@jit
def _a_rhs(rho, y, M, omega, p, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, dy, dM):
    G = poly_eval_all(yexps, ycoefs, ycomps, yfidx, p, y)
    Br = poly_eval_all(bexps, bcoefs, bcomps, bfidx, p * p, y)
    n = y.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(p):
            acc += omega[j] * G[j, i]
        dy[i] = acc
    N = G @ G.T
    K = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            if omega[b] == 0.0:
                continue
            ct = np.linalg.solve(N, G @ Br[a * p + b])
            for k in range(p):
                K[a, k] += omega[b] * ct[k]
    if rho > 0.0:
        A = M / rho
        R = A @ A + K @ M + rho * K
    else:
        R = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            dM[a, b] = -R[a, b]


@jit
def a_ray(omega, rho, nsteps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup):
    """RK4 for ``M = rho A(rho omega)`` jointly with the ray ``y = Phi(rho omega)``.

    Starts at ``rho = 0`` with ``M = 0``; ``M / rho`` is taken as zero there
    (``M = O(rho^2)``).  Returns ``(A, y, status, rho_reached)``.
    """
    p = omega.shape[0]
    n = x0.shape[0]
    y = x0.copy()
    M = np.zeros((p, p))
    if rho <= 0.0:
        return M, y, OK, 0.0
    h = rho / nsteps
    k1y = np.empty(n)
    k2y = np.empty(n)
    k3y = np.empty(n)
    k4y = np.empty(n)
    k1M = np.empty((p, p))
    k2M = np.empty((p, p))
    k3M = np.empty((p, p))
    k4M = np.empty((p, p))
    s = 0.0
    for it in range(nsteps):
        _a_rhs(s, y, M, omega, p, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, k1y, k1M)
        _a_rhs(s + 0.5 * h, y + 0.5 * h * k1y, M + 0.5 * h * k1M, omega, p, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, k2y, k2M)
        _a_rhs(s + 0.5 * h, y + 0.5 * h * k2y, M + 0.5 * h * k2M, omega, p, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, k3y, k3M)
        _a_rhs(s + h, y + h * k3y, M + h * k3M, omega, p, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, k4y, k4M)
        y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        M = M + h / 6.0 * (k1M + 2.0 * k2M + 2.0 * k3M + k4M)
        s = (it + 1) * h
        for i in range(n):
            if y[i] < lo[i] or y[i] > hi[i]:
                return M / s, y, ESCAPED, s
        if np.max(np.abs(M)) > blowup * s:
            return M / s, y, DIVERGED, s
    return M / rho, y, OK, rho


@jit
def a_at(u, nsteps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup):
    rho = np.sqrt(np.sum(u * u))
    p = u.shape[0]
    if rho == 0.0:
        return np.zeros((p, p)), OK, 0.0
    A, _y, st, reached = a_ray(u / rho, rho, nsteps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup)
    return A, st, reached


@jit
def psi_flow(u1, v, nsteps, ray_steps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup):
    """Time-1 RK4 flow of ``sum_j v_j Z_j`` from ``u1``, ``Z_j = e_j + A[j, :]``.
    Returns ``(u, status, rho)``."""
    u = u1.copy()
    h = 1.0 / nsteps
    for _ in range(nsteps):
        A1, s1, r1 = a_at(u, ray_steps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup)
        if s1 != OK:
            return u, s1, r1
        k1 = v + A1.T @ v
        A2, s2, r2 = a_at(u + 0.5 * h * k1, ray_steps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup)
        if s2 != OK:
            return u, s2, r2
        k2 = v + A2.T @ v
        A3, s3, r3 = a_at(u + 0.5 * h * k2, ray_steps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup)
        if s3 != OK:
            return u, s3, r3
        k3 = v + A3.T @ v
        A4, s4, r4 = a_at(u + h * k3, ray_steps, x0, yexps, ycoefs, ycomps, yfidx, bexps, bcoefs, bcomps, bfidx, lo, hi, blowup)
        if s4 != OK:
            return u, s4, r4
        k4 = v + A4.T @ v
        u = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return u, OK, 0.0
