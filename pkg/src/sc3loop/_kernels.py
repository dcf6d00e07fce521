"""Compiled kernels for the scaled allocation problem.

The functions mirror ``barrier.barrier_minimize`` step for step; the
pure-Python driver remains available as a reference path (see
``SolveOptions.backend``).
"""
import math

import numpy as np
from numba import njit

NEAR = 1e-9
LN2 = math.log(2.0)

KIND_P3, KIND_PHASE1, KIND_MAX_SUM, KIND_MAX_MIN, KIND_MAX_MIN_MARGIN = range(5)

ST_CONVERGED, ST_FEASIBLE, ST_CERT_INFEASIBLE = 0, 1, 2
ST_BAD_START, ST_CENTERING, ST_OUTER = -1, -2, -3


@njit(cache=True)
def constraints(v, K, Au, cu, Ad, cd, J_lin, b_lin):
    """Constraint values; h[0] = -1 flags a point outside the rate domain."""
    m_lin = J_lin.shape[0]
    h = np.empty(2 * K + m_lin)
    ok = True
    for i in range(m_lin):
        acc = b_lin[i]
        for j in range(v.shape[0]):
            acc += J_lin[i, j] * v[j]
        h[2 * K + i] = acc
        if not acc > 0.0:
            ok = False
    if not ok:
        for k in range(2 * K):
            h[k] = -1.0
        return h
    for k in range(K):
        x = v[k]
        z = v[2 * K + k]
        h[k] = Au[k] * x * math.log1p(cu[k] / x) - v[3 * K + k]
        h[K + k] = Ad[k] * x * math.log1p(cd[k] * z / x) - v[4 * K + k]
    return h


@njit(cache=True)
def constraint_derivs(v, K, Au, cu, Ad, cd, J_lin, b_lin):
    nv = v.shape[0]
    h = constraints(v, K, Au, cu, Ad, cd, J_lin, b_lin)
    m = h.shape[0]
    J = np.zeros((m, nv))
    J[2 * K:, :] = J_lin
    C = np.zeros((nv, nv))
    for k in range(K):
        x = v[k]
        z = v[2 * K + k]
        q = cd[k] * z
        ix, iz = k, 2 * K + k
        J[k, ix] = Au[k] * (math.log1p(cu[k] / x) - cu[k] / (x + cu[k]))
        J[k, 3 * K + k] = -1.0
        J[K + k, ix] = Ad[k] * (math.log1p(q / x) - q / (x + q))
        J[K + k, iz] = Ad[k] * cd[k] * x / (x + q)
        J[K + k, 4 * K + k] = -1.0
        ru_xx = -Au[k] * cu[k] * cu[k] / (x * (x + cu[k]) ** 2)
        s = Ad[k] * cd[k] * cd[k] / (x + q) ** 2
        c1, c2 = h[k], h[K + k]
        C[ix, ix] = ru_xx / c1 - s * z * z / x / c2
        C[ix, iz] = s * z / c2
        C[iz, ix] = s * z / c2
        C[iz, iz] = -s * x / c2
    return h, J, C


@njit(cache=True)
def bound_terms(margin, n, numerator, trace):
    k = 2.0 * LN2 / n
    x = k * margin
    em = math.exp(-x)
    om = -math.expm1(-x)
    val = numerator * em / om + trace
    d1 = -numerator * k * em / (om * om)
    d2 = numerator * k * k * em * (1.0 + em) / (om * om * om)
    return val, d1, d2


@njit(cache=True)
def objective(v, kind, K, ent, nn, num, trace, lin_obj):
    nv = v.shape[0]
    g = np.zeros(nv)
    H = np.zeros((nv, nv))
    if kind != KIND_P3:
        f = 0.0
        for j in range(nv):
            f += lin_obj[j] * v[j]
        return f, lin_obj.copy(), H
    f = 0.0
    for k in range(K):
        i = 5 * K + k
        val, d1, d2 = bound_terms(v[i] - ent[k], nn[k], num[k], trace[k])
        f += val
        g[i] = d1
        H[i, i] = d2
    return f, g, H


@njit(cache=True)
def objective_value(v, kind, K, ent, nn, num, trace, lin_obj):
    if kind != KIND_P3:
        f = 0.0
        for j in range(v.shape[0]):
            f += lin_obj[j] * v[j]
        return f
    f = 0.0
    for k in range(K):
        margin = v[5 * K + k] - ent[k]
        if not margin > NEAR:
            return math.inf
        f += bound_terms(margin, nn[k], num[k], trace[k])[0]
    return f


@njit(cache=True)
def _phi(v, t, kind, K, Au, cu, Ad, cd, J_lin, b_lin, ent, nn, num, trace, lin_obj):
    h = constraints(v, K, Au, cu, Ad, cd, J_lin, b_lin)
    for i in range(h.shape[0]):
        if not h[i] > 0.0:
            return math.inf
    f = objective_value(v, kind, K, ent, nn, num, trace, lin_obj)
    if not math.isfinite(f):
        return math.inf
    return t * f - np.sum(np.log(h))


@njit(cache=True)
def barrier_solve(v0, kind, K, Au, cu, Ad, cd, J_lin, b_lin, ent, nn, num, trace, lin_obj,
                  floor, t0, mu, gap_tol, newton_tol, max_outer, max_inner, alpha, beta):
    """Returns (v, f, t, gap, newton_steps, outer_steps, decrement, status)."""
    v = v0.copy()
    m = 2 * K + J_lin.shape[0]
    t = t0
    dec = math.inf
    newton_steps = 0
    if not math.isfinite(_phi(v, t, kind, K, Au, cu, Ad, cd, J_lin, b_lin, ent, nn, num,
                              trace, lin_obj)):
        return v, math.inf, t, m / t, 0, 0, dec, ST_BAD_START
    for outer in range(1, max_outer + 1):
        centered = False
        for _ in range(max_inner):
            f, g0, H0 = objective(v, kind, K, ent, nn, num, trace, lin_obj)
            h, J, C = constraint_derivs(v, K, Au, cu, Ad, cd, J_lin, b_lin)
            inv_h = 1.0 / h
            grad = t * g0 - J.T @ inv_h
            Jw = J * inv_h.reshape(-1, 1)
            hess = t * H0 + Jw.T @ Jw - C
            try:
                step = -np.linalg.solve(hess, grad)
            except Exception:
                step = -np.linalg.lstsq(hess, grad)[0]
            dec = -(grad @ step)
            if not dec > 2.0 * newton_tol:
                centered = True
                break
            phi0 = t * f - np.sum(np.log(h))
            slope = grad @ step
            s = 1.0
            trial = v + step
            phi1 = math.inf
            while True:
                trial = v + s * step
                phi1 = _phi(trial, t, kind, K, Au, cu, Ad, cd, J_lin, b_lin, ent, nn, num,
                            trace, lin_obj)
                if phi1 <= phi0 + alpha * s * slope:
                    break
                s *= beta
                if s < 1e-14:
                    break
            newton_steps += 1
            if s < 1e-14:
                centered = True
                break
            v = trial
            if phi0 - phi1 <= 1e-13 * max(1.0, abs(phi0)):
                centered = True
                break
        if not centered:
            return v, math.inf, t, m / t, newton_steps, outer, dec, ST_CENTERING
        f = objective_value(v, kind, K, ent, nn, num, trace, lin_obj)
        gap = m / t
        if kind == KIND_PHASE1:
            s_var = v[6 * K]
            ok = s_var > NEAR
            for k in range(K):
                if not v[5 * K + k] - floor[k] > NEAR:
                    ok = False
            if ok:
                return v, f, t, gap, newton_steps, outer, dec, ST_FEASIBLE
            if s_var + gap < 0.0:
                return v, f, t, gap, newton_steps, outer, dec, ST_CERT_INFEASIBLE
        if gap <= gap_tol * max(1.0, abs(f)):
            return v, f, t, gap, newton_steps, outer, dec, ST_CONVERGED
        t *= mu
    return v, math.inf, t, m / t, newton_steps, max_outer, dec, ST_OUTER
