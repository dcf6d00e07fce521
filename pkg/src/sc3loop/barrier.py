"""Log-barrier interior-point method with damped Newton centering.

Solves ``min f0(v)  s.t.  h_i(v) > 0`` for convex f0 and concave h_i.
The problem object supplies values and derivatives; this module only runs
the path-following loop.
"""
from dataclasses import dataclass
import math

import numpy as np


class BarrierError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class BarrierOptions:
    gap_tol: float = 1e-6        # relative duality measure m/t / max(1, |f0|)
    t0: float = 1.0
    mu: float = 10.0
    newton_tol: float = 1e-9
    max_outer: int = 50
    max_inner: int = 200
    alpha: float = 0.01          # Armijo fraction
    beta: float = 0.5            # backtracking factor


@dataclass
class BarrierResult:
    v: np.ndarray
    objective: float
    t: float
    gap: float
    newton_steps: int
    outer_steps: int
    decrement: float
    stopped_early: bool = False


class BarrierProblem:
    """Interface expected by :func:`barrier_minimize`.

    ``constraints(v)`` returns ``h`` only (used in the line search).
    ``constraint_derivs(v)`` returns ``(h, J, C)`` with ``J`` the m x n
    Jacobian and ``C = sum_i hess(h_i) / h_i``.
    ``objective(v)`` returns ``(f, g, H)``; ``objective_value(v)`` returns
    ``f`` or ``inf`` outside the domain.
    """
    n_constraints: int

    def constraints(self, v):
        raise NotImplementedError

    def constraint_derivs(self, v):
        raise NotImplementedError

    def objective(self, v):
        raise NotImplementedError

    def objective_value(self, v):
        raise NotImplementedError


def _phi(problem, v, t):
    h = problem.constraints(v)
    if not np.all(h > 0):
        return math.inf
    f = problem.objective_value(v)
    if not math.isfinite(f):
        return math.inf
    return t * f - np.log(h).sum()


def barrier_minimize(problem, v0, opts: BarrierOptions = None, stop=None) -> BarrierResult:
    """Path-following barrier method from a strictly feasible ``v0``.

    ``stop(v, t)`` is checked after every centering step; returning True ends
    the run early (used by the phase-1 search).
    """
    opts = opts or BarrierOptions()
    v = np.array(v0, dtype=float)
    m = problem.n_constraints
    t = opts.t0
    if not math.isfinite(_phi(problem, v, t)):
        raise BarrierError("starting point is not strictly feasible")
    newton_steps = 0
    dec = math.inf
    for outer in range(1, opts.max_outer + 1):
        for _ in range(opts.max_inner):
            f, g0, H0 = problem.objective(v)
            h, J, C = problem.constraint_derivs(v)
            inv_h = 1.0 / h
            grad = t * g0 - J.T @ inv_h
            Jw = J * inv_h[:, None]
            hess = t * H0 + Jw.T @ Jw - C
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = float(-grad @ step)
            if not dec > 2.0 * opts.newton_tol:
                break
            phi0 = t * f - np.log(h).sum()
            slope = grad @ step
            s = 1.0
            while True:
                trial = v + s * step
                phi1 = _phi(problem, trial, t)
                if phi1 <= phi0 + opts.alpha * s * slope:
                    break
                s *= opts.beta
                if s < 1e-14:
                    break
            newton_steps += 1
            if s < 1e-14:
                # no progress possible at this precision; treat as centered
                break
            v = trial
            if phi0 - phi1 <= 1e-13 * max(1.0, abs(phi0)):
                # decrease below rounding level of phi
                break
        else:
            raise BarrierError("centering did not converge",
                               {"t": t, "decrement": dec, "newton_steps": newton_steps})
        f = problem.objective_value(v)
        gap = m / t
        if stop is not None and stop(v, t):
            return BarrierResult(v, f, t, gap, newton_steps, outer, dec, stopped_early=True)
        if gap <= opts.gap_tol * max(1.0, abs(f)):
            return BarrierResult(v, f, t, gap, newton_steps, outer, dec)
        t *= opts.mu
    raise BarrierError("outer iteration limit reached",
                       {"t": t, "gap": m / t, "newton_steps": newton_steps})
