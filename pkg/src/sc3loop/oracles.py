"""Brute-force reference computations for testing.

Nothing here calls into the critic solver: rates and costs are recomputed
from the raw formulas so agreement between the two is meaningful.
"""
from dataclasses import dataclass
import itertools
import math

import numpy as np


class OracleInfeasible(ValueError):
    pass


class EnumerationCapExceeded(ValueError):
    def __init__(self, estimate, cap):
        super().__init__(f"about {estimate} pairings exceed the enumeration cap {cap}")
        self.estimate = estimate
        self.cap = cap


@dataclass(frozen=True)
class GridSpec:
    points: int = 15
    max_rounds: int = 8
    rel_step: float = 1e-4       # stop once every axis step is below this fraction of its range

    def __post_init__(self):
        if self.points < 3:
            raise ValueError("need at least 3 points per axis")


@dataclass
class GridResult:
    bandwidth: np.ndarray
    cpu: np.ndarray
    dl_power: np.ndarray
    objective: float
    bracket: float
    rounds: int


def _bound(d, e, n, numerator, trace):
    margin = d - e
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        val = numerator / np.expm1(2.0 * math.log(2.0) * margin / n) + trace
    return np.where(margin > 1e-9, val, np.inf)


def _rate(t, B, snr_num, n0):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = t * B * np.log2(1.0 + snr_num / (B * n0))
    return np.where(B > 0, r, 0.0)


def _loop_cost(B, f, p, loop, budgets):
    du = np.minimum(_rate(loop["t_u"], B, loop["p_u"] * loop["h_u"], budgets.noise_psd),
                    loop["t_c"] * f / loop["gamma"])
    if math.isfinite(loop.get("sensing_rate", math.inf)):
        du = np.minimum(du, loop["sensing_rate"])
    dd = _rate(loop["t_d"], B, p * loop["h_d"], budgets.noise_psd)
    d = np.minimum(loop["rho"] * du, dd)
    return _bound(d, loop["e"], loop["n"], loop["numerator"], loop["trace"])


def describe_loops(pairing, topology, channels, loops, sensing_cap=False):
    """Plain dicts with everything the oracle needs per loop."""
    out = []
    lbs = loops if isinstance(loops, (list, tuple)) else [loops] * len(pairing)
    for k, s in enumerate(pairing):
        sen = topology.sensors[s]
        c = topology.actuators[k].control
        out.append(dict(p_u=sen.p_max, h_u=float(channels.ul_gain_sq[s]),
                        h_d=float(channels.dl_gain_sq[k]), gamma=sen.gamma, rho=sen.rho,
                        sensing_rate=sen.sensing_rate if sensing_cap else math.inf,
                        t_u=lbs[k].t_u, t_d=lbs[k].t_d, t_c=lbs[k].t_c, e=c.entropy, n=c.n,
                        numerator=c.n * c.negentropy_scale * c.det_M_root,
                        trace=c.trace_term))
    return out


def grid_search_allocation(pairing, topology, channels, budgets, loops, spec=GridSpec(),
                           sensing_cap=False) -> GridResult:
    """Refined grid minimization of the summed bound over (B, f, p_d).

    For one loop the grid spans each budget; for two loops it spans loop 1's
    share and loop 2 receives the remainder (costs are nonincreasing in every
    resource, so some optimum spends each budget in full).
    """
    desc = describe_loops(pairing, topology, channels, loops, sensing_cap)
    K = len(desc)
    if K > 2:
        raise ValueError("grid oracle supports at most two loops")
    caps = np.array([budgets.bandwidth, budgets.cpu, budgets.dl_power], dtype=float)
    if np.any(caps <= 0):
        raise OracleInfeasible("a budget is zero")
    lo, hi = np.zeros(3), caps.copy()
    best = None
    for rnd in range(1, spec.max_rounds + 1):
        axes = [np.linspace(lo[i], hi[i], spec.points) for i in range(3)]
        B, F, P = np.meshgrid(*axes, indexing="ij")
        if K == 1:
            obj = _loop_cost(B, F, P, desc[0], budgets)
        else:
            obj = (_loop_cost(B, F, P, desc[0], budgets)
                   + _loop_cost(caps[0] - B, caps[1] - F, caps[2] - P, desc[1], budgets))
        if not np.isfinite(obj).any():
            if best is None:
                raise OracleInfeasible("no grid point keeps every loop stable")
            break
        idx = np.unravel_index(np.argmin(obj), obj.shape)
        val = float(obj[idx])
        steps = np.array([a[1] - a[0] for a in axes])
        nb = tuple(slice(max(i - 1, 0), i + 2) for i in idx)
        neigh = obj[nb]
        bracket = float(np.max(np.where(np.isfinite(neigh), neigh, val)) - val)
        point = np.array([axes[i][idx[i]] for i in range(3)])
        if best is None or val <= best[0]:
            best = (val, point, bracket)
        if np.all(steps <= spec.rel_step * caps):
            break
        lo = np.maximum(best[1] - steps, 0.0)
        hi = np.minimum(best[1] + steps, caps)
    val, point, bracket = best
    if K == 1:
        parts = [point[None, :]]
    else:
        parts = [point[None, :], (caps - point)[None, :]]
    alloc = np.concatenate(parts)
    return GridResult(bandwidth=alloc[:, 0], cpu=alloc[:, 1], dl_power=alloc[:, 2],
                      objective=val, bracket=bracket, rounds=rnd)


def count_pairings(effective_sets):
    """Upper estimate of the pairing count, the product of set sizes."""
    return math.prod(len(s) for s in effective_sets)


def enumerate_pairings(effective_sets, cap=100_000):
    """Yield every injective assignment with pairing[k] in effective_sets[k].

    Depth-first over actuators in order, so output is lexicographic.
    """
    est = count_pairings(effective_sets)
    if est > cap:
        raise EnumerationCapExceeded(est, cap)
    sets = [tuple(sorted(s)) for s in effective_sets]
    K = len(sets)
    chosen = []
    used = set()

    def rec(k):
        if k == K:
            yield tuple(chosen)
            return
        for s in sets[k]:
            if s in used:
                continue
            used.add(s)
            chosen.append(s)
            yield from rec(k + 1)
            chosen.pop()
            used.discard(s)

    yield from rec(0)


def brute_force_assignment(U, mask=None):
    """Best one-to-one assignment by permutation enumeration (maximization)."""
    U = np.asarray(U, dtype=float)
    S, K = U.shape
    best, arg = -math.inf, None
    for perm in itertools.permutations(range(S), K):
        if mask is not None and not all(mask[s, k] for k, s in enumerate(perm)):
            continue
        val = sum(U[s, k] for k, s in enumerate(perm))
        if val > best + 1e-12:
            best, arg = val, perm
    return arg, best


@dataclass
class FDReport:
    numeric: np.ndarray
    analytic: np.ndarray
    rel_error: float


def finite_diff_check(fn, point, step=1e-4, analytic=None, order=1, floor=1e-8):
    """Central differences of ``fn`` at ``point``.

    order=1 compares gradients, order=2 compares the Hessian. Relative error
    uses max(|analytic|, |numeric|, floor) as the denominator, entrywise.
    """
    x = np.atleast_1d(np.asarray(point, dtype=float))
    n = x.size
    if order == 1:
        num = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            num[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    elif order == 2:
        num = np.empty((n, n))
        f0 = fn(x)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = step
            num[i, i] = (fn(x + ei) - 2 * f0 + fn(x - ei)) / step ** 2
            for j in range(i + 1, n):
                ej = np.zeros(n)
                ej[j] = step
                num[i, j] = num[j, i] = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej)
                                         + fn(x - ei - ej)) / (4 * step ** 2)
    else:
        raise ValueError("order must be 1 or 2")
    if analytic is None:
        return FDReport(num, None, math.nan)
    ana = np.asarray(analytic, dtype=float).reshape(num.shape)
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
    return FDReport(num, ana, float(np.max(np.abs(num - ana) / denom)))
