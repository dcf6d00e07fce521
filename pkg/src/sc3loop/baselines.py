"""Comparison schemes: heuristic pairings, exhaustive search, fixed-ratio
allocation and the rate-objective variants."""
from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from .critic import (INFEASIBLE, RATE_OBJECTIVES, Allocation, InfeasibleStability,
                     LoopBudget, ResourceBudget, SolveOptions, SolverFailure,
                     finish_allocation, loop_data, solve_decoupled_cca_da, solve_p3,
                     solve_rate_objective)
from .oracles import enumerate_pairings

log = logging.getLogger(__name__)

HEURISTIC_PAIRINGS = ("comm_first", "comp_first", "cca")
SCHEMES = ("exhaustive", "comm_first", "comp_first", "cca", "qos", "cca_da",
           "max_sum_rate", "max_min_rate", "max_min_margin_rate")


class InfeasiblePairing(ValueError):
    """No one-to-one assignment respects the sensing ranges."""


@dataclass(frozen=True)
class UtilityMatrix:
    U: np.ndarray
    scheme: str
    omega: float = None


def build_utility(scheme, traits_or_topology, channels=None, omega=None,
                  effective_sets=None) -> UtilityMatrix:
    """Pairing scores u_sk = (sensor score) x (actuator score), zero off-mask.

    The actuator score is the entropy share of actuator k. The sensor score
    within S_k is its share of UL gain (comm_first), of 1/gamma
    (comp_first), or the omega-weighted mix of both (cca).
    """
    if scheme not in HEURISTIC_PAIRINGS:
        raise ValueError(f"unknown pairing scheme {scheme!r}")
    if (scheme == "cca") != (omega is not None):
        raise ValueError("omega is required for cca and only for cca")
    if scheme == "cca" and not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    topo = traits_or_topology
    sets = effective_sets if effective_sets is not None else topo.effective_sets
    gain = np.asarray(channels.ul_gain_sq, dtype=float)
    inv_gamma = 1.0 / np.array([s.gamma for s in topo.sensors])
    ent = topo.entropies()
    act = ent / ent.sum()
    S, K = topo.S, topo.K
    U = np.zeros((S, K))
    w = {"comm_first": 1.0, "comp_first": 0.0}.get(scheme, omega)
    for k, sk in enumerate(sets):
        idx = list(sk)
        if not idx:
            raise InfeasiblePairing(f"actuator {k} has no candidate sensor")
        score = np.zeros(len(idx))
        if w > 0:
            g = gain[idx]
            score = score + w * (g / g.sum() if g.sum() > 0 else np.full(len(idx), 1 / len(idx)))
        if w < 1:
            score = score + (1 - w) * inv_gamma[idx] / inv_gamma[idx].sum()
        U[idx, k] = score * act[k]
        if not np.any(U[idx, k] > 0):
            raise InfeasiblePairing(f"actuator {k} has an all-zero utility column")
    return UtilityMatrix(U=U, scheme=scheme, omega=omega)


def _assignment_value(cost):
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return math.inf, None
    return float(cost[rows, cols].sum()), rows[np.argsort(cols)]


def hungarian_match(U, mask=None, tol=1e-12):
    """Utility-maximizing one-to-one assignment of sensors to actuators.

    ``U`` is S x K with K <= S; entries outside ``mask`` are forbidden.
    Among equally good assignments the lexicographically smallest tuple
    (sensor of actuator 0, sensor of actuator 1, ...) is returned.
    """
    U = np.asarray(U, dtype=float)
    S, K = U.shape
    if K > S:
        raise InfeasiblePairing(f"{K} actuators but only {S} sensors")
    mask = np.ones_like(U, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    cost = np.where(mask, -U, np.inf)
    best, _ = _assignment_value(cost)
    if not math.isfinite(best):
        raise InfeasiblePairing("no assignment respects the mask")
    slack = tol * max(1.0, abs(best))
    pairing = []
    fixed = 0.0
    rows_left = list(range(S))
    for k in range(K):
        for s in sorted(r for r in rows_left if mask[r, k]):
            rest_rows = [r for r in rows_left if r != s]
            sub = cost[np.ix_(rest_rows, range(k + 1, K))]
            rest = 0.0 if sub.shape[1] == 0 else _assignment_value(sub)[0]
            if fixed + cost[s, k] + rest <= best + slack:
                pairing.append(s)
                fixed += cost[s, k]
                rows_left = rest_rows
                break
        else:  # pragma: no cover - guarded by the feasibility check above
            raise InfeasiblePairing("tie-breaking lost the optimum")
    return tuple(int(s) for s in pairing)


def heuristic_pairing(scheme, topology, channels, omega=None):
    um = build_utility(scheme, topology, channels, omega=omega)
    return hungarian_match(um.U, topology.mask())


def exhaustive_search(topology, channels, budgets, loops=LoopBudget(), opts=None,
                      cap=100_000):
    """Globally optimal pairing by enumerating and solving every candidate.

    Returns (pairing, allocation), or (None, None) when no pairing can
    stabilize every loop. Ties keep the first pairing in enumeration order.
    """
    best_cost, best = INFEASIBLE, (None, None)
    for pairing in enumerate_pairings(topology.effective_sets, cap=cap):
        try:
            alloc = solve_p3(pairing, topology, channels, budgets, loops, opts)
        except (InfeasibleStability, SolverFailure):
            continue
        if alloc.total_cost < best_cost:
            best_cost, best = alloc.total_cost, (pairing, alloc)
    return best


def fixed_ratio_allocation(pairing, topology, channels, budgets, loops=LoopBudget(),
                           sensing_cap=False) -> Allocation:
    """Every budget split in proportion to the loops' intrinsic entropies."""
    data = loop_data(pairing, topology, channels, loops)
    ent = data.entropy
    if not ent.sum() > 0:
        raise ValueError("entropy-proportional split needs a positive entropy total")
    ratio = ent / ent.sum()
    return finish_allocation(data, budgets, ratio * budgets.bandwidth, ratio * budgets.cpu,
                             ratio * budgets.dl_power, "qos", {"ratio": ratio}, sensing_cap)


def qos_allocation(topology, channels, budgets, loops=LoopBudget(), cap=100_000,
                   sensing_cap=False):
    """Entropy-proportional allocation with the best pairing found by enumeration.

    Returns (pairing, allocation); costs are +inf for unstable loops.
    """
    best = (None, None)
    best_cost = math.nan
    for pairing in enumerate_pairings(topology.effective_sets, cap=cap):
        alloc = fixed_ratio_allocation(pairing, topology, channels, budgets, loops,
                                       sensing_cap)
        if best[0] is None or alloc.total_cost < best_cost:
            best, best_cost = (pairing, alloc), alloc.total_cost
    return best


@dataclass
class SchemeResult:
    scheme: str
    pairing: tuple = None
    allocation: Allocation = None
    error: str = ""
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return INFEASIBLE if self.allocation is None else self.allocation.total_cost

    @property
    def feasible(self) -> bool:
        return self.allocation is not None and self.allocation.feasible


@dataclass(frozen=True)
class SchemeParams:
    omega: float = 0.3
    margin: float = 15.0
    cap: int = 100_000
    opts: SolveOptions = field(default_factory=SolveOptions)


def run_baseline(scheme, topology, channels, budgets, loops=LoopBudget(),
                 params: SchemeParams = SchemeParams()) -> SchemeResult:
    """Dispatch one comparison scheme; failures are captured in the result."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    opts = params.opts
    start = time.perf_counter()
    res = SchemeResult(scheme)
    try:
        if scheme == "exhaustive":
            res.pairing, res.allocation = exhaustive_search(topology, channels, budgets, loops,
                                                            opts, params.cap)
            if res.pairing is None:
                res.error = "no pairing stabilizes every loop"
        elif scheme == "qos":
            res.pairing, res.allocation = qos_allocation(topology, channels, budgets, loops,
                                                         params.cap, opts.sensing_cap)
        else:
            if scheme in ("comm_first", "comp_first"):
                res.pairing = heuristic_pairing(scheme, topology, channels)
            elif scheme in ("cca", "cca_da"):
                res.pairing = heuristic_pairing("cca", topology, channels, params.omega)
            else:
                res.pairing = heuristic_pairing("comm_first", topology, channels)
            if scheme == "cca_da":
                res.allocation = solve_decoupled_cca_da(res.pairing, topology, channels,
                                                        budgets, loops, opts)
            elif scheme.endswith("_rate"):
                variant = scheme[:-len("_rate")]
                assert variant in RATE_OBJECTIVES
                res.allocation = solve_rate_objective(variant, res.pairing, topology, channels,
                                                      budgets, loops, params.margin, opts)
            else:
                res.allocation = solve_p3(res.pairing, topology, channels, budgets, loops,
                                          opts)
    except (InfeasibleStability, SolverFailure, InfeasiblePairing) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        log.debug("%s failed: %s", scheme, exc)
    res.elapsed = time.perf_counter() - start
    return res
