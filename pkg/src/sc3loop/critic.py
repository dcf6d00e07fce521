"""Continuous resource allocation for a fixed sensor-actuator pairing.

For a pairing, the UL power is fixed at each paired sensor's maximum and
the remaining problem over bandwidth, CPU frequency and DL power is convex.
It is solved in scaled variables per loop k

    x = B_k / B_max,  y = f_k / f_max,  z = p_k / p_max,
    u = rho * D_u,    w = D_d,          D = CNER

with the rate products kept as concave constraints and the sum of LQR
bounds (or a rate objective) minimized by a log-barrier method.
"""
from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from . import _kernels as K_
from .barrier import (BarrierError, BarrierOptions, BarrierProblem, BarrierResult,
                      barrier_minimize)
from .control import LN2, NEAR_BOUNDARY_BITS, bound_or_inf

log = logging.getLogger(__name__)

INFEASIBLE = math.inf    # sentinel cost, ordered above every finite cost

X, Y, Z, U, W, D = range(6)


class InfeasibleStability(ValueError):
    """No allocation makes every loop stable (or meets its margin)."""

    def __init__(self, loop, message):
        super().__init__(message)
        self.loop = loop


class MarginInfeasible(InfeasibleStability):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class LoopBudget:
    t_u: float = 4e-3
    t_d: float = 1e-3
    t_c: float = 4e-3

    def __post_init__(self):
        if min(self.t_u, self.t_d, self.t_c) <= 0:
            raise ValueError("loop time budgets must be positive")


@dataclass(frozen=True)
class ResourceBudget:
    bandwidth: float            # Hz
    dl_power: float             # W, total over loops
    cpu: float                  # Hz, total over loops
    noise_psd: float            # W/Hz

    def __post_init__(self):
        if self.noise_psd <= 0:
            raise ValueError("noise PSD must be positive")
        if min(self.bandwidth, self.dl_power, self.cpu) < 0:
            raise ValueError("budgets must be nonnegative")


def dbm_per_hz_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SolveOptions:
    gap_tol: float = 1e-6
    feas_tol: float = 1e-8
    newton_tol: float = 1e-9
    mu0: float = 1.0
    mu_factor: float = 10.0
    max_outer: int = 50
    max_inner: int = 200
    sensing_cap: bool = False
    backend: str = "numba"       # "python" runs the reference driver in barrier.py

    def barrier(self, gap_tol=None):
        return BarrierOptions(gap_tol=self.gap_tol if gap_tol is None else gap_tol,
                              t0=1.0 / self.mu0, mu=self.mu_factor,
                              newton_tol=self.newton_tol, max_outer=self.max_outer,
                              max_inner=self.max_inner)


@dataclass(frozen=True)
class LoopData:
    """Per-loop constants of a pairing, as arrays over actuators."""
    pairing: tuple
    ul_gain_sq: np.ndarray
    dl_gain_sq: np.ndarray
    p_u: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    sensing_rate: np.ndarray
    t_u: np.ndarray
    t_d: np.ndarray
    t_c: np.ndarray
    params: tuple

    @property
    def K(self):
        return len(self.pairing)

    @property
    def entropy(self):
        return np.array([p.entropy for p in self.params])


def _per_loop(loops, K):
    if isinstance(loops, LoopBudget):
        return [loops] * K
    loops = list(loops)
    if len(loops) != K:
        raise ValueError(f"expected {K} loop budgets, got {len(loops)}")
    return loops


def optimal_ul_power(pairing, sensors):
    """Every paired sensor transmits at its maximum power."""
    return np.array([sensors[s].p_max for s in pairing], dtype=float)


def loop_data(pairing, topology, channels, loops=LoopBudget()) -> LoopData:
    pairing = tuple(int(s) for s in pairing)
    K = topology.K
    if len(pairing) != K:
        raise ValueError(f"pairing must assign one sensor to each of {K} actuators")
    lb = _per_loop(loops, K)
    sens = [topology.sensors[s] for s in pairing]
    return LoopData(
        pairing=pairing,
        ul_gain_sq=np.asarray(channels.ul_gain_sq, dtype=float)[list(pairing)],
        dl_gain_sq=np.asarray(channels.dl_gain_sq, dtype=float),
        p_u=optimal_ul_power(pairing, topology.sensors),
        gamma=np.array([s.gamma for s in sens], dtype=float),
        rho=np.array([s.rho for s in sens], dtype=float),
        sensing_rate=np.array([s.sensing_rate for s in sens], dtype=float),
        t_u=np.array([b.t_u for b in lb]), t_d=np.array([b.t_d for b in lb]),
        t_c=np.array([b.t_c for b in lb]),
        params=tuple(a.control for a in topology.actuators))


def rate_product(t, bandwidth, snr_numerator, noise_psd):
    """t * B * log2(1 + P|h|^2 / (B N0)), extended by 0 at B = 0."""
    B = np.asarray(bandwidth, dtype=float)
    num = np.asarray(snr_numerator, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = t * B * np.log1p(num / (B * noise_psd)) / LN2
    return np.where(B > 0, np.nan_to_num(r, nan=0.0), 0.0)


def loop_rates(data: LoopData, budgets: ResourceBudget, bandwidth, cpu, dl_power,
               sensing_cap=False):
    """Achievable (D_u, D_d, CNER) for a given resource split."""
    d_u = rate_product(data.t_u, bandwidth, data.p_u * data.ul_gain_sq, budgets.noise_psd)
    with np.errstate(divide="ignore"):
        comp = np.where(data.gamma > 0, data.t_c * np.asarray(cpu, float) / data.gamma, math.inf)
    d_u = np.minimum(d_u, comp)
    if sensing_cap:
        d_u = np.minimum(d_u, data.sensing_rate)
    d_d = rate_product(data.t_d, bandwidth, np.asarray(dl_power, float) * data.dl_gain_sq,
                       budgets.noise_psd)
    d_sc3 = np.minimum(data.rho * d_u, d_d)
    return d_u, d_d, d_sc3


@dataclass
class Allocation:
    pairing: tuple
    bandwidth: np.ndarray
    cpu: np.ndarray
    dl_power: np.ndarray
    ul_power: np.ndarray
    d_u: np.ndarray
    d_d: np.ndarray
    d_sc3: np.ndarray
    cost: np.ndarray
    objective: str = "p3"
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.cost))

    @property
    def feasible(self) -> bool:
        return bool(np.all(np.isfinite(self.cost)))


def finish_allocation(data, budgets, bandwidth, cpu, dl_power, objective, diagnostics,
                      sensing_cap=False) -> Allocation:
    d_u, d_d, d_sc3 = loop_rates(data, budgets, bandwidth, cpu, dl_power, sensing_cap)
    cost = np.array([bound_or_inf(d, p) for d, p in zip(d_sc3, data.params)])
    return Allocation(pairing=data.pairing, bandwidth=np.asarray(bandwidth, float),
                      cpu=np.asarray(cpu, float), dl_power=np.asarray(dl_power, float),
                      ul_power=data.p_u.copy(), d_u=d_u, d_d=d_d, d_sc3=d_sc3, cost=cost,
                      objective=objective, diagnostics=diagnostics)


def constraint_violation(alloc: Allocation, data: LoopData, budgets: ResourceBudget,
                         sensing_cap=False) -> float:
    """Largest relative violation of any allocation constraint."""
    v = [0.0]
    for tot, cap in ((alloc.bandwidth.sum(), budgets.bandwidth), (alloc.cpu.sum(), budgets.cpu),
                     (alloc.dl_power.sum(), budgets.dl_power)):
        if math.isfinite(cap):
            v.append((tot - cap) / max(cap, 1e-300))
    for arr, cap in ((alloc.bandwidth, budgets.bandwidth), (alloc.cpu, budgets.cpu),
                     (alloc.dl_power, budgets.dl_power)):
        scale = cap if math.isfinite(cap) and cap > 0 else 1.0
        v.append(float(np.max(-arr)) / scale)
    ru = rate_product(data.t_u, alloc.bandwidth, data.p_u * data.ul_gain_sq, budgets.noise_psd)
    rd = rate_product(data.t_d, alloc.bandwidth, alloc.dl_power * data.dl_gain_sq,
                      budgets.noise_psd)
    v.append(float(np.max((alloc.d_u - ru) / np.maximum(ru, 1.0))))
    v.append(float(np.max((alloc.d_d - rd) / np.maximum(rd, 1.0))))
    work = data.gamma * alloc.d_u
    v.append(float(np.max((work - data.t_c * alloc.cpu) / np.maximum(work, 1.0))))
    bound = np.minimum(data.rho * alloc.d_u, alloc.d_d)
    v.append(float(np.max((alloc.d_sc3 - bound) / np.maximum(bound, 1.0))))
    if sensing_cap:
        fin = np.isfinite(data.sensing_rate)
        if fin.any():
            v.append(float(np.max((alloc.d_u[fin] - data.sensing_rate[fin])
                                  / np.maximum(data.sensing_rate[fin], 1.0))))
    return max(v)


# ---------------------------------------------------------------------------
# barrier formulation

_KINDS = {"p3": K_.KIND_P3, "phase1": K_.KIND_PHASE1, "max_sum": K_.KIND_MAX_SUM,
          "max_min": K_.KIND_MAX_MIN, "max_min_margin": K_.KIND_MAX_MIN_MARGIN}


class _AllocationProblem(BarrierProblem):
    """Scaled allocation problem; see the module docstring for variables.

    kind: 'p3' minimizes the summed LQR bound, 'phase1' maximizes the
    smallest margin D_k - floor_k, 'max_sum' / 'max_min' / 'max_min_margin'
    maximize the corresponding CNER objective subject to D_k >= floor_k.
    """

    def __init__(self, data: LoopData, budgets: ResourceBudget, kind, floor=None,
                 sensing_cap=False):
        K = data.K
        self.K, self.kind, self.data = K, kind, data
        self.kind_id = _KINDS[kind]
        self.entropy = data.entropy
        self.floor = self.entropy if floor is None else np.asarray(floor, float)
        self.nn = np.array([p.n for p in data.params], dtype=float)
        self.num = np.array([p.numerator for p in data.params])
        self.trace = np.array([p.trace_term for p in data.params])
        self.has_t = kind in ("phase1", "max_min", "max_min_margin")
        nv = 6 * K + (1 if self.has_t else 0)
        self.nv = nv
        Bmax = budgets.bandwidth
        self.Au = data.rho * data.t_u * Bmax / LN2
        self.cu = data.p_u * data.ul_gain_sq / (budgets.noise_psd * Bmax)
        self.Ad = data.t_d * Bmax / LN2
        self.cd = budgets.dl_power * data.dl_gain_sq / (budgets.noise_psd * Bmax)
        self.kappa = (np.zeros(K) if math.isinf(budgets.cpu)
                      else data.gamma / (data.rho * data.t_c * budgets.cpu))

        rows, consts = [], []

        def row(coeffs, const):
            r = np.zeros(nv)
            for i, c in coeffs:
                r[i] += c
            rows.append(r)
            consts.append(const)

        for k in range(K):
            row([(Y * K + k, 1.0), (U * K + k, -self.kappa[k])], 0.0)
            row([(U * K + k, 1.0), (D * K + k, -1.0)], 0.0)
            row([(W * K + k, 1.0), (D * K + k, -1.0)], 0.0)
            for blk in (X, Y, Z):
                row([(blk * K + k, 1.0)], 0.0)
        for blk in (X, Y, Z):
            row([(blk * K + k, -1.0) for k in range(K)], 1.0)
        if sensing_cap:
            for k in range(K):
                if math.isfinite(data.sensing_rate[k]):
                    row([(U * K + k, -1.0)], data.rho[k] * data.sensing_rate[k])
        if kind != "p3":
            for k in range(K):
                if kind == "phase1":
                    row([(D * K + k, 1.0), (6 * K, -1.0)], -self.floor[k])
                else:
                    row([(D * K + k, 1.0)], -self.floor[k])
                    if kind == "max_min":
                        row([(D * K + k, 1.0), (6 * K, -1.0)], 0.0)
                    elif kind == "max_min_margin":
                        row([(D * K + k, 1.0), (6 * K, -1.0)], -self.entropy[k])
        self.J_lin = np.array(rows)
        self.b_lin = np.array(consts)
        self.n_constraints = 2 * K + len(rows)
        self.lin_obj = np.zeros(nv)
        if self.has_t:
            self.lin_obj[6 * K] = -1.0
        elif kind == "max_sum":
            self.lin_obj[D * K:(D + 1) * K] = -1.0
        self._c = (K, self.Au, self.cu, self.Ad, self.cd, self.J_lin, self.b_lin)
        self._o = (self.kind_id, K, self.entropy, self.nn, self.num, self.trace, self.lin_obj)

    def constraints(self, v):
        return K_.constraints(v, *self._c)

    def constraint_derivs(self, v):
        return K_.constraint_derivs(v, *self._c)

    def objective(self, v):
        return K_.objective(v, *self._o)

    def objective_value(self, v):
        return K_.objective_value(v, *self._o)

    def caps(self, x, y, z, sensing_cap):
        """UL (scaled by rho) and DL cycle-rate caps at a scaled split."""
        ru = self.Au * x * np.log1p(self.cu / x)
        comp = np.full(self.K, math.inf)
        pos = self.kappa > 0
        comp[pos] = y[pos] / self.kappa[pos]
        cap_u = np.minimum(ru, comp)
        if sensing_cap:
            cap_u = np.minimum(cap_u, self.data.rho * self.data.sensing_rate)
        rd = self.Ad * x * np.log1p(self.cd * z / x)
        return cap_u, rd


def _run_barrier(prob: _AllocationProblem, v0, bopts: BarrierOptions, backend):
    """Run the barrier method; returns (BarrierResult, status)."""
    if backend == "numba":
        v, f, t, gap, steps, outer, dec, status = K_.barrier_solve(
            np.ascontiguousarray(v0, dtype=float), prob.kind_id, *prob._c,
            prob.entropy, prob.nn, prob.num, prob.trace, prob.lin_obj, prob.floor, bopts.t0,
            bopts.mu, bopts.gap_tol, bopts.newton_tol, bopts.max_outer, bopts.max_inner,
            bopts.alpha, bopts.beta)
        res = BarrierResult(v, f, t, gap, steps, outer, dec,
                            stopped_early=status in (K_.ST_FEASIBLE, K_.ST_CERT_INFEASIBLE))
        if status < 0:
            reason = {K_.ST_BAD_START: "starting point is not strictly feasible",
                      K_.ST_CENTERING: "centering did not converge",
                      K_.ST_OUTER: "outer iteration limit reached"}[status]
            raise BarrierError(reason, {"t": t, "decrement": dec, "newton_steps": steps})
        return res, status
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")
    verdict = {}
    stop = None
    if prob.kind == "phase1":
        K, floor, m = prob.K, prob.floor, prob.n_constraints

        def stop(v, t):
            if (v[6 * K] > NEAR_BOUNDARY_BITS
                    and np.all(v[5 * K:6 * K] - floor > NEAR_BOUNDARY_BITS)):
                verdict["status"] = K_.ST_FEASIBLE
                return True
            if v[6 * K] + m / t < 0:
                verdict["status"] = K_.ST_CERT_INFEASIBLE
                return True
            return False

    res = barrier_minimize(prob, v0, bopts, stop=stop)
    return res, verdict.get("status", K_.ST_CONVERGED)


def _inside(cap, frac=0.9):
    return np.where(cap > 0, frac * cap, cap - 1.0)


def _start_point(prob: _AllocationProblem, sensing_cap):
    K = prob.K
    share = np.full(K, 0.99 / K)
    cap_u, rd = prob.caps(share, share, share, sensing_cap)
    u = _inside(cap_u)
    w = _inside(rd)
    d = _inside(np.minimum(u, w))
    return np.concatenate((share, share, share, u, w, d))


def _single_loop_limits(data: LoopData, budgets: ResourceBudget, sensing_cap):
    """Best CNER of each loop when it alone receives every budget."""
    if budgets.bandwidth <= 0:
        return np.zeros(data.K)
    full = np.ones(data.K)
    _, _, d = loop_rates(data, budgets, full * budgets.bandwidth, full * budgets.cpu,
                         full * budgets.dl_power, sensing_cap)
    return d


def _feasible_start(data, budgets, opts, floor, kind_error):
    """Strictly feasible scaled point with D_k > floor_k, via phase 1 if needed."""
    limits = _single_loop_limits(data, budgets, opts.sensing_cap)
    for k in range(data.K):
        if not limits[k] > floor[k] + NEAR_BOUNDARY_BITS:
            raise kind_error(k, f"loop {k} (sensor {data.pairing[k]}) cannot exceed "
                                f"{floor[k]:.4g} bits/cycle even with all resources "
                                f"(best {limits[k]:.4g})")
    if budgets.dl_power <= 0 or budgets.cpu <= 0:
        raise kind_error(0, "a zero budget leaves loop 0 without rate")
    base = _AllocationProblem(data, budgets, "p3", sensing_cap=opts.sensing_cap)
    v0 = _start_point(base, opts.sensing_cap)
    K = data.K
    if np.all(v0[5 * K:] - floor > NEAR_BOUNDARY_BITS):
        return v0, 0
    prob = _AllocationProblem(data, budgets, "phase1", floor=floor,
                              sensing_cap=opts.sensing_cap)
    s0 = float(np.min(v0[5 * K:] - floor)) - 1.0
    try:
        res, status = _run_barrier(prob, np.append(v0, s0), opts.barrier(gap_tol=1e-9),
                                   opts.backend)
    except BarrierError as exc:
        raise SolverFailure(f"phase 1 failed: {exc}", exc.diagnostics) from exc
    if status != K_.ST_FEASIBLE:
        k = int(np.argmin(res.v[5 * K:6 * K] - floor))
        raise kind_error(k, f"no allocation keeps every loop above its floor; loop {k} "
                            f"(sensor {data.pairing[k]}) is binding")
    return res.v[:6 * K], res.newton_steps


def _unscale(v, K, budgets):
    f = (v[K:2 * K] * budgets.cpu if math.isfinite(budgets.cpu) else np.full(K, math.inf))
    return v[:K] * budgets.bandwidth, f, v[2 * K:3 * K] * budgets.dl_power


def solve_p3(pairing, topology, channels, budgets: ResourceBudget, loops=LoopBudget(),
             opts: SolveOptions = None, data: LoopData = None) -> Allocation:
    """Minimum summed LQR bound for a fixed pairing.

    Raises InfeasibleStability naming a loop when no allocation stabilizes
    every loop, and SolverFailure when the barrier method does not converge.
    """
    opts = opts or SolveOptions()
    data = data or loop_data(pairing, topology, channels, loops)
    return _solve(data, budgets, opts, "p3", data.entropy, InfeasibleStability)


def _solve(data, budgets, opts, kind, floor, kind_error, gap_tol=None):
    K = data.K
    v0, phase1_steps = _feasible_start(data, budgets, opts, floor, kind_error)
    prob = _AllocationProblem(data, budgets, kind, floor=floor, sensing_cap=opts.sensing_cap)
    if prob.has_t:
        d = v0[5 * K:6 * K]
        t0 = np.min(d) if kind == "max_min" else np.min(d - data.entropy)
        v0 = np.append(v0, t0 - 1.0)
    try:
        res, _ = _run_barrier(prob, v0, opts.barrier(gap_tol), opts.backend)
    except BarrierError as exc:
        raise SolverFailure(f"{kind} solve failed: {exc}", exc.diagnostics) from exc
    B, f, p = _unscale(res.v, K, budgets)
    diag = {"newton_steps": res.newton_steps + phase1_steps, "outer_steps": res.outer_steps,
            "gap": res.gap, "decrement": res.decrement, "barrier_objective": res.objective}
    alloc = finish_allocation(data, budgets, B, f, p, kind, diag, opts.sensing_cap)
    diag["max_violation"] = constraint_violation(alloc, data, budgets, opts.sensing_cap)
    return alloc


def evaluate_pairing(pairing, topology, channels, budgets, loops=LoopBudget(), opts=None):
    """Optimal summed cost of a pairing, or INFEASIBLE."""
    try:
        return solve_p3(pairing, topology, channels, budgets, loops, opts).total_cost
    except (InfeasibleStability, SolverFailure) as exc:
        log.debug("pairing %s scored infeasible: %s", pairing, exc)
        return INFEASIBLE


RATE_OBJECTIVES = ("max_sum", "max_min", "max_min_margin")


def solve_rate_objective(variant, pairing, topology, channels, budgets, loops=LoopBudget(),
                         margin=15.0, opts=None, gap_tol=None) -> Allocation:
    """Maximize a CNER objective subject to D_k >= e_k + margin_k.

    The returned costs are the LQR bounds at the resulting CNERs.
    """
    if variant not in RATE_OBJECTIVES:
        raise ValueError(f"unknown rate objective {variant!r}")
    opts = opts or SolveOptions()
    data = loop_data(pairing, topology, channels, loops)
    floor = data.entropy + np.broadcast_to(np.asarray(margin, float), (data.K,))
    return _solve(data, budgets, opts, variant, floor, MarginInfeasible, gap_tol)


def solve_decoupled_cca_da(pairing, topology, channels, budgets, loops=LoopBudget(),
                           opts=None) -> Allocation:
    """Decoupled allocation: communication first, then computing.

    Communication resources come from the cost-minimizing allocation with the
    computing limit removed; CPU frequency is then split in proportion to
    the resulting computing demand gamma * D_u / t_c, scaled down to f_max
    when the demand exceeds it. Rates and costs are recomputed with every
    constraint in force.
    """
    opts = opts or SolveOptions()
    data = loop_data(pairing, topology, channels, loops)
    comm = solve_p3(pairing, topology, channels, replace(budgets, cpu=math.inf), loops, opts,
                    data=data)
    demand = data.gamma * comm.d_u / data.t_c
    total = demand.sum()
    scale = 1.0 if total <= budgets.cpu else budgets.cpu / total
    f = demand * scale
    diag = dict(comm.diagnostics, demand=demand)
    alloc = finish_allocation(data, budgets, comm.bandwidth, f, comm.dl_power, "cca_da", diag,
                              opts.sensing_cap)
    diag["max_violation"] = constraint_violation(alloc, data, budgets, opts.sensing_cap)
    return alloc
