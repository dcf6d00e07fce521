"""Oracle suites: the library checked against independent references.

Each ``check_*`` function returns a :class:`Check` with the measured value
and the tolerance it is held to; ``run_all`` runs the fast ones.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np

from .actor.network import PairingPolicy
from .actor.sampler import _draw, selection_probabilities
from .baselines import hungarian_match
from .channel import (EnvParams, TopologyConfig, generate_topology, realize_channels)
from .control import (ControlSystem, LoopCostParams, lqr_lower_bound, solve_riccati)
from .critic import (LoopBudget, ResourceBudget, _AllocationProblem, constraint_violation,
                     dbm_per_hz_to_watt, loop_data, solve_p3)
from .oracles import brute_force_assignment, grid_search_allocation


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.value:.3g} (tolerance {self.tolerance:.3g}) "
                f"{self.detail} [{self.elapsed:.1f} s]")


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        chk = fn(*args, **kwargs)
        chk.elapsed = time.perf_counter() - t0
        return chk
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_riccati_special(cases=50, seed=0, tol=1e-9):
    """R = 0 and B = I: the fixed point is S = M = Q."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 9))
        L = rng.normal(size=(n, n))
        Q = L @ L.T + 0.1 * np.eye(n)
        A = rng.normal(size=(n, n)) + 2 * np.eye(n)
        sys = ControlSystem(A=A, B=np.eye(n), Q=Q, R=np.zeros((n, n)), noise_cov=np.eye(n))
        sol = solve_riccati(sys, tol=1e-12)
        worst = max(worst, np.abs(sol.S - Q).max(), np.abs(sol.M - Q).max())
    return Check("riccati special case S = M = Q", worst <= tol, worst, tol, f"{cases} cases")


@_timed
def check_bound_closed_form(tol=1e-12):
    """Reduced reference parameters: e = 10 gives 2 at D = 60 and 4/3 at D = 110."""
    p = LoopCostParams(entropy=10.0, n=100, negentropy_scale=0.01, det_M_root=1.0,
                       trace_term=1.0)
    a, b = lqr_lower_bound(60.0, p), lqr_lower_bound(110.0, p)
    err = max(abs(a - 2.0), abs(b - 4.0 / 3.0))
    return Check("LQR bound closed form", err <= tol, err, tol,
                 f"D = 60 gives {a!r}, D = 110 gives {b!r}")


def _rate_hessian(x, z, c):
    """Closed-form Hessian of x*log2(1 + c z / x) in (x, z)."""
    q = c * z
    s = c * c / ((x + q) ** 2 * math.log(2.0))
    return np.array([[-s * z * z / x, s * z], [s * z, -s * x]])


def _random_instance(rng, K, sensors=None, budgets_scale=1.0):
    ent = rng.uniform(5, 60, K)
    ctrls = tuple(LoopCostParams.from_system(ControlSystem.isotropic(float(e), 100,
                                                                     noise_variance=0.01))
                  for e in ent)
    pos = [tuple(rng.uniform(1500, 2500, 2)) for _ in range(K)]
    cfg = TopologyConfig(controls=ctrls, sensor_positions=pos, actuator_positions=pos,
                         rho=float(rng.uniform(0.01, 1)), gamma=tuple(rng.uniform(50, 500, K)))
    seed = int(rng.integers(2**31))
    topo = generate_topology(cfg, seed)
    ch = realize_channels(topo, EnvParams(), seed)
    bud = ResourceBudget(bandwidth=rng.uniform(0.02e6, 0.3e6) * budgets_scale,
                         dl_power=rng.uniform(0.001, 1), cpu=rng.uniform(0.01e9, 0.3e9),
                         noise_psd=dbm_per_hz_to_watt(-174))
    return topo, ch, bud, tuple(range(K))


@_timed
def check_convexity(midpoints=10_000, hessian_points=1000, seed=0, tol=1e-6):
    """Midpoint concavity of the allocation constraints, midpoint convexity of
    the objective, and the sign/determinant of the rate Hessian."""
    rng = np.random.default_rng(seed)
    worst_mid = 0.0
    done = tries = 0
    while done < midpoints:
        tries += 1
        if tries > 100 * midpoints:
            raise RuntimeError("could not sample interior points")
        K = int(rng.integers(1, 4))
        topo, ch, bud, pairing = _random_instance(rng, K)
        data = loop_data(pairing, topo, ch)
        prob = _AllocationProblem(data, bud, "p3")
        for _ in range(100):
            a, b = (_random_domain_point(rng, prob, data) for _ in range(2))
            if a is None or b is None:
                continue
            m = 0.5 * (a + b)
            ha, hb, hm = (prob.constraints(v) for v in (a, b, m))
            scale = np.maximum(1.0, np.maximum(np.abs(ha), np.abs(hb)))
            worst_mid = max(worst_mid, float(np.max(((ha + hb) / 2 - hm) / scale)))
            fa, fb, fm = (prob.objective_value(v) for v in (a, b, m))
            if all(map(math.isfinite, (fa, fb, fm))):
                worst_mid = max(worst_mid, (fm - (fa + fb) / 2) / max(1.0, abs(fa), abs(fb)))
            done += 1
            if done >= midpoints:
                break
    worst_diag = -math.inf
    worst_det = 0.0
    for _ in range(hessian_points):
        x, z = rng.uniform(1e-3, 1.0, 2)
        c = 10 ** rng.uniform(-2, 4)
        H = _rate_hessian(x, z, c)
        worst_diag = max(worst_diag, H[0, 0], H[1, 1])
        worst_det = max(worst_det, abs(np.linalg.det(H)) / max(1.0, np.abs(H).max() ** 2))
    value = max(worst_mid, worst_diag, worst_det)
    return Check("convexity evidence", value <= tol, value, tol,
                 f"midpoint {worst_mid:.2e}, Hessian diag {worst_diag:.2e}, "
                 f"det {worst_det:.2e}",
                 extra={"midpoint": worst_mid, "diag": worst_diag, "det": worst_det})


def _random_domain_point(rng, prob, data):
    """A random strictly feasible point of the scaled problem, or None."""
    K = data.K
    v = np.empty(6 * K)
    x = rng.dirichlet(np.ones(K) * 2) * rng.uniform(0.1, 0.99)
    y = rng.dirichlet(np.ones(K) * 2) * rng.uniform(0.1, 0.99)
    z = rng.dirichlet(np.ones(K) * 2) * rng.uniform(0.1, 0.99)
    v[:K], v[K:2 * K], v[2 * K:3 * K] = x, y, z
    ru = prob.Au * x * np.log1p(prob.cu / x)
    rd = prob.Ad * x * np.log1p(prob.cd * z / x)
    u = ru * rng.uniform(0.05, 0.95, K)
    if prob.kappa.any():
        u = np.minimum(u, y / np.maximum(prob.kappa, 1e-300) * rng.uniform(0.05, 0.95, K))
    w = rd * rng.uniform(0.05, 0.95, K)
    d = np.minimum(u, w) * rng.uniform(0.05, 0.95, K)
    v[3 * K:4 * K], v[4 * K:5 * K], v[5 * K:] = u, w, d
    return v if np.all(prob.constraints(v) > 0) else None


@_timed
def check_critic_vs_grid(instances=30, seed=0, tol=1e-3, viol_tol=1e-8):
    """Barrier solution against the refined grid oracle on K <= 2."""
    rng = np.random.default_rng(seed)
    worst_rel, worst_viol, n = 0.0, 0.0, 0
    while n < instances:
        K = int(rng.integers(1, 3))
        topo, ch, bud, pairing = _random_instance(rng, K)
        try:
            grid = grid_search_allocation(pairing, topo, ch, bud, LoopBudget())
        except ValueError:
            continue
        alloc = solve_p3(pairing, topo, ch, bud)
        data = loop_data(pairing, topo, ch)
        worst_rel = max(worst_rel, abs(alloc.total_cost - grid.objective) / grid.objective)
        worst_viol = max(worst_viol, constraint_violation(alloc, data, bud))
        n += 1
    ok = worst_rel <= tol and worst_viol <= viol_tol
    return Check("critic vs grid oracle", ok, worst_rel, tol,
                 f"{instances} instances, worst violation {worst_viol:.1e}",
                 extra={"violation": worst_viol})


@_timed
def check_sampler(vectors=10, draws=100_000, seed=0, tol=0.01):
    """Single-actuator draw frequencies against the renormalized scores."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(vectors):
        S = int(rng.integers(3, 9))
        scores = rng.dirichlet(np.ones(S))
        cand = sorted(rng.choice(S, size=int(rng.integers(2, S + 1)), replace=False).tolist())
        pre = set(rng.choice(cand, size=int(rng.integers(0, len(cand) - 1)),
                             replace=False).tolist())
        free = [s for s in cand if s not in pre]
        expect = np.zeros(S)
        expect[free] = scores[free] / scores[free].sum()
        p = selection_probabilities(scores, cand, pre)
        counts = np.bincount([_draw(p, rng) for _ in range(draws)], minlength=S)
        worst = max(worst, float(np.abs(counts / draws - expect).max()))
    return Check("sampler frequencies", worst <= tol, worst, tol,
                 f"{vectors} score vectors x {draws} draws")


@_timed
def check_gradient(weights=20, seed=0, tol=1e-4, step=1e-5, min_grad=1e-6):
    """Backpropagated loss gradient against five-point central differences.

    Weights are drawn among entries with |gradient| >= ``min_grad``; below
    that, roundoff in the loss difference dominates any finite-difference
    estimate.
    """
    rng = np.random.default_rng(seed)
    pol = PairingPolicy.initialize(seed)
    G, S, K = 4, 5, 3
    xs = rng.uniform(size=(G, S, 2))
    xa = rng.uniform(size=(G, K, 2))
    mask = np.ones((S, K), dtype=bool)
    mask[3, 0] = mask[4, 2] = False
    targets = np.array([[1, 2, 0], [0, 3, 1], [2, 2, 3], [4, 0, 1]])
    targets = np.array([[t[0], t[1], t[2]] for t in targets])
    for g in range(G):       # keep targets one-to-one and inside the mask
        targets[g] = rng.permutation([0, 1, 2, 3])[:3]
        while not all(mask[targets[g, k], k] for k in range(K)) or len(set(targets[g])) < K:
            targets[g] = rng.permutation([0, 1, 2, 3, 4])[:3]
    _, grads = pol.loss_and_grad(xs, xa, mask, targets)
    pool = [(name, idx) for name in grads for idx in zip(*np.nonzero(np.abs(grads[name])
                                                                     >= min_grad))]
    picks = rng.choice(len(pool), size=weights, replace=False)
    worst = 0.0
    for j in picks:
        name, idx = pool[j]
        arr = pol.params[name]
        orig = arr[idx]

        def f(delta):
            arr[idx] = orig + delta
            val = pol.loss(xs, xa, mask, targets)
            arr[idx] = orig
            return val

        fd = (8 * (f(step) - f(-step)) - (f(2 * step) - f(-2 * step))) / (12 * step)
        an = grads[name][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return Check("actor gradient", worst < tol, worst, tol, f"{weights} weights")


@_timed
def check_hungarian(instances=100, seed=0, max_product=10_000):
    """Hungarian matching against permutation enumeration."""
    rng = np.random.default_rng(seed)
    mismatches, n = 0, 0
    while n < instances:
        S = int(rng.integers(2, 8))
        K = int(rng.integers(1, min(S, 4) + 1))
        mask = rng.random((S, K)) < 0.7
        if not mask.any(axis=0).all() or math.prod(mask.sum(axis=0)) > max_product:
            continue
        U = rng.random((S, K)) * mask
        arg, best = brute_force_assignment(U, mask)
        if arg is None:
            continue
        got = hungarian_match(U, mask)
        val = sum(U[s, k] for k, s in enumerate(got))
        mismatches += abs(val - best) > 1e-12 or not all(mask[s, k] for k, s in enumerate(got))
        n += 1
    return Check("hungarian vs enumeration", mismatches == 0, float(mismatches), 0.0,
                 f"{instances} instances")


FAST_CHECKS = (check_riccati_special, check_bound_closed_form, check_sampler, check_gradient,
               check_hungarian, check_critic_vs_grid, check_convexity)


def run_all(checks=FAST_CHECKS, report=print):
    results = []
    for fn in checks:
        chk = fn()
        report(chk.line())
        results.append(chk)
    return results

