"""Control-theoretic quantities of a single loop.

Everything here is a pure function of its inputs. Rates are in bits per
loop cycle; costs are long-run average LQR costs.
"""
from dataclasses import dataclass
import math

import numpy as np

LN2 = math.log(2.0)

# Stable-region margin below which the bound is treated as divergent.
NEAR_BOUNDARY_BITS = 1e-9


class ControlDomainError(ValueError):
    """An input lies outside the domain of a control quantity."""


class RiccatiIterationLimit(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(
            f"Riccati iteration did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class RiccatiDegenerate(ArithmeticError):
    """R + B^T S B is singular, so the gain matrix is undefined."""


class UnstableLoop(ValueError):
    """The CNER does not exceed the intrinsic entropy; no finite bound."""

    def __init__(self, d_sc3, entropy):
        super().__init__(f"CNER {d_sc3!r} does not exceed intrinsic entropy {entropy!r}")
        self.d_sc3 = d_sc3
        self.entropy = entropy


class NearBoundary(UnstableLoop):
    """The CNER is stable but within NEAR_BOUNDARY_BITS of the entropy."""


@dataclass(frozen=True)
class ControlSystem:
    """Linear plant x+ = A x + B u + v with quadratic weights Q, R."""
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ControlDomainError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ControlDomainError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if Q.shape != (n, n) or cov.shape != (n, n) or R.shape != (m, m):
            raise ControlDomainError("Q, noise_cov must be n x n and R must be m x m")
        _check_psd(Q, "Q")
        _check_psd(R, "R")
        _check_pd(cov, "noise_cov")
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("noise_cov", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def isotropic(cls, entropy, n, state_cost=1.0, input_cost=0.0, noise_variance=1.0):
        """Plant with A = 2^(e/n) I and B = I, so that log2|det A| = e."""
        eye = np.eye(n)
        return cls(A=2.0 ** (entropy / n) * eye, B=eye, Q=state_cost * eye,
                   R=input_cost * eye, noise_cov=noise_variance * eye)


def _check_psd(M, name, tol=1e-10):
    if not np.allclose(M, M.T, atol=tol * max(1.0, np.abs(M).max())):
        raise ControlDomainError(f"{name} must be symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -tol * max(1.0, np.abs(M).max()):
        raise ControlDomainError(f"{name} must be positive semidefinite")


def _check_pd(M, name):
    if not np.allclose(M, M.T):
        raise ControlDomainError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ControlDomainError(f"{name} must be positive definite")


@dataclass(frozen=True)
class RiccatiSolution:
    S: np.ndarray
    M: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True)
class LoopCostParams:
    """Reduced description of a plant, enough to evaluate the LQR bound.

    Attributes
    ----------
    entropy : float
        Intrinsic entropy log2|det A| in bits per cycle.
    n : int
        State dimension.
    negentropy_scale : float
        N(v), the entropy power of the system noise.
    det_M_root : float
        |det M|^(1/n) from the Riccati solution.
    trace_term : float
        Tr(Sigma_v S), the cost floor reached with unlimited rate.
    """
    entropy: float
    n: int
    negentropy_scale: float
    det_M_root: float
    trace_term: float

    def __post_init__(self):
        if self.n < 1:
            raise ControlDomainError("state dimension must be positive")
        if not self.negentropy_scale > 0:
            raise ControlDomainError("negentropy scale must be positive")
        if self.det_M_root < 0 or self.trace_term < 0:
            raise ControlDomainError("det_M_root and trace_term must be nonnegative")

    @property
    def numerator(self) -> float:
        return self.n * self.negentropy_scale * self.det_M_root

    @classmethod
    def from_system(cls, system: ControlSystem, tol=1e-10, max_iter=100_000):
        sol = solve_riccati(system, tol=tol, max_iter=max_iter)
        n = system.n
        sign, logdet = np.linalg.slogdet(sol.M)
        det_root = 0.0 if sign == 0 else math.exp(logdet / n)
        return cls(entropy=intrinsic_entropy(system.A), n=n,
                   negentropy_scale=gaussian_negentropy_scale(system.noise_cov, n),
                   det_M_root=det_root,
                   trace_term=float(np.trace(system.noise_cov @ sol.S)))


def intrinsic_entropy(A) -> float:
    """log2|det A| in bits per cycle."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sign, logdet = np.linalg.slogdet(A)
    if sign == 0 or not np.isfinite(logdet):
        raise ControlDomainError("A is singular; intrinsic entropy undefined")
    return float(logdet / LN2)


def gaussian_negentropy_scale(noise_cov, n=None) -> float:
    """Entropy power of a Gaussian vector, which reduces to det(Sigma)^(1/n)."""
    cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    n = cov.shape[0] if n is None else n
    if cov.shape != (n, n):
        raise ControlDomainError(f"covariance must be {n} x {n}")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ControlDomainError("noise covariance must be positive definite") from None
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(math.exp(logdet / n))


def solve_riccati(system: ControlSystem, tol=1e-10, max_iter=100_000) -> RiccatiSolution:
    """Fixed-point iteration of the coupled (S, M) Riccati equations.

    Starts at S = Q and iterates ``M = S B (R + B'SB)^-1 B'S``,
    ``S = Q + A'(S - M)A`` until both fixed-point residuals (max-norm)
    fall below ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    A, B, Q, R = system.A, system.B, system.Q, system.R

    def gain(S):
        G = R + B.T @ S @ B
        if np.linalg.cond(G) > 1e14:
            raise RiccatiDegenerate("R + B^T S B is singular")
        SB = S @ B
        M = SB @ np.linalg.solve(G, SB.T)
        return 0.5 * (M + M.T)

    S = Q.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        M = gain(S)
        S_next = Q + A.T @ (S - M) @ A
        residual = float(np.abs(S - S_next).max())
        if residual <= tol:
            return RiccatiSolution(S=S, M=M, residual=residual, iterations=it)
        if not np.isfinite(residual):
            break
        S = 0.5 * (S_next + S_next.T)
    raise RiccatiIterationLimit(max_iter, residual)


def riccati_residuals(system: ControlSystem, S, M):
    """Max-norm residuals of the S- and M-equations at (S, M)."""
    A, B, Q, R = system.A, system.B, system.Q, system.R
    res_s = np.abs(S - Q - A.T @ (S - M) @ A).max()
    SB = S @ B
    res_m = np.abs(M - SB @ np.linalg.solve(R + B.T @ S @ B, SB.T)).max()
    return float(res_s), float(res_m)


def cner(d_u, d_d, rho):
    """Closed-loop negentropy rate min(rho * D_u, D_d)."""
    if d_u < 0 or d_d < 0 or not 0.0 <= rho <= 1.0:
        raise ControlDomainError("rates must be nonnegative and rho in [0, 1]")
    return min(rho * d_u, d_d)


def is_stable(d_sc3, entropy) -> bool:
    return d_sc3 > entropy


def lqr_lower_bound(d_sc3, p: LoopCostParams) -> float:
    """Lower bound on the LQR cost achievable at CNER ``d_sc3``.

    n N |det M|^(1/n) / (2^((2/n)(D - e)) - 1) + Tr(Sigma_v S)

    Raises UnstableLoop outside the stable region and NearBoundary when the
    margin is below NEAR_BOUNDARY_BITS.
    """
    margin = d_sc3 - p.entropy
    if not margin > 0:
        raise UnstableLoop(d_sc3, p.entropy)
    if margin < NEAR_BOUNDARY_BITS:
        raise NearBoundary(d_sc3, p.entropy)
    x = 2.0 * LN2 * margin / p.n
    if x > 700.0:    # expm1 would overflow; 1/(e^x - 1) = e^-x to double precision
        return p.numerator * math.exp(-x) + p.trace_term
    return p.numerator / math.expm1(x) + p.trace_term


def bound_or_inf(d_sc3, p: LoopCostParams) -> float:
    """lqr_lower_bound with unstable and near-boundary inputs mapped to +inf."""
    try:
        return lqr_lower_bound(d_sc3, p)
    except UnstableLoop:
        return math.inf


def bound_derivatives(margin, p: LoopCostParams):
    """Value, first and second derivative of the bound w.r.t. the CNER.

    ``margin`` = D - e, array-like, must be positive. Written in terms of
    exp(-x) so large margins do not overflow.
    """
    k = 2.0 * LN2 / p.n
    x = k * np.asarray(margin, dtype=float)
    em = np.exp(-x)
    one_minus = -np.expm1(-x)
    value = p.numerator * em / one_minus + p.trace_term
    d1 = -p.numerator * k * em / one_minus ** 2
    d2 = p.numerator * k * k * em * (1.0 + em) / one_minus ** 3
    return value, d1, d2
