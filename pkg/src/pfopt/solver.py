"""Solvers for the sorted-L1 penalized mean-variance problem.

    minimize  phi/2 w' S w - mu' w + sum_i lam_i |w|_(i)
    subject to e' w = 1  (and w >= 0 when ``nonneg``)

``admm_solve`` splits ``w = v`` and alternates a linear solve, a sorted-L1 prox
and dual ascent. Its stopping rule is a certified primal-dual gap: the reported
point ``v / e'v`` is budget-feasible and the dual bound comes from the dual
iterate scaled into the dual-norm unit ball, so ``gap`` always bounds the
suboptimality of ``w`` from above.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from . import kernels
from .sorted_l1 import as_lambda, dual_sorted_l1_norm, sorted_l1_norm


@dataclass(frozen=True)
class SolverProblem:
    sigma: np.ndarray
    mu: Optional[np.ndarray] = None
    phi: float = 1.0
    penalty: Optional[np.ndarray] = None
    nonneg: bool = False

    def __post_init__(self):
        sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] < 1:
            raise ValueError("sigma must be a square matrix")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("sigma has non-finite entries")
        k = sigma.shape[0]
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > 1e-10 * scale:
            raise ValueError("sigma must be symmetric")
        mu = np.zeros(k) if self.mu is None else np.ascontiguousarray(self.mu, dtype=np.float64)
        if mu.shape != (k,):
            raise ValueError(f"mu has shape {mu.shape}, expected ({k},)")
        lam = np.zeros(k) if self.penalty is None else as_lambda(self.penalty, k)
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "penalty", lam)
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "nonneg", bool(self.nonneg))

    @property
    def k(self):
        return self.sigma.shape[0]

    def with_penalty(self, penalty):
        return replace(self, penalty=penalty)


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 1.0
    tol: float = 1e-7
    max_iter: int = 50_000
    warm_start: Optional[Tuple] = None
    check_every: int = 5

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("max_iter and check_every must be at least 1")


@dataclass
class SolverSolution:
    w: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    beta: float
    gap: float
    objective: float
    iterations: int
    converged: bool
    extra: dict = field(default_factory=dict)

    @property
    def state(self):
        """(w, v, alpha, beta) tuple suitable for ``SolverConfig.warm_start``."""
        return (self.w, self.v, self.alpha, self.beta)


def auto_eta(sigma, phi=1.0):
    """Scale-matched augmented-Lagrangian parameter ``phi * tr(S) / k``."""
    sigma = np.asarray(sigma)
    val = phi * float(np.trace(sigma)) / sigma.shape[0]
    return val if val > 0 else 1.0


def path_eta(lam1, eigenvalues, phi=1.0, slope=300.0):
    """Augmented-Lagrangian parameter for one point of a penalty path.

    ``slope * lam1`` clipped to ``[lo, bar]`` where ``bar`` is the mean
    eigenvalue of ``phi S`` and ``lo`` the geometric mean of its extreme
    eigenvalues (at least ``bar / 1000``). Rounded to a power of sqrt(2) so
    neighbouring grid points share a factorization. The value is fixed for
    the whole solve.
    """
    ev = phi * np.asarray(eigenvalues, dtype=float)
    bar = float(ev.mean())
    if not bar > 0:
        return 1.0
    lo = min(max(1e-3 * bar, float(np.sqrt(max(ev[0], 0.0) * ev[-1]))), bar)
    eta = min(max(slope * float(lam1), lo), bar)
    return float(2.0 ** (np.round(2.0 * np.log2(eta)) / 2.0))


def check_psd(sigma, rtol=1e-10):
    ev = np.linalg.eigvalsh(sigma)
    if ev[0] < -rtol * max(abs(ev[-1]), 1e-300):
        raise ValueError(f"sigma is not positive semidefinite (min eigenvalue {ev[0]:.3e})")
    return ev


class FactoredOperator:
    """Precomputed linear algebra for one (sigma, phi, eta) triple.

    Holds the Cholesky factor of ``phi S + eta (I + ee')`` for the w-update and
    the weight block ``Kw`` / offset ``kb`` of the inverse KKT matrix
    ``[[phi S, e], [e', 0]]`` used by the dual bound. Read-only once built, so
    it can be shared across grid points and threads.
    """

    def __init__(self, sigma, phi, eta, check=True):
        sigma = np.ascontiguousarray(sigma, dtype=np.float64)
        if check:
            check_psd(sigma)
        k = sigma.shape[0]
        self.sigma = sigma
        self.phi = float(phi)
        self.eta = float(eta)
        M = phi * sigma + eta * (np.eye(k) + 1.0)
        self.L = np.ascontiguousarray(np.linalg.cholesky(M))
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = phi * sigma
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        try:
            inv = scipy.linalg.inv(kkt, check_finite=False)
            if not np.all(np.isfinite(inv)):
                raise np.linalg.LinAlgError
        except (np.linalg.LinAlgError, ValueError):
            inv = np.linalg.pinv(kkt)
        self.Kw = np.ascontiguousarray(0.5 * (inv[:k, :k] + inv[:k, :k].T))
        self.kb = np.ascontiguousarray(inv[:k, k])
        for arr in (self.sigma, self.L, self.Kw, self.kb):
            arr.setflags(write=False)

    def matches(self, problem, eta):
        return (self.phi == problem.phi and self.eta == float(eta)
                and (self.sigma is problem.sigma or np.array_equal(self.sigma, problem.sigma)))


def objective(w, problem):
    """Primal objective ``phi/2 w'Sw - mu'w + sorted_l1_norm(w, lam)``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (problem.k,):
        raise ValueError(f"w has shape {w.shape}, expected ({problem.k},)")
    val = 0.5 * problem.phi * float(w @ problem.sigma @ w) - float(problem.mu @ w)
    if np.any(problem.penalty):
        val += sorted_l1_norm(w, problem.penalty)
    return val


def dual_gap(state, problem, operator=None):
    """Certified primal-dual gap for a solver state.

    ``state`` is a SolverSolution or a ``(w, v, alpha, beta)`` tuple; only
    ``v`` and ``alpha`` enter. Equals ``objective(v / e'v) - D(alpha_tilde)``
    where ``D`` is the dual function and ``alpha_tilde`` the dual-feasible
    rescaling of ``alpha``.
    """
    v, alpha = _state_parts(state)[1:3]
    op = operator or FactoredOperator(problem.sigma, problem.phi, 1.0)
    return float(kernels.dual_gap(op.sigma, op.Kw, op.kb, problem.mu, problem.penalty,
                                  problem.phi, problem.nonneg,
                                  np.ascontiguousarray(v, dtype=np.float64),
                                  np.ascontiguousarray(alpha, dtype=np.float64)))


def rescale_dual(alpha, problem):
    """Scale ``alpha`` into the dual-feasible set of the penalty."""
    alpha = np.asarray(alpha, dtype=np.float64)
    lam = problem.penalty
    if not np.any(lam):
        return np.minimum(alpha, 0.0) if problem.nonneg else np.zeros_like(alpha)
    src = np.maximum(alpha, 0.0) if problem.nonneg else alpha
    return alpha / max(1.0, dual_sorted_l1_norm(src, lam))


def gap_estimate(state, problem):
    """Closed-form gap ``-(a + b e)'w + b + rho(v)`` at the rescaled dual.

    This is the duality gap when ``w`` is the stationary point of the
    Lagrangian for ``(alpha, beta)``; away from that point it is only an
    estimate (it vanishes for any budget-feasible ``w`` when ``alpha = 0`` and
    the penalty is zero). ``dual_gap`` is the certified version.
    """
    w, v, alpha, beta = _state_parts(state)
    at = rescale_dual(alpha, problem)
    val = -float((at + beta) @ w) + beta
    if np.any(problem.penalty):
        val += sorted_l1_norm(v, problem.penalty)
    return val


def _state_parts(state):
    if isinstance(state, SolverSolution):
        return state.w, state.v, state.alpha, state.beta
    w, v, alpha, beta = state
    return (np.asarray(w, dtype=np.float64), np.asarray(v, dtype=np.float64),
            np.asarray(alpha, dtype=np.float64), float(beta))


def admm_solve(problem, config=None, operator=None):
    """ADMM with certified-gap stopping.

    Returns the best iterate seen (smallest certified gap); ``converged`` is
    set when that gap reached ``config.tol``. ``operator`` may be a
    FactoredOperator built for the same sigma, phi and eta.
    """
    config = config or SolverConfig()
    k = problem.k
    if operator is None or not operator.matches(problem, config.eta):
        operator = FactoredOperator(problem.sigma, problem.phi, config.eta)
    if config.warm_start is not None:
        w0, v0, a0, b0 = _state_parts(config.warm_start)
        w = np.array(w0, dtype=np.float64)
        v = np.array(v0, dtype=np.float64)
        alpha = np.array(a0, dtype=np.float64)
        beta = np.array([b0], dtype=np.float64)
        if w.shape != (k,) or v.shape != (k,) or alpha.shape != (k,):
            raise ValueError("warm start has the wrong dimension")
    else:
        w = np.full(k, 1.0 / k)
        v = w.copy()
        alpha = np.zeros(k)
        beta = np.zeros(1)
    best_v = v.copy()
    iterations, gap, converged = kernels.admm_loop(
        operator.L, operator.sigma, operator.Kw, operator.kb, problem.mu, problem.penalty,
        problem.phi, float(config.eta), problem.nonneg, w, v, alpha, beta, best_v,
        float(config.tol), int(config.max_iter), int(config.check_every))
    s = best_v.sum()
    w_out = best_v / s if abs(s) > 1e-300 else best_v.copy()
    return SolverSolution(w=w_out, v=best_v, alpha=alpha, beta=float(beta[0]),
                          gap=float(gap), objective=objective(w_out, problem),
                          iterations=int(iterations), converged=bool(converged))


def cycode_solve(problem, config=None, start="ew", seed=None):
    """Cyclic coordinate descent for a constant (LASSO) penalty.

    Minimizes ``w'Sw - theta mu'w + l ||w||_1`` over the budget with
    ``theta = 2/phi`` and ``l = 2 lam / phi``, which has the same minimizer as
    the problem's own objective. Each sweep updates coordinates by
    soft-thresholding, then re-solves the budget multiplier by bisection.
    ``start`` is ``"ew"`` (equal weight) or ``"random"`` (normalized uniform
    draw from ``seed``).
    """
    config = config or SolverConfig()
    lam = problem.penalty
    if problem.nonneg:
        raise ValueError("coordinate descent supports the unconstrained-sign problem only")
    if np.any(lam != lam[0]):
        raise ValueError("coordinate descent needs a constant penalty sequence")
    sigma = problem.sigma
    k = problem.k
    if np.any(np.diag(sigma) <= 0):
        raise ValueError("zero diagonal variance")
    if config.warm_start is not None:
        w = np.array(_state_parts(config.warm_start)[0], dtype=np.float64)
    elif start == "ew":
        w = np.full(k, 1.0 / k)
    elif start == "random":
        u = np.random.Generator(np.random.Philox(seed)).random(k)
        w = u / u.sum()
    else:
        raise ValueError(f"unknown start rule {start!r}")
    theta = 2.0 / problem.phi
    lc = 2.0 * float(lam[0]) / problem.phi
    sweeps, converged, gamma = kernels.cycode_loop(sigma, problem.mu, theta, lc, w,
                                                   float(config.tol), int(config.max_iter))
    w = w / w.sum()
    # dual certificate from stationarity: alpha = mu - phi S w - beta e
    beta = 0.5 * problem.phi * gamma
    alpha = problem.mu - problem.phi * (sigma @ w) + beta
    state = (w, w, alpha, -beta)
    return SolverSolution(w=w, v=w.copy(), alpha=alpha, beta=-beta,
                          gap=dual_gap(state, problem), objective=objective(w, problem),
                          iterations=int(sweeps), converged=bool(converged),
                          extra={"gamma": float(gamma)})


def _solve_spd(A, b):
    try:
        c = scipy.linalg.cho_factor(A, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is singular or not positive definite") from exc
    x = scipy.linalg.cho_solve(c, b, check_finite=False)
    d = np.diag(c[0])
    if d.min() <= np.sqrt(np.finfo(float).eps) * d.max() * 1e-4:
        raise ValueError("matrix is numerically singular")
    return x


def gmv_closed_form(sigma):
    """Global minimum-variance weights ``S^-1 e / e'S^-1 e``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    x = _solve_spd(sigma, np.ones(sigma.shape[0]))
    return x / x.sum()


def ridge_closed_form(sigma, lam, phi=1.0):
    """Minimizer of ``phi/2 w'Sw + lam ||w||_2^2`` on the budget."""
    if lam < 0:
        raise ValueError("ridge penalty must be nonnegative")
    sigma = np.asarray(sigma, dtype=np.float64)
    k = sigma.shape[0]
    x = _solve_spd(phi * sigma + 2.0 * lam * np.eye(k), np.ones(k))
    return x / x.sum()
