"""Portfolio constructions, penalty-selection rules, thresholding and grouping."""
from dataclasses import dataclass, field
from typing import List, Mapping, Optional

import numpy as np

from .errors import NonConvergenceError
from .estimators import ReturnsMatrix, ledoit_wolf_shrinkage
from .solver import (FactoredOperator, SolverConfig, SolverProblem, admm_solve, auto_eta,
                     check_psd, gmv_closed_form, path_eta, ridge_closed_form)
from .sorted_l1 import lambda_sequence

KINDS = ("EW", "GMV", "GMV-LO", "ERC", "RIDGE", "LASSO", "SLOPE", "SLOPE-LO", "SLOPE-MV")

# per-kind selection parameters and their defaults
_PARAMS = {
    "EW": {}, "GMV": {}, "GMV-LO": {}, "ERC": {},
    "RIDGE": {"markers": 6},
    "LASSO": {"target_active_frac": 0.3},
    "SLOPE": {"target_active_frac": 0.3},
    "SLOPE-LO": {"markers": 6},
    "SLOPE-MV": {"markers": 6},
}

DEFAULT_THRESHOLD = 5e-4
GROUP_TOL = 1e-6
EW_TOL = 1e-3
LONG_TOL = 1e-9


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {KINDS}")
        allowed = _PARAMS[self.kind]
        extra = set(self.params) - set(allowed)
        if extra:
            raise ValueError(f"{self.kind} takes no parameter(s) {sorted(extra)}")
        merged = dict(allowed)
        merged.update(self.params)
        frac = merged.get("target_active_frac")
        if frac is not None and not 0 < frac <= 1:
            raise ValueError("target_active_frac must lie in (0, 1]")
        if merged.get("markers", 2) < 2:
            raise ValueError("markers must be at least 2")
        object.__setattr__(self, "params", merged)


@dataclass
class Allocation:
    weights: np.ndarray
    active_set: List[int]
    groups: List[List[int]]
    lambda_used: Optional[float] = None
    flags: List[str] = field(default_factory=list)

    @classmethod
    def from_weights(cls, w, lambda_used=None, flags=(), group_tol=GROUP_TOL):
        w = np.asarray(w, dtype=np.float64)
        return cls(weights=w, active_set=[int(i) for i in np.flatnonzero(w)],
                   groups=extract_groups(w, group_tol), lambda_used=lambda_used,
                   flags=list(flags))


def equal_weight(k):
    if k < 1:
        raise ValueError("k must be at least 1")
    return Allocation.from_weights(np.full(k, 1.0 / k))


def threshold_weights(w, threshold=DEFAULT_THRESHOLD):
    """Zero entries with ``|w_i| < threshold`` and rescale survivors to the budget."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    w = np.asarray(w, dtype=np.float64)
    if threshold == 0:
        return w.copy()
    keep = np.abs(w) >= threshold
    if not keep.any():
        raise ValueError("all weights fall below the threshold")
    out = np.where(keep, w, 0.0)
    s = out.sum()
    if abs(s) < 1e-6:
        raise ValueError("surviving weights sum to (almost) zero; cannot restore the budget")
    return out / s


def extract_groups(w, tol=GROUP_TOL):
    """Partition nonzero entries into classes of (nearly) equal magnitude.

    Greedy on ``|w|`` sorted in decreasing order: an entry joins the current
    group while it is within ``tol`` of the group's largest magnitude, so all
    members differ pairwise by at most ``tol``. Groups are ordered by
    decreasing magnitude; indices inside a group are ascending.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = np.abs(np.asarray(w, dtype=np.float64))
    order = [int(i) for i in np.argsort(-a, kind="stable") if a[i] > 0]
    groups = []
    top = None
    for i in order:
        if top is None or top - a[i] > tol:
            groups.append([i])
            top = a[i]
        else:
            groups[-1].append(i)
    return [sorted(g) for g in groups]


# -- solution paths and selection rules ------------------------------------

@dataclass
class SolutionPath:
    """Thresholded weights along an increasing penalty grid."""

    scales: np.ndarray
    weights: np.ndarray
    converged: np.ndarray
    group_tol: float = GROUP_TOL

    @property
    def k(self):
        return self.weights.shape[1]

    def active_counts(self):
        return np.count_nonzero(self.weights, axis=1)

    def group_counts(self):
        return np.array([len(extract_groups(w, self.group_tol)) for w in self.weights])

    def long_only(self):
        return np.all(self.weights >= -LONG_TOL, axis=1)

    def ew_reached(self, tol=EW_TOL):
        return np.max(np.abs(self.weights - 1.0 / self.k), axis=1) <= tol


def _first(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def _markers(start, end, n):
    return [int(np.floor(x + 0.5)) for x in np.linspace(start, end, n)]


def select_lambda_sparse(frontier, target_active_frac=0.3):
    """Grid index whose active fraction is nearest the target, before long-only onset.

    Returns ``(index, flagged)``. Ties go to the smaller penalty. When no point
    precedes the long-only onset the first grid point is returned, flagged.
    """
    if not 0 < target_active_frac <= 1:
        raise ValueError("target_active_frac must lie in (0, 1]")
    frac = np.asarray(frontier.active_counts(), dtype=float) / frontier.k
    if frac.size == 0:
        raise ValueError("empty frontier")
    onset = _first(frontier.long_only())
    stop = frac.size if onset is None else onset
    if stop == 0:
        return 0, True
    dist = np.abs(frac[:stop] - target_active_frac)
    best = float(dist.min())
    return int(np.flatnonzero(dist <= best + 1e-12)[0]), False


def select_lambda_ridge(frontier, markers=6, ew_tol=EW_TOL):
    """Second-to-last of ``markers`` index-equispaced points from the start to EW.

    Returns ``(index, flagged)``; flagged when EW is never reached (last grid
    index returned) or already holds at the first point.
    """
    n = frontier.weights.shape[0]
    end = _first(frontier.ew_reached(ew_tol))
    if end is None:
        return n - 1, True
    if end == 0:
        return 0, True
    return _markers(0, end, markers)[-2], False


def argmax_first(values):
    """Index of the first maximal entry."""
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.max())[0])


def select_lambda_slope_lo(frontier, markers=6, ew_tol=EW_TOL):
    """Marker with the most groups between the first long-only point and EW.

    Returns ``(index, flagged)``. Ties go to the smaller penalty.
    """
    n = frontier.weights.shape[0]
    start = _first(frontier.long_only())
    if start is None:
        return n - 1, True
    ew = frontier.ew_reached(ew_tol)
    end = _first(ew[start:])
    if end is None:
        return n - 1, True
    end += start
    if end == start:
        return start, True
    idx = _markers(start, end, markers)
    counts = [len(extract_groups(frontier.weights[i], frontier.group_tol)) for i in idx]
    return idx[argmax_first(counts)], False


def solver_config_for(sigma, phi=1.0, tol=1e-7, max_iter=50_000, lam=None, eta=None):
    """ADMM settings matched to the scale of the problem.

    The problem is scale-covariant: multiplying sigma, mu and the penalty by
    ``c`` multiplies the objective by ``c``. ``tol`` is therefore taken
    relative to the objective scale ``phi tr(S)/k + mean(lam)``, and ``eta``
    defaults to ``phi tr(S)/k``.
    """
    scale = auto_eta(sigma, phi)
    if lam is not None:
        scale += float(np.mean(lam))
    eta = auto_eta(sigma, phi) if eta is None else eta
    return SolverConfig(eta=eta, tol=tol * scale, max_iter=max_iter)


def solution_path(sigma, grid, family="slope", nonneg=False, mu=None, phi=1.0, q=0.01,
                  threshold=DEFAULT_THRESHOLD, tol=1e-7, max_iter=50_000, raw=False):
    """Warm-started solves along ``grid`` (penalty scale lambda_1).

    ``family`` is "slope", "lasso" or "ridge". Returns a SolutionPath of
    thresholded weights, or ``(path, raw_weights)`` when ``raw`` is set.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    k = sigma.shape[0]
    W = np.empty((grid.size, k))
    ok = np.ones(grid.size, dtype=bool)
    if family == "ridge":
        for j, lam in enumerate(grid):
            W[j] = ridge_closed_form(sigma, lam, phi)
    else:
        ev = check_psd(sigma)
        base = SolverProblem(sigma, mu=mu, phi=phi, nonneg=nonneg)
        # a mean term makes weakly penalized solutions highly leveraged, which
        # needs a smaller augmented-Lagrangian parameter to converge quickly
        slope = 10.0 if np.any(base.mu) else 300.0
        ops = {}
        state = None
        for j, lam1 in enumerate(grid):
            lam = lambda_sequence(k, lam1, family, q)
            eta = path_eta(lam1, ev, phi, slope)
            if eta not in ops:
                ops[eta] = FactoredOperator(sigma, phi, eta, check=False)
            cfg = solver_config_for(sigma, phi, tol, max_iter, lam, eta)
            sol = admm_solve(base.with_penalty(lam),
                             SolverConfig(eta, cfg.tol, max_iter, state), ops[eta])
            W[j] = sol.w
            ok[j] = sol.converged
            state = sol.state
    Wt = np.array([threshold_weights(w, threshold) for w in W])
    path = SolutionPath(grid.copy(), Wt, ok)
    return (path, W) if raw else path


# -- individual strategies -------------------------------------------------

def gmv_lo(sigma, tol=1e-12, max_iter=200_000):
    """Long-only minimum-variance weights (ADMM, zero penalty)."""
    cfg = solver_config_for(sigma, 1.0, tol, max_iter)
    sol = admm_solve(SolverProblem(sigma, nonneg=True), cfg)
    if not sol.converged:
        raise NonConvergenceError(f"GMV-LO did not converge (gap {sol.gap:.3e})")
    return np.maximum(sol.w, 0.0) / np.maximum(sol.w, 0.0).sum()


def _erc_objective(w, sigma):
    q = sigma @ w
    s = w @ q
    r = w * q / s
    return float(np.sum((r - 1.0 / w.size) ** 2))


def _erc_grad(w, sigma):
    q = sigma @ w
    s = w @ q
    r = w * q / s
    d = 2.0 * (r - 1.0 / w.size)
    return (q * d + sigma @ (w * d)) / s - (2.0 / s) * q * (r @ d)


def project_simplex(x):
    """Euclidean projection onto ``{w >= 0, sum w = 1}``."""
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, x.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    return np.maximum(x - css[rho] / (rho + 1), 0.0)


def _erc_newton(sigma, tol=1e-15, max_iter=100):
    # minimize y'Sy/2 - (1/k) sum log y; its minimizer normalized is the ERC portfolio
    k = sigma.shape[0]
    y = 1.0 / np.sqrt(np.diag(sigma))
    y /= np.sqrt(y @ sigma @ y) * np.sqrt(k)
    f = lambda z: 0.5 * z @ sigma @ z - np.sum(np.log(z)) / k  # noqa: E731
    for _ in range(max_iter):
        g = sigma @ y - 1.0 / (k * y)
        H = sigma + np.diag(1.0 / (k * y * y))
        step = np.linalg.solve(H, g)
        dec = g @ step
        if dec < tol:
            break
        t = 1.0
        while np.any(y - t * step <= 0) or f(y - t * step) > f(y) - 0.25 * t * dec:
            t *= 0.5
            if t < 1e-12:
                break
        y = y - t * step
    return y / y.sum()


def _erc_pgd(w, sigma, max_iter=5000, tol=1e-16):
    fw = _erc_objective(w, sigma)
    step = 1.0
    for _ in range(max_iter):
        if fw <= tol:
            break
        g = _erc_grad(w, sigma)
        while True:
            cand = project_simplex(w - step * g)
            fc = _erc_objective(cand, sigma)
            if fc <= fw - 1e-4 * (g @ (w - cand)) or step < 1e-14:
                break
            step *= 0.5
        if fc >= fw:
            break
        w, fw = cand, fc
        step *= 2.0
    return w, fw


def erc_solve(sigma, config=None, max_iter=5000):
    """Equal-risk-contribution portfolio.

    Least-squares risk-budget objective minimized by projected gradient with
    backtracking from three starts (log-barrier Newton point, equal weight,
    inverse volatility); the lowest objective wins and must be <= 1e-12.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    k = sigma.shape[0]
    if np.any(np.diag(sigma) <= 0):
        raise ValueError("ERC needs strictly positive variances")
    iv = 1.0 / np.sqrt(np.diag(sigma))
    starts = [_erc_newton(sigma), np.full(k, 1.0 / k), iv / iv.sum()]
    best_w, best_f = None, np.inf
    for w0 in starts:
        w, fw = _erc_pgd(w0, sigma, max_iter)
        if fw < best_f:
            best_w, best_f = w, fw
    if best_f > 1e-12:
        raise NonConvergenceError(f"ERC objective {best_f:.3e} above 1e-12")
    return Allocation.from_weights(best_w)


def risk_contributions(w, sigma):
    """Relative risk contributions ``w_i (S w)_i / w'Sw``."""
    q = sigma @ w
    return w * q / (w @ q)


def slope_mv_assets(R, groups):
    """Minimum-sample-variance member of each group (ties to the lower index)."""
    if not groups:
        raise ValueError("empty group list")
    X = R.values if isinstance(R, ReturnsMatrix) else np.asarray(R, dtype=np.float64)
    var = X.var(axis=0, ddof=1)
    out = []
    for g in groups:
        g = list(g)
        if not g:
            raise ValueError("empty group")
        out.append(g[int(np.argmin(var[g]))])
    return sorted(out)


def gmv_lo_subset(sigma, assets, k=None):
    """GMV-LO on the listed assets, embedded in a length-``k`` vector."""
    sigma = np.asarray(sigma, dtype=np.float64)
    k = sigma.shape[0] if k is None else k
    assets = list(assets)
    w = np.zeros(k)
    if len(assets) == 1:
        w[assets[0]] = 1.0
    else:
        w[assets] = gmv_lo(sigma[np.ix_(assets, assets)])
    return w


def slope_mv(R, groups, sigma=None, threshold=DEFAULT_THRESHOLD):
    """Long-only minimum variance over one representative per group.

    ``sigma`` defaults to the shrinkage estimate of ``R``.
    """
    assets = slope_mv_assets(R, groups)
    if sigma is None:
        sigma = ledoit_wolf_shrinkage(R)
    w = threshold_weights(gmv_lo_subset(sigma, assets), threshold)
    return Allocation.from_weights(w)


def slope_mv_groups(sigma, grid, q=0.01, markers=6, threshold=DEFAULT_THRESHOLD):
    """Groups of the SLOPE-LO solution chosen by the SLOPE-LO rule on ``sigma``."""
    path = solution_path(sigma, grid, "slope", nonneg=True, q=q, threshold=threshold)
    idx, flagged = select_lambda_slope_lo(path, markers)
    return extract_groups(path.weights[idx]), float(path.scales[idx]), flagged


def allocate(spec, sigma, mu=None, R=None, grid=None, phi=1.0, q=0.01,
             threshold=DEFAULT_THRESHOLD, mv_assets=None):
    """Thresholded allocation for one strategy.

    ``grid`` (increasing penalty scales) is required by the penalized kinds.
    SLOPE-MV uses ``mv_assets`` when given (assets fixed in advance);
    otherwise it identifies groups from ``sigma`` and representatives from ``R``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    k = sigma.shape[0]
    kind = spec.kind
    p = spec.params
    if kind == "EW":
        return equal_weight(k)
    if kind == "GMV":
        return Allocation.from_weights(threshold_weights(gmv_closed_form(sigma), threshold))
    if kind == "GMV-LO":
        return Allocation.from_weights(threshold_weights(gmv_lo(sigma), threshold))
    if kind == "ERC":
        alloc = erc_solve(sigma)
        return Allocation.from_weights(threshold_weights(alloc.weights, threshold))
    if kind == "SLOPE-MV":
        flags = []
        lam = None
        if mv_assets is None:
            if R is None or grid is None:
                raise ValueError("SLOPE-MV needs a returns panel and a grid")
            groups, lam, flagged = slope_mv_groups(sigma, grid, q, p["markers"], threshold)
            if flagged:
                flags.append("selection-fallback")
            mv_assets = slope_mv_assets(R, groups)
        w = threshold_weights(gmv_lo_subset(sigma, mv_assets), threshold)
        return Allocation.from_weights(w, lam, flags)
    if grid is None:
        raise ValueError(f"{kind} needs a penalty grid")
    if kind == "RIDGE":
        path = solution_path(sigma, grid, "ridge", phi=phi, threshold=threshold)
        idx, flagged = select_lambda_ridge(path, p["markers"])
    elif kind in ("LASSO", "SLOPE"):
        family = "lasso" if kind == "LASSO" else "slope"
        path = solution_path(sigma, grid, family, mu=mu, phi=phi, q=q, threshold=threshold)
        idx, flagged = select_lambda_sparse(path, p["target_active_frac"])
    else:  # SLOPE-LO
        path = solution_path(sigma, grid, "slope", nonneg=True, mu=mu, phi=phi, q=q,
                             threshold=threshold)
        idx, flagged = select_lambda_slope_lo(path, p["markers"])
    flags = ["selection-fallback"] if flagged else []
    if not path.converged[idx]:
        flags.append("nonconverged")
    return Allocation.from_weights(path.weights[idx], float(path.scales[idx]), flags)
