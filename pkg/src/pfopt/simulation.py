"""Simulated markets, the empirical/actual/oracle risk triple and frontier sweeps.

Randomness: every generator takes an integer seed and draws from
``numpy.random.Generator(numpy.random.Philox(seed))``. Normal variates are
produced by the inverse normal CDF applied to uniforms, so the stream is
reproducible from the seed and the documented draw order alone.
"""
import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import ReturnsMatrix, sample_cov, sample_mean
from .solver import gmv_closed_form
from .sorted_l1 import lambda_sequence, norm_ppf, sorted_l1_norm
from .strategies import GROUP_TOL, extract_groups, gmv_lo, solution_path, threshold_weights

_U_OFFSET = 2.0 ** -54

HIDDEN_LOADINGS = np.array([[0.77, 0.64, 0.0], [0.9, 0.0, -0.42], [0.0, 0.31, 0.64]])
HIDDEN_NOISE = 0.05

CAL_MU_B = np.array([-0.0679, 0.1505, -0.0203])
CAL_SIGMA_B = np.array([[0.0062, -0.0016, 0.0020],
                        [-0.0016, 0.0109, 0.0012],
                        [0.0020, 0.0012, 0.0173]])
CAL_MU_F = np.array([0.00022, 0.00012, -0.00018])
CAL_SIGMA_F = np.array([[0.000157, 0.000015, 0.000028],
                        [0.000015, 0.000033, -0.000016],
                        [0.000028, -0.000016, 0.000034]])
CAL_NOISE_SHAPE = 7.2609
CAL_NOISE_SCALE = 0.0028

# default lambda_1 grids (lo, hi, n)
GRIDS = {
    "hidden-factor": (1e-5, 1e2, 100),
    "calibrated-minvar": (1e-8, 10 ** -1.5, 100),
    "calibrated-meanvar": (1e-4, 10 ** -1.5, 100),
    "empirical": (10 ** -7.5, 1e1, 100),
}


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def standard_normal(rng, size):
    """Standard normals by inverse CDF of uniforms on the open unit interval."""
    return norm_ppf(rng.random(size) + _U_OFFSET)


def mvn(rng, mean, cov, n):
    """``n`` rows drawn from N(mean, cov) via the Cholesky factor."""
    L = np.linalg.cholesky(cov)
    return standard_normal(rng, (n, len(mean))) @ L.T + mean


@dataclass(frozen=True)
class FactorModelSpec:
    """R = F B + eps with F ~ N(mu_F, Sigma_F) and independent asset noise."""

    B: np.ndarray
    mu_F: np.ndarray
    sigma_F: np.ndarray
    noise_var: np.ndarray
    t: int
    seed: Optional[int] = None

    def __post_init__(self):
        r, k = np.shape(self.B)
        if r > k:
            raise ValueError("more factors than assets")
        if np.any(np.asarray(self.noise_var) <= 0):
            raise ValueError("noise variances must be positive")
        if np.linalg.eigvalsh(self.sigma_F)[0] < -1e-15:
            raise ValueError("factor covariance is not PSD")

    @property
    def sigma_true(self):
        return self.B.T @ self.sigma_F @ self.B + np.diag(self.noise_var)


@dataclass(frozen=True)
class SimulatedMarket:
    R: ReturnsMatrix
    sigma_true: np.ndarray
    mu_true: np.ndarray
    spec: Optional[FactorModelSpec] = None
    name: str = ""


def hidden_factor_loadings(copies=4):
    """3 x (3 * copies) loadings: each factor profile repeated for a block of assets."""
    return np.repeat(HIDDEN_LOADINGS, copies, axis=0).T.copy()


def hidden_factor_market(seed, t=50, copies=4):
    """Three latent factors, twelve assets in three blocks of four.

    Draw order: factors (t x 3), then noise (t x k).
    """
    rng = make_rng(seed)
    B = hidden_factor_loadings(copies)
    r, k = B.shape
    F = standard_normal(rng, (t, r))
    eps = np.sqrt(HIDDEN_NOISE) * standard_normal(rng, (t, k))
    spec = FactorModelSpec(B, np.zeros(r), np.eye(r), np.full(k, HIDDEN_NOISE), t, seed)
    sigma = B.T @ B + HIDDEN_NOISE * np.eye(k)
    return SimulatedMarket(ReturnsMatrix(F @ B + eps), sigma, np.zeros(k), spec, "hidden-factor")


def calibrated_market(seed, k=500, t=500):
    """Three-factor market with loadings and factors drawn from fixed normals.

    Draw order: loadings (k x 3), noise variances (k, gamma), factors (t x 3),
    noise (t x k).
    """
    rng = make_rng(seed)
    B = mvn(rng, CAL_MU_B, CAL_SIGMA_B, k).T
    noise = rng.gamma(CAL_NOISE_SHAPE, CAL_NOISE_SCALE, size=k)
    F = mvn(rng, CAL_MU_F, CAL_SIGMA_F, t)
    eps = standard_normal(rng, (t, k)) * np.sqrt(noise)
    spec = FactorModelSpec(B, CAL_MU_F.copy(), CAL_SIGMA_F.copy(), noise, t, seed)
    return SimulatedMarket(ReturnsMatrix(F @ B + eps), spec.sigma_true, B.T @ CAL_MU_F,
                           spec, "calibrated")


def constant_corr_sigma(rho, p):
    if p < 1:
        raise ValueError("p must be at least 1")
    lo = -1.0 / (p - 1) if p > 1 else -np.inf
    if not lo < rho < 1:
        raise ValueError(f"rho={rho} outside the PSD range ({lo}, 1)")
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def constant_corr_market(seed, rho, n, p):
    """``n`` i.i.d. N(0, S) rows with unit variances and common correlation ``rho``."""
    sigma = constant_corr_sigma(rho, p)
    R = mvn(make_rng(seed), np.zeros(p), sigma, n)
    return SimulatedMarket(ReturnsMatrix(R), sigma, np.zeros(p), None, "constant-correlation")


def risk_triple(w_hat, w_opt, sigma_true, sigma_hat):
    """Empirical ``w_hat' S_hat w_hat``, actual ``w_hat' S w_hat``, oracle ``w_opt' S w_opt``."""
    w_hat = np.asarray(w_hat, dtype=float)
    w_opt = np.asarray(w_opt, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    k = sigma_true.shape[0]
    if w_hat.shape != (k,) or w_opt.shape != (k,) or sigma_hat.shape != (k, k):
        raise ValueError("dimension mismatch")
    return {"empirical": float(w_hat @ sigma_hat @ w_hat),
            "actual": float(w_hat @ sigma_true @ w_hat),
            "oracle": float(w_opt @ sigma_true @ w_opt)}


def shorting_amount(w):
    """Gross short position ``sum_i max(-w_i, 0)``."""
    w = np.asarray(w, dtype=float)
    return float(np.maximum(-w, 0.0).sum())


def verify_risk_bounds(w_hat, w_opt, sigma_true, sigma_hat, lam):
    """Check the three estimation-error bounds on the risk triple.

    With ``d = max|S_hat - S|`` and ``c = max(rho(w_hat), rho(w_opt)) / lam_k``:
    actual vs oracle within ``2 c^2 d``; actual vs empirical and oracle vs
    empirical within ``c^2 d``. Returns a dict with ``applicable``, ``passed``
    and the slack of each inequality (bound minus left side).
    """
    lam = np.asarray(lam, dtype=float)
    d = float(np.max(np.abs(np.asarray(sigma_hat) - np.asarray(sigma_true))))
    if not lam[-1] > 0:
        return {"applicable": False, "passed": None, "sup_norm": d}
    rt = risk_triple(w_hat, w_opt, sigma_true, sigma_hat)
    c = max(sorted_l1_norm(w_hat, lam), sorted_l1_norm(w_opt, lam)) / lam[-1]
    b = c * c * d
    lhs = (abs(rt["actual"] - rt["oracle"]),
           abs(rt["actual"] - rt["empirical"]),
           abs(rt["oracle"] - rt["empirical"]))
    slack = (2 * b - lhs[0], b - lhs[1], b - lhs[2])
    return {"applicable": True, "passed": all(s >= 0 for s in slack), "sup_norm": d,
            "c": c, "lhs": lhs, "slack": slack, **rt}


@dataclass
class FrontierProfile:
    """Per-grid-point results of a frontier sweep (estimated and oracle problems)."""

    scales: np.ndarray
    weights: np.ndarray
    oracle_weights: np.ndarray
    empirical: np.ndarray
    actual: np.ndarray
    oracle: np.ndarray
    converged: np.ndarray
    references: dict = field(default_factory=dict)
    group_tol: float = GROUP_TOL
    family: str = "slope"
    penalties: Optional[np.ndarray] = None

    @property
    def k(self):
        return self.weights.shape[1]

    def active_counts(self, oracle=False):
        W = self.oracle_weights if oracle else self.weights
        return np.count_nonzero(W, axis=1)

    def group_counts(self, oracle=False):
        W = self.oracle_weights if oracle else self.weights
        return np.array([len(extract_groups(w, self.group_tol)) for w in W])

    def groups(self, i, oracle=False):
        W = self.oracle_weights if oracle else self.weights
        return extract_groups(W[i], self.group_tol)

    def shorting(self, oracle=False):
        W = self.oracle_weights if oracle else self.weights
        return np.array([shorting_amount(w) for w in W])

    def long_only(self):
        return np.all(self.weights >= -1e-9, axis=1)

    def ew_reached(self, tol=1e-3):
        return np.max(np.abs(self.weights - 1.0 / self.k), axis=1) <= tol


def _sweep(sigma, mu, grid, family, nonneg, phi, q, tol, max_iter):
    path, W = solution_path(sigma, grid, family, nonneg, mu, phi, q, threshold=0.0, tol=tol,
                            max_iter=max_iter, raw=True)
    return W, path.converged


def frontier_sweep(market, grid, family="slope", nonneg=False, use_mu=False, phi=1.0,
                   q=0.01, tol=1e-7, max_iter=50_000, threshold=0.0, threads=1):
    """Solve the estimated and oracle problems along ``grid``.

    The estimated problem uses the sample covariance (and sample mean when
    ``use_mu``); the oracle problem uses the true moments. References GMV,
    GMV-LO and EW are computed for both. Weights are thresholded when
    ``threshold > 0``.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    S_hat = sample_cov(market.R)
    S = market.sigma_true
    k = S.shape[0]
    mu_hat = sample_mean(market.R) if use_mu else np.zeros(k)
    mu = market.mu_true if use_mu else np.zeros(k)
    jobs = [(S_hat, mu_hat), (S, mu)]
    run = lambda a: _sweep(a[0], a[1], grid, family, nonneg, phi, q, tol, max_iter)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            (W, ok), (Wo, oko) = list(ex.map(run, jobs))
    else:
        (W, ok), (Wo, oko) = [run(a) for a in jobs]
    if threshold > 0:
        W = np.array([threshold_weights(w, threshold) for w in W])
        Wo = np.array([threshold_weights(w, threshold) for w in Wo])
    emp = np.einsum("ij,jk,ik->i", W, S_hat, W)
    act = np.einsum("ij,jk,ik->i", W, S, W)
    orc = np.einsum("ij,jk,ik->i", Wo, S, Wo)
    refs = {}
    ew = np.full(k, 1.0 / k)
    for name, fn in (("GMV", gmv_closed_form), ("GMV-LO", gmv_lo), ("EW", lambda s: ew)):
        wo = fn(S)
        try:
            w = fn(S_hat)
        except ValueError:
            # singular estimate (T <= k): the unconstrained minimizer is not unique
            refs[name] = {"weights": None, "oracle_weights": wo, "empirical": None,
                          "actual": None, "oracle": float(wo @ S @ wo)}
            continue
        refs[name] = {"weights": w, "oracle_weights": wo}
        refs[name].update(risk_triple(w, wo, S, S_hat))
    pen = np.array([lambda_sequence(k, lam, family, q) for lam in grid])
    return FrontierProfile(grid.copy(), W, Wo, emp, act, orc, ok & oko, refs,
                           family=family, penalties=pen)


FRONTIER_COLUMNS = ("kind", "index", "lambda1", "empirical", "actual", "oracle",
                    "active", "groups", "oracle_active", "oracle_groups",
                    "shorting", "oracle_shorting", "converged")


def frontier_rows(profile):
    """Rows (tuples in ``FRONTIER_COLUMNS`` order): grid points, then GMV, GMV-LO, EW."""
    act, grp = profile.active_counts(), profile.group_counts()
    oact, ogrp = profile.active_counts(True), profile.group_counts(True)
    sh, osh = profile.shorting(), profile.shorting(True)
    rows = []
    for i, lam in enumerate(profile.scales):
        rows.append(("grid", i, float(lam), float(profile.empirical[i]),
                     float(profile.actual[i]), float(profile.oracle[i]), int(act[i]),
                     int(grp[i]), int(oact[i]), int(ogrp[i]), float(sh[i]), float(osh[i]),
                     int(bool(profile.converged[i]))))
    for name in ("GMV", "GMV-LO", "EW"):
        ref = profile.references[name]
        w, wo = ref["weights"], ref["oracle_weights"]
        if w is None:
            est = ("", "", "", "")
        else:
            est = (ref["empirical"], ref["actual"], int(np.count_nonzero(w)),
                   len(extract_groups(w, profile.group_tol)))
        rows.append((name, "", "") + est[:2] + (ref["oracle"],) + est[2:]
                    + (int(np.count_nonzero(wo)), len(extract_groups(wo, profile.group_tol)),
                       "" if w is None else shorting_amount(w), shorting_amount(wo), 1))
    return rows


def fmt(x):
    """Shortest round-trip decimal for floats; ``str`` otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_frontier_csv(profile, fh=None):
    """Write the frontier table; returns the text when ``fh`` is None."""
    out = fh or io.StringIO()
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(FRONTIER_COLUMNS)
    for row in frontier_rows(profile):
        wr.writerow([fmt(x) for x in row])
    return out.getvalue() if fh is None else None
