"""Moment estimators for return panels."""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ReturnsMatrix:
    """T x k panel of per-period returns with period and asset labels."""

    values: np.ndarray
    dates: Sequence = field(default=None)
    tickers: Sequence = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError("returns must be a nonempty T x k matrix")
        if not np.all(np.isfinite(values)):
            raise DataError("returns contain missing or non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        T, k = values.shape
        dates = list(range(T)) if self.dates is None else list(self.dates)
        tickers = [f"A{i}" for i in range(k)] if self.tickers is None else list(self.tickers)
        if len(dates) != T:
            raise DataError(f"{len(dates)} dates for {T} periods")
        if len(tickers) != k:
            raise DataError(f"{len(tickers)} tickers for {k} assets")
        if any(not (a < b) for a, b in zip(dates, dates[1:])):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "dates", tuple(dates))
        object.__setattr__(self, "tickers", tuple(tickers))

    @property
    def shape(self):
        return self.values.shape

    def window(self, start, stop):
        return ReturnsMatrix(self.values[start:stop], self.dates[start:stop], self.tickers)

    def select(self, columns):
        columns = list(columns)
        return ReturnsMatrix(self.values[:, columns], self.dates,
                             [self.tickers[c] for c in columns])


class CovarianceEstimate(NamedTuple):
    matrix: np.ndarray
    method: str
    shrinkage: Optional[float] = None


def _panel(R):
    X = R.values if isinstance(R, ReturnsMatrix) else np.asarray(R, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("empty returns panel")
    return X


def sample_mean(R):
    """Columnwise arithmetic mean."""
    return _panel(R).mean(axis=0)


def sample_cov(R):
    """Unbiased sample covariance (divisor T - 1)."""
    X = _panel(R)
    if X.shape[0] < 2:
        raise DataError("sample covariance needs at least two periods")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (X.shape[0] - 1)
    return 0.5 * (S + S.T)


def _shrinkage_identity(Xc):
    T, k = Xc.shape
    S = Xc.T @ Xc / T
    mu = np.trace(S) / k
    if mu <= 0:
        raise DataError("degenerate panel: zero total variance")
    F = mu * np.eye(k)
    d2 = np.sum((S - F) ** 2)
    if d2 == 0.0:
        return S, F, 0.0
    b2_bar = (np.sum(np.sum(Xc ** 2, axis=1) ** 2) - T * np.sum(S ** 2)) / T ** 2
    b2 = min(max(b2_bar, 0.0), d2)
    return S, F, b2 / d2


def _shrinkage_constant_correlation(Xc):
    T, k = Xc.shape
    S = Xc.T @ Xc / T
    var = np.diag(S)
    if np.any(var <= 0):
        raise DataError("degenerate panel: an asset has zero variance")
    sd = np.sqrt(var)
    corr = S / np.outer(sd, sd)
    rbar = (corr.sum() - k) / (k * (k - 1)) if k > 1 else 0.0
    F = rbar * np.outer(sd, sd)
    np.fill_diagonal(F, var)
    Y = Xc ** 2
    pi_mat = Y.T @ Y / T - S ** 2
    pi = pi_mat.sum()
    theta = (Xc ** 3).T @ Xc / T - var[:, None] * S
    np.fill_diagonal(theta, 0.0)
    rho = np.trace(pi_mat) + rbar * np.sum(np.outer(1.0 / sd, sd) * theta)
    gamma = np.sum((F - S) ** 2)
    if gamma == 0.0:
        return S, F, 0.0
    kappa = (pi - rho) / gamma
    return S, F, float(min(1.0, max(0.0, kappa / T)))


SHRINKAGE_TARGETS = ("identity", "constant_correlation")


def ledoit_wolf_shrinkage(R, target="identity", return_intensity=False):
    """Ledoit-Wolf shrinkage ``delta * F + (1 - delta) * S``.

    ``S`` is the maximum-likelihood sample covariance (divisor T) and ``F`` the
    structured target: the scaled identity ``tr(S)/k * I`` (default) or the
    constant-correlation matrix. ``delta`` is the analytic optimal intensity,
    clipped to [0, 1].
    """
    X = _panel(R)
    if X.shape[0] < 2:
        raise DataError("shrinkage needs at least two periods")
    Xc = X - X.mean(axis=0)
    if target == "identity":
        S, F, delta = _shrinkage_identity(Xc)
    elif target == "constant_correlation":
        S, F, delta = _shrinkage_constant_correlation(Xc)
    else:
        raise ValueError(f"unknown shrinkage target {target!r}")
    sigma = delta * F + (1.0 - delta) * S
    sigma = 0.5 * (sigma + sigma.T)
    if return_intensity:
        return sigma, float(delta)
    return sigma


def estimate_covariance(R, method="shrinkage", target="identity"):
    """Dispatch to ``sample_cov`` or ``ledoit_wolf_shrinkage``."""
    if method == "sample":
        return CovarianceEstimate(sample_cov(R), "sample")
    if method == "shrinkage":
        sigma, delta = ledoit_wolf_shrinkage(R, target, return_intensity=True)
        return CovarianceEstimate(sigma, "shrinkage", delta)
    raise ValueError(f"unknown covariance method {method!r}")


def condition_number(sigma):
    """Ratio of the largest to the smallest singular value.

    Returns ``inf`` when the matrix is numerically singular, i.e. the smallest
    singular value is below ``max(1e-300, s_max * k * eps)``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    s = np.linalg.svd(sigma, compute_uv=False)
    if s[0] == 0.0:
        raise ValueError("condition number of the zero matrix is undefined")
    floor = max(1e-300, s[0] * max(sigma.shape) * np.finfo(float).eps)
    if s[-1] <= floor:
        return np.inf
    return float(s[0] / s[-1])


def correlation_summary(sigma):
    """Mean, median and quartiles of the off-diagonal correlations."""
    sigma = np.asarray(sigma, dtype=np.float64)
    d = np.diag(sigma)
    if np.any(d <= 0):
        raise DataError("zero-variance asset in covariance matrix")
    sd = np.sqrt(d)
    corr = sigma / np.outer(sd, sd)
    iu = np.triu_indices_from(corr, k=1)
    c = corr[iu]
    if c.size == 0:
        raise DataError("correlation summary needs at least two assets")
    q1, med, q3 = np.quantile(c, [0.25, 0.5, 0.75])
    return {"mean": float(c.mean()), "median": float(med), "q1": float(q1), "q3": float(q3)}
