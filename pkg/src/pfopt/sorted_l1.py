"""Sorted-L1 norm, its proximal operator and dual norm, and lambda sequences."""
import math

import numpy as np
from scipy.special import ndtri

from . import kernels

__all__ = [
    "as_lambda",
    "sorted_l1_norm",
    "prox_sorted_l1",
    "dual_sorted_l1_norm",
    "bh_lambda_sequence",
    "lambda_sequence",
    "log_grid",
    "norm_ppf",
]


def norm_ppf(p):
    """Standard-normal quantile function (inverse CDF)."""
    return ndtri(p)


def as_lambda(lam, k=None):
    """Validate a penalty sequence and return it as a float64 array.

    Raises ``ValueError`` if the sequence is increasing anywhere, has a
    negative tail, is non-finite, or its length differs from ``k``.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    if lam.ndim != 1:
        raise ValueError("lambda sequence must be one-dimensional")
    if k is not None and lam.shape[0] != k:
        raise ValueError(f"lambda sequence has length {lam.shape[0]}, expected {k}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda sequence must be finite")
    if lam.size and lam[-1] < 0:
        raise ValueError("lambda sequence must be nonnegative")
    if np.any(np.diff(lam) > 0):
        raise ValueError("lambda sequence must be nonincreasing")
    return lam


def _vector(x, k=None, name="vector"):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if k is not None and x.shape[0] != k:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {k}")
    return x


def sorted_l1_norm(w, lam):
    """Return ``sum_i lam_i * |w|_(i)`` with ``|w|_(1) >= |w|_(2) >= ...``.

    Magnitudes sharing a penalty value are summed exactly with ``math.fsum``
    before the single multiplication by that value, so a constant sequence on
    a long-only budget-feasible vector returns the constant itself to within
    one ulp.
    """
    w = _vector(w, name="w")
    lam = as_lambda(lam, w.shape[0])
    a = np.sort(np.abs(w))[::-1]
    cuts = np.flatnonzero(np.diff(lam)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [lam.size]))
    return math.fsum(float(lam[i]) * math.fsum(a[i:j]) for i, j in zip(starts, ends))


def prox_sorted_l1(y, lam):
    """Proximal operator ``argmin_v 0.5 ||v - y||^2 + sorted_l1_norm(v, lam)``.

    Stack-based pool-adjacent-violators on ``|y|`` sorted in decreasing
    order (stable, ties by index), clipped at zero, with signs restored.
    """
    y = _vector(y, name="y")
    lam = as_lambda(lam, y.shape[0])
    return kernels.prox_sorted_l1(y, lam)


def dual_sorted_l1_norm(a, lam):
    """Dual norm: ``max_j sum_{i<=j} |a|_(i) / sum_{i<=j} lam_i``.

    ``a`` lies in the dual unit ball iff the value is at most one.
    """
    a = _vector(a, name="a")
    lam = as_lambda(lam, a.shape[0])
    if not np.any(lam > 0):
        raise ValueError("dual norm undefined for an all-zero lambda sequence")
    return float(kernels.dual_sorted_l1_norm(a, lam))


def bh_lambda_sequence(k, q=0.01, scale=1.0):
    """Normal-quantile sequence ``scale * Phi^-1(1 - i q / (2k))``, i = 1..k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    p = 1.0 - np.arange(1, k + 1) * q / (2.0 * k)
    if not (0.0 < q and np.all((p > 0.0) & (p < 1.0))):
        raise ValueError("quantile arguments must lie strictly inside (0, 1)")
    return scale * norm_ppf(p)


def lambda_sequence(k, lambda1, family="slope", q=0.01):
    """Penalty vector of length ``k`` whose first entry equals ``lambda1``.

    ``family`` is ``"slope"`` (normal-quantile shape), ``"lasso"`` (constant)
    or ``"none"`` (all zeros).
    """
    if family == "none":
        return np.zeros(k)
    if family == "lasso":
        return np.full(k, float(lambda1))
    if family == "slope":
        base = bh_lambda_sequence(k, q, 1.0)
        return bh_lambda_sequence(k, q, float(lambda1) / base[0])
    raise ValueError(f"unknown penalty family {family!r}")


def log_grid(lo, hi, n):
    """``n`` log-equispaced values from ``lo`` to ``hi`` inclusive."""
    if not (lo > 0 and hi > 0):
        raise ValueError("grid bounds must be positive")
    if not lo < hi:
        raise ValueError("grid requires lo < hi")
    if n < 2:
        raise ValueError("grid needs at least two points")
    grid = np.logspace(math.log10(lo), math.log10(hi), n)
    grid[0], grid[-1] = lo, hi
    return grid
