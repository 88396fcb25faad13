"""Pure-Python/NumPy versions of the compiled kernels in ``_ckernels.pyx``.

Signatures and in-place semantics match the compiled module exactly, so
``pfopt.kernels`` can hand out either one.
"""
import numpy as np


def _pav_blocks(z):
    # stack of [start, end, sum]; merge while the block averages fail to decrease
    blocks = []
    for i, zi in enumerate(z):
        blocks.append([i, i, float(zi)])
        while len(blocks) > 1:
            s0, e0, t0 = blocks[-2]
            s1, e1, t1 = blocks[-1]
            if t0 * (e1 - s1 + 1) > t1 * (e0 - s0 + 1):
                break
            blocks[-2] = [s0, e1, t0 + t1]
            blocks.pop()
    return blocks


def prox_sorted_l1(y, lam):
    y = np.asarray(y, dtype=float)
    absy = np.abs(y)
    order = np.argsort(-absy, kind="stable")
    z = absy[order] - lam
    x_sorted = np.empty_like(z)
    for start, end, total in _pav_blocks(z):
        x_sorted[start:end + 1] = max(total / (end - start + 1), 0.0)
    out = np.empty_like(y)
    out[order] = x_sorted
    return np.sign(y) * out


def sorted_l1_norm(w, lam):
    a = np.abs(np.asarray(w, dtype=float))
    a = a[np.argsort(-a, kind="stable")]
    s = 0.0
    for li, ai in zip(lam, a):
        s += li * ai
    return float(s)


def dual_sorted_l1_norm(a, lam):
    a = np.abs(np.asarray(a, dtype=float))
    a = a[np.argsort(-a, kind="stable")]
    num = np.cumsum(a)
    den = np.cumsum(lam)
    ok = den > 0
    if not ok.any():
        return 0.0
    return float(max(0.0, np.max(num[ok] / den[ok])))


def dual_gap(S, Kw, kb, mu, lam, phi, nonneg, v, alpha):
    """Certified gap for the iterate ``(v, alpha)``.

    The primal point is ``v / e'v`` (budget-feasible). ``alpha`` is scaled into
    the dual-feasible set and the dual function is evaluated through the
    budget-constrained quadratic minimiser ``Kw @ (mu - alpha) + kb``.
    """
    s = float(np.sum(v))
    if abs(s) < 1e-300:
        return np.inf
    wr = v / s
    lam_zero = not np.any(lam != 0.0)
    primal = 0.5 * phi * wr @ S @ wr - mu @ wr
    if not lam_zero:
        primal += sorted_l1_norm(wr, lam)
    if lam_zero:
        at = np.minimum(alpha, 0.0) if nonneg else np.zeros_like(alpha)
    else:
        src = np.maximum(alpha, 0.0) if nonneg else alpha
        at = alpha / max(1.0, dual_sorted_l1_norm(src, lam))
    a = mu - at
    wt = Kw @ a + kb
    dual = 0.5 * phi * wt @ S @ wt - a @ wt
    return float(primal - dual)


def admm_loop(L, S, Kw, kb, mu, lam, phi, eta, nonneg, w, v, alpha, beta, best_v,
              tol, max_iter, check_every):
    from scipy.linalg import solve_triangular

    lam_eta = lam / eta
    lam_zero = not np.any(lam != 0.0)
    best_gap = np.inf
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        rhs = mu - alpha - beta[0] + eta * (v + 1.0)
        x = solve_triangular(L, rhs, lower=True, check_finite=False)
        w[:] = solve_triangular(L, x, lower=True, trans="T", check_finite=False)
        y = w + alpha / eta
        if nonneg:
            y = np.maximum(y, 0.0)
        v[:] = y if lam_zero else prox_sorted_l1(y, lam_eta)
        alpha += eta * (w - v)
        beta[0] += eta * (w.sum() - 1.0)
        if it % check_every == 0 or it == max_iter:
            gap = dual_gap(S, Kw, kb, mu, lam, phi, nonneg, v, alpha)
            if gap < best_gap:
                best_gap = gap
                best_v[:] = v
            if gap <= tol:
                converged = True
                break
    return it, best_gap, converged


def _st(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _solve_gamma(z, diag2, lam):
    lo = z.min() + lam
    hi = z.max() + lam + 1.0 / np.sum(1.0 / diag2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if np.sum(_st(mid - z, lam) / diag2) - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cycode_loop(S, mu, theta, lam, w, tol, max_iter):
    diag = np.diag(S).copy()
    diag2 = 2.0 * diag
    Sw = S @ w
    z = 2.0 * (Sw - diag * w) - theta * mu
    gamma = _solve_gamma(z, diag2, lam)
    converged = False
    sweep = 0
    while sweep < max_iter:
        sweep += 1
        maxchange = 0.0
        for i in range(w.shape[0]):
            zi = 2.0 * (Sw[i] - diag[i] * w[i]) - theta * mu[i]
            x = gamma - zi
            new = (x - lam if x > lam else x + lam if x < -lam else 0.0) / diag2[i]
            d = new - w[i]
            if d != 0.0:
                Sw += d * S[:, i]
                w[i] = new
                maxchange = max(maxchange, abs(d))
        z = 2.0 * (Sw - diag * w) - theta * mu
        gamma = _solve_gamma(z, diag2, lam)
        if maxchange <= tol:
            converged = True
            break
    return sweep, converged, float(gamma)
