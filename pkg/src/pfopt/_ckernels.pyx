# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: sorted-L1 prox, dual norm, ADMM iterations, CyCoDe sweeps.

Every routine mirrors a function of the same name in ``_pykernels``; the two
are checked against each other in the test suite. All loops release the GIL.
"""
from libc.math cimport fabs, sqrt, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np


cdef void _argsort_desc(const double* key, Py_ssize_t* idx, Py_ssize_t* tmp,
                        Py_ssize_t n) noexcept nogil:
    # bottom-up merge sort, stable, descending by key
    cdef Py_ssize_t i, width, lo, mid, hi, a, b, out
    cdef Py_ssize_t* src = idx
    cdef Py_ssize_t* dst = tmp
    cdef Py_ssize_t* swap
    for i in range(n):
        idx[i] = i
    width = 1
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            a = lo
            b = mid
            out = lo
            while a < mid and b < hi:
                if key[src[a]] >= key[src[b]]:
                    dst[out] = src[a]
                    a += 1
                else:
                    dst[out] = src[b]
                    b += 1
                out += 1
            while a < mid:
                dst[out] = src[a]
                a += 1
                out += 1
            while b < hi:
                dst[out] = src[b]
                b += 1
                out += 1
            lo += 2 * width
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != idx:
        for i in range(n):
            idx[i] = src[i]


cdef struct Work:
    Py_ssize_t* idx
    Py_ssize_t* tmp
    Py_ssize_t* bstart
    Py_ssize_t* bend
    double* absy
    double* bsum


cdef int _work_alloc(Work* wk, Py_ssize_t n) noexcept nogil:
    wk.idx = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    wk.tmp = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    wk.bstart = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    wk.bend = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    wk.absy = <double*> malloc(n * sizeof(double))
    wk.bsum = <double*> malloc(n * sizeof(double))
    if (wk.idx == NULL or wk.tmp == NULL or wk.bstart == NULL or wk.bend == NULL
            or wk.absy == NULL or wk.bsum == NULL):
        return -1
    return 0


cdef void _work_free(Work* wk) noexcept nogil:
    free(wk.idx)
    free(wk.tmp)
    free(wk.bstart)
    free(wk.bend)
    free(wk.absy)
    free(wk.bsum)


cdef void _prox(const double* y, const double* lam, double* out, Py_ssize_t n,
                Work* wk) noexcept nogil:
    cdef Py_ssize_t i, j, t, ln0, ln1
    cdef double val
    for i in range(n):
        wk.absy[i] = fabs(y[i])
    _argsort_desc(wk.absy, wk.idx, wk.tmp, n)
    t = -1
    for i in range(n):
        t += 1
        wk.bstart[t] = i
        wk.bend[t] = i
        wk.bsum[t] = wk.absy[wk.idx[i]] - lam[i]
        while t >= 1:
            ln0 = wk.bend[t - 1] - wk.bstart[t - 1] + 1
            ln1 = wk.bend[t] - wk.bstart[t] + 1
            if wk.bsum[t - 1] * ln1 > wk.bsum[t] * ln0:
                break
            wk.bend[t - 1] = wk.bend[t]
            wk.bsum[t - 1] += wk.bsum[t]
            t -= 1
    for j in range(t + 1):
        val = wk.bsum[j] / (wk.bend[j] - wk.bstart[j] + 1)
        if val < 0.0:
            val = 0.0
        for i in range(wk.bstart[j], wk.bend[j] + 1):
            if y[wk.idx[i]] > 0.0:
                out[wk.idx[i]] = val
            elif y[wk.idx[i]] < 0.0:
                out[wk.idx[i]] = -val
            else:
                out[wk.idx[i]] = 0.0


cdef double _sorted_norm(const double* w, const double* lam, Py_ssize_t n,
                         Work* wk) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        wk.absy[i] = fabs(w[i])
    _argsort_desc(wk.absy, wk.idx, wk.tmp, n)
    for i in range(n):
        s += lam[i] * wk.absy[wk.idx[i]]
    return s


cdef double _dual_norm(const double* a, const double* lam, Py_ssize_t n,
                       Work* wk) noexcept nogil:
    cdef Py_ssize_t i
    cdef double num = 0.0, den = 0.0, best = 0.0, r
    for i in range(n):
        wk.absy[i] = fabs(a[i])
    _argsort_desc(wk.absy, wk.idx, wk.tmp, n)
    for i in range(n):
        num += wk.absy[wk.idx[i]]
        den += lam[i]
        if den > 0.0:
            r = num / den
            if r > best:
                best = r
    return best


def prox_sorted_l1(const double[::1] y, const double[::1] lam):
    cdef Py_ssize_t n = y.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Work wk
    if n == 0:
        return out
    with nogil:
        if _work_alloc(&wk, n) != 0:
            _work_free(&wk)
            with gil:
                raise MemoryError()
        _prox(&y[0], &lam[0], &o[0], n, &wk)
        _work_free(&wk)
    return out


def sorted_l1_norm(const double[::1] w, const double[::1] lam):
    cdef Py_ssize_t n = w.shape[0]
    cdef Work wk
    cdef double s = 0.0
    if n == 0:
        return 0.0
    with nogil:
        if _work_alloc(&wk, n) != 0:
            _work_free(&wk)
            with gil:
                raise MemoryError()
        s = _sorted_norm(&w[0], &lam[0], n, &wk)
        _work_free(&wk)
    return s


def dual_sorted_l1_norm(const double[::1] a, const double[::1] lam):
    cdef Py_ssize_t n = a.shape[0]
    cdef Work wk
    cdef double s = 0.0
    if n == 0:
        return 0.0
    with nogil:
        if _work_alloc(&wk, n) != 0:
            _work_free(&wk)
            with gil:
                raise MemoryError()
        s = _dual_norm(&a[0], &lam[0], n, &wk)
        _work_free(&wk)
    return s


cdef double _quad(const double* S, const double* x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc = 0.0, row
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += S[i * n + j] * x[j]
        acc += x[i] * row
    return acc


cdef double _gap(const double* S, const double* Kw, const double* kb,
                 const double* mu, const double* lam, double phi, int nonneg,
                 int lam_zero, const double* v, const double* alpha, Py_ssize_t n,
                 double* wr, double* at, double* wt, Work* wk) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0, primal, dual, scale, acc
    for i in range(n):
        s += v[i]
    if fabs(s) < 1e-300:
        return INFINITY
    for i in range(n):
        wr[i] = v[i] / s
    primal = 0.5 * phi * _quad(S, wr, n)
    for i in range(n):
        primal -= mu[i] * wr[i]
    if not lam_zero:
        primal += _sorted_norm(wr, lam, n, wk)
    # dual-feasible rescaling of alpha
    if lam_zero:
        for i in range(n):
            at[i] = alpha[i] if (nonneg and alpha[i] < 0.0) else 0.0
    else:
        if nonneg:
            for i in range(n):
                wt[i] = alpha[i] if alpha[i] > 0.0 else 0.0
            scale = _dual_norm(wt, lam, n, wk)
        else:
            scale = _dual_norm(alpha, lam, n, wk)
        if scale < 1.0:
            scale = 1.0
        for i in range(n):
            at[i] = alpha[i] / scale
    # budget-constrained inner minimiser at a = mu - alpha_tilde
    for i in range(n):
        at[i] = mu[i] - at[i]
    for i in range(n):
        acc = kb[i]
        for j in range(n):
            acc += Kw[i * n + j] * at[j]
        wt[i] = acc
    dual = 0.5 * phi * _quad(S, wt, n)
    for i in range(n):
        dual -= at[i] * wt[i]
    return primal - dual


def admm_loop(const double[:, ::1] L, const double[:, ::1] S,
              const double[:, ::1] Kw, const double[::1] kb,
              const double[::1] mu, const double[::1] lam, double phi, double eta,
              bint nonneg, double[::1] w, double[::1] v, double[::1] alpha,
              double[::1] beta, double[::1] best_v, double tol, long max_iter,
              long check_every):
    """Run ADMM iterations in place. Returns (iterations, best_gap, converged)."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, j
    cdef long it = 0
    cdef double acc, sw, gap, best_gap = INFINITY
    cdef int converged = 0, lam_zero = 1, failed = 0
    cdef double* rhs
    cdef double* y
    cdef double* lam_eta
    cdef double* wr
    cdef double* at
    cdef double* wt
    cdef Work wk
    for i in range(n):
        if lam[i] != 0.0:
            lam_zero = 0
    with nogil:
        rhs = <double*> malloc(n * sizeof(double))
        y = <double*> malloc(n * sizeof(double))
        lam_eta = <double*> malloc(n * sizeof(double))
        wr = <double*> malloc(n * sizeof(double))
        at = <double*> malloc(n * sizeof(double))
        wt = <double*> malloc(n * sizeof(double))
        if (_work_alloc(&wk, n) != 0 or rhs == NULL or y == NULL or lam_eta == NULL
                or wr == NULL or at == NULL or wt == NULL):
            failed = 1
        else:
            for i in range(n):
                lam_eta[i] = lam[i] / eta
            while it < max_iter:
                it += 1
                # w-update: (phi S + eta (I + ee')) w = mu - alpha - beta e + eta (v + e)
                for i in range(n):
                    rhs[i] = mu[i] - alpha[i] - beta[0] + eta * (v[i] + 1.0)
                for i in range(n):
                    acc = rhs[i]
                    for j in range(i):
                        acc -= L[i, j] * rhs[j]
                    rhs[i] = acc / L[i, i]
                for i in range(n - 1, -1, -1):
                    acc = rhs[i]
                    for j in range(i + 1, n):
                        acc -= L[j, i] * w[j]
                    w[i] = acc / L[i, i]
                # v-update
                for i in range(n):
                    y[i] = w[i] + alpha[i] / eta
                    if nonneg and y[i] < 0.0:
                        y[i] = 0.0
                if lam_zero:
                    for i in range(n):
                        v[i] = y[i]
                else:
                    _prox(y, lam_eta, &v[0], n, &wk)
                # dual updates
                sw = 0.0
                for i in range(n):
                    alpha[i] += eta * (w[i] - v[i])
                    sw += w[i]
                beta[0] += eta * (sw - 1.0)
                if it % check_every == 0 or it == max_iter:
                    gap = _gap(&S[0, 0], &Kw[0, 0], &kb[0], &mu[0], &lam[0], phi,
                               nonneg, lam_zero, &v[0], &alpha[0], n, wr, at, wt, &wk)
                    if gap < best_gap:
                        best_gap = gap
                        for i in range(n):
                            best_v[i] = v[i]
                    if gap <= tol:
                        converged = 1
                        break
        free(rhs)
        free(y)
        free(lam_eta)
        free(wr)
        free(at)
        free(wt)
        _work_free(&wk)
    if failed:
        raise MemoryError()
    return it, best_gap, bool(converged)


def dual_gap(const double[:, ::1] S, const double[:, ::1] Kw, const double[::1] kb,
             const double[::1] mu, const double[::1] lam, double phi, bint nonneg,
             const double[::1] v, const double[::1] alpha):
    """Certified gap P(v / e'v) - g(alpha_tilde), see ``_pykernels.dual_gap``."""
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i
    cdef int lam_zero = 1
    cdef double gap
    cdef Work wk
    wr = np.empty(n)
    at = np.empty(n)
    wt = np.empty(n)
    cdef double[::1] wr_ = wr
    cdef double[::1] at_ = at
    cdef double[::1] wt_ = wt
    for i in range(n):
        if lam[i] != 0.0:
            lam_zero = 0
    if _work_alloc(&wk, n) != 0:
        _work_free(&wk)
        raise MemoryError()
    gap = _gap(&S[0, 0], &Kw[0, 0], &kb[0], &mu[0], &lam[0], phi, nonneg, lam_zero,
               &v[0], &alpha[0], n, &wr_[0], &at_[0], &wt_[0], &wk)
    _work_free(&wk)
    return gap


cdef double _st(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


cdef double _solve_gamma(const double* z, const double* diag2, double lam,
                         Py_ssize_t n) noexcept nogil:
    # root of sum_i ST(g - z_i, lam) / diag2_i = 1; the sum is nondecreasing in g
    cdef Py_ssize_t i, it
    cdef double lo, hi, mid, f, zmin = z[0], zmax = z[0], inv = 0.0
    for i in range(n):
        if z[i] < zmin:
            zmin = z[i]
        if z[i] > zmax:
            zmax = z[i]
        inv += 1.0 / diag2[i]
    lo = zmin + lam
    hi = zmax + lam + 1.0 / inv
    for it in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = -1.0
        for i in range(n):
            f += _st(mid - z[i], lam) / diag2[i]
        if f < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cycode_loop(const double[:, ::1] S, const double[::1] mu, double theta,
                double lam, double[::1] w, double tol, long max_iter):
    """Cyclic coordinate descent sweeps in place. Returns (sweeps, converged, gamma)."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, j
    cdef long sweep = 0
    cdef double gamma, zi, new, d, maxchange, s
    cdef int converged = 0, failed = 0
    cdef double* Sw
    cdef double* z
    cdef double* diag2
    with nogil:
        Sw = <double*> malloc(n * sizeof(double))
        z = <double*> malloc(n * sizeof(double))
        diag2 = <double*> malloc(n * sizeof(double))
        if Sw == NULL or z == NULL or diag2 == NULL:
            failed = 1
        else:
            for i in range(n):
                diag2[i] = 2.0 * S[i, i]
                s = 0.0
                for j in range(n):
                    s += S[i, j] * w[j]
                Sw[i] = s
            for i in range(n):
                z[i] = 2.0 * (Sw[i] - S[i, i] * w[i]) - theta * mu[i]
            gamma = _solve_gamma(z, diag2, lam, n)
            while sweep < max_iter:
                sweep += 1
                maxchange = 0.0
                for i in range(n):
                    zi = 2.0 * (Sw[i] - S[i, i] * w[i]) - theta * mu[i]
                    new = _st(gamma - zi, lam) / diag2[i]
                    d = new - w[i]
                    if d != 0.0:
                        for j in range(n):
                            Sw[j] += d * S[j, i]
                        w[i] = new
                        if fabs(d) > maxchange:
                            maxchange = fabs(d)
                for i in range(n):
                    z[i] = 2.0 * (Sw[i] - S[i, i] * w[i]) - theta * mu[i]
                gamma = _solve_gamma(z, diag2, lam, n)
                if maxchange <= tol:
                    converged = 1
                    break
        free(Sw)
        free(z)
        free(diag2)
    if failed:
        raise MemoryError()
    return sweep, bool(converged), gamma
