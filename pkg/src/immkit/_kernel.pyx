# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter-bank recursion over a whole measurement sequence.

Mirrors ``immkit.imm.imm_step`` / ``immkit.amm.amm_step`` operation by
operation on padded dense arrays. Matrices are at most MAXN x MAXN.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY, isfinite

cnp.import_array()

cdef enum:
    MAXN = 8

cdef double LOG_2PI = 1.8378770664093453
cdef double FLOOR = 1e-12

OK = 0
SINGULAR = 1
DEGENERATE = 2


cdef inline void sym(double* a, int n) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (a[i * MAXN + j] + a[j * MAXN + i])
            a[i * MAXN + j] = v
            a[j * MAXN + i] = v


cdef inline int chol(const double* a, double* low, int n) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            low[i * MAXN + j] = 0.0
    for j in range(n):
        s = a[j * MAXN + j]
        for k in range(j):
            s -= low[j * MAXN + k] * low[j * MAXN + k]
        if not (s > 0.0):
            return 1
        low[j * MAXN + j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i * MAXN + j]
            for k in range(j):
                s -= low[i * MAXN + k] * low[j * MAXN + k]
            low[i * MAXN + j] = s / low[j * MAXN + j]
    return 0


cdef inline void forward(const double* low, double* b, int n) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= low[i * MAXN + k] * b[k]
        b[i] = s / low[i * MAXN + i]


cdef inline void backward(const double* low, double* b, int n) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= low[k * MAXN + i] * b[k]
        b[i] = s / low[i * MAXN + i]


cdef inline void lift(const double* T, const double* x, const double* P, int N, int n,
                      double aug, double* xl, double* Pl) noexcept nogil:
    cdef int a, b, c
    cdef double s
    cdef double tmp[MAXN * MAXN]
    for a in range(N):
        s = 0.0
        for c in range(n):
            s += T[a * MAXN + c] * x[c]
        xl[a] = s
    for a in range(N):
        for c in range(n):
            s = 0.0
            for b in range(n):
                s += T[a * MAXN + b] * P[b * MAXN + c]
            tmp[a * MAXN + c] = s
    for a in range(N):
        for b in range(N):
            s = 0.0
            for c in range(n):
                s += tmp[a * MAXN + c] * T[b * MAXN + c]
            Pl[a * MAXN + b] = s
    if aug != 0.0 and n != N:
        for a in range(N):
            for b in range(N):
                s = 0.0
                for c in range(n):
                    s += T[a * MAXN + c] * T[b * MAXN + c]
                Pl[a * MAXN + b] += aug * ((1.0 if a == b else 0.0) - s)


cdef inline void project(const double* T, const double* xf, const double* Cf, int N, int n,
                         double* x, double* P) noexcept nogil:
    cdef int a, b, c
    cdef double s
    cdef double tmp[MAXN * MAXN]
    for c in range(n):
        s = 0.0
        for a in range(N):
            s += T[a * MAXN + c] * xf[a]
        x[c] = s
    for c in range(n):
        for b in range(N):
            s = 0.0
            for a in range(N):
                s += T[a * MAXN + c] * Cf[a * MAXN + b]
            tmp[c * MAXN + b] = s
    for c in range(n):
        for b in range(n):
            s = 0.0
            for a in range(N):
                s += tmp[c * MAXN + a] * T[a * MAXN + b]
            P[c * MAXN + b] = s
    sym(P, n)


cdef inline void moment_match(const double* wts, const double* xl, const double* Pl, int r, int N,
                              double* mean, double* cov) noexcept nogil:
    cdef int j, a, b
    cdef double wj
    cdef double dx[MAXN]
    for a in range(N):
        mean[a] = 0.0
    for j in range(r):
        wj = wts[j]
        for a in range(N):
            mean[a] = mean[a] + wj * xl[j * MAXN + a]
    for a in range(N):
        for b in range(N):
            cov[a * MAXN + b] = 0.0
    for j in range(r):
        wj = wts[j]
        for a in range(N):
            dx[a] = xl[j * MAXN + a] - mean[a]
        for a in range(N):
            for b in range(N):
                cov[a * MAXN + b] = cov[a * MAXN + b] + wj * (
                    Pl[j * MAXN * MAXN + a * MAXN + b] + dx[a] * dx[b])
    sym(cov, N)


cdef inline int kf_step(const double* A, const double* Q, const double* H, const double* R,
                        int n, int d, const double* y, double* x, double* P,
                        double* loglik) noexcept nogil:
    """Predict + update in place; returns 1 on a singular innovation covariance."""
    cdef int a, b, c
    cdef double s, maha, logdet
    cdef double xp[MAXN]
    cdef double AP[MAXN * MAXN]
    cdef double Pp[MAXN * MAXN]
    cdef double HC[MAXN * MAXN]
    cdef double S[MAXN * MAXN]
    cdef double L[MAXN * MAXN]
    cdef double G[MAXN * MAXN]
    cdef double resid[MAXN]
    cdef double z[MAXN]
    cdef double col[MAXN]

    for a in range(n):
        s = 0.0
        for c in range(n):
            s += A[a * MAXN + c] * x[c]
        xp[a] = s
    for a in range(n):
        for b in range(n):
            s = 0.0
            for c in range(n):
                s += A[a * MAXN + c] * P[c * MAXN + b]
            AP[a * MAXN + b] = s
    for a in range(n):
        for b in range(n):
            s = 0.0
            for c in range(n):
                s += AP[a * MAXN + c] * A[b * MAXN + c]
            Pp[a * MAXN + b] = s + Q[a * MAXN + b]
    sym(Pp, n)

    for a in range(d):
        for b in range(n):
            s = 0.0
            for c in range(n):
                s += H[a * MAXN + c] * Pp[c * MAXN + b]
            HC[a * MAXN + b] = s
    for a in range(d):
        for b in range(d):
            s = 0.0
            for c in range(n):
                s += HC[a * MAXN + c] * H[b * MAXN + c]
            S[a * MAXN + b] = R[a * MAXN + b] + s
    sym(S, d)
    if chol(S, L, d):
        return 1

    for a in range(d):
        s = 0.0
        for c in range(n):
            s += H[a * MAXN + c] * xp[c]
        resid[a] = y[a] - s
        z[a] = resid[a]
    forward(L, z, d)
    maha = 0.0
    logdet = 0.0
    for a in range(d):
        maha += z[a] * z[a]
        logdet += log(L[a * MAXN + a])
    loglik[0] = -0.5 * (d * LOG_2PI + 2.0 * logdet + maha)

    # G = S^-1 (H C), column by column
    for b in range(n):
        for a in range(d):
            col[a] = HC[a * MAXN + b]
        forward(L, col, d)
        backward(L, col, d)
        for a in range(d):
            G[a * MAXN + b] = col[a]
    for a in range(n):
        s = 0.0
        for c in range(d):
            s += G[c * MAXN + a] * resid[c]
        x[a] = xp[a] + s
    for a in range(n):
        for b in range(n):
            s = 0.0
            for c in range(d):
                s += G[c * MAXN + a] * HC[c * MAXN + b]
            P[a * MAXN + b] = Pp[a * MAXN + b] - s
    sym(P, n)
    return 0


cdef double DIRECT_MIN_TOTAL = 1e-280


cdef inline int normalize(const double* prior, const double* ll, int r, double* mu) noexcept nogil:
    cdef int i, nlow, changed
    cdef double top, total, budget
    cdef double lw[MAXN]
    cdef int low[MAXN]
    top = -INFINITY
    for i in range(r):
        if prior[i] > 0.0 and ll[i] > top:
            top = ll[i]
    if not isfinite(top):
        return 2
    total = 0.0
    for i in range(r):
        mu[i] = prior[i] * exp(ll[i] - top)
        total += mu[i]
    if total < DIRECT_MIN_TOTAL:
        # direct product underflowed, redo in log space
        top = -INFINITY
        for i in range(r):
            lw[i] = (log(prior[i]) if prior[i] > 0.0 else -INFINITY) + ll[i]
            if lw[i] > top:
                top = lw[i]
        total = 0.0
        for i in range(r):
            mu[i] = exp(lw[i] - top)
            total += mu[i]
    nlow = 0
    for i in range(r):
        mu[i] = mu[i] / total
        low[i] = mu[i] < FLOOR
        nlow += low[i]
    while nlow > 0:
        total = 0.0
        for i in range(r):
            if low[i]:
                mu[i] = FLOOR
            else:
                total += mu[i]
        budget = 1.0 - FLOOR * nlow
        changed = 0
        for i in range(r):
            if not low[i]:
                mu[i] = mu[i] * (budget / total)
                if mu[i] < FLOOR:
                    low[i] = 1
                    nlow += 1
                    changed = 1
        if not changed:
            break
    return 0


def run_bank(int interacting,
             const double[:, :, ::1] A, const double[:, :, ::1] Q, const double[:, :, ::1] H,
             const double[:, :, ::1] R,
             const double[:, :, ::1] T, const int[::1] dims, const double[:, ::1] p, double aug,
             const double[:, ::1] x0, const double[:, :, ::1] P0, const double[::1] mu0,
             const double[:, ::1] ys):
    """Run the bank over ``ys``; returns ``(status, step, fmean, fcov, mu, mu_pred, loglik)``.

    All matrix arguments are padded to MAXN x MAXN. ``status`` is OK,
    SINGULAR or DEGENERATE; ``step`` is the failing row of ``ys``.
    """
    cdef int r = dims.shape[0]
    cdef int N = x0.shape[1]
    cdef int d = ys.shape[1]
    cdef int K = ys.shape[0]
    cdef int i, j, k, a, b, status = 0, fail_step = -1
    cdef double total

    fmean_a = np.zeros((K, N))
    fcov_a = np.zeros((K, N, N))
    mu_a = np.zeros((K, r))
    mupred_a = np.zeros((K, r))
    ll_a = np.zeros((K, r))
    cdef double[:, ::1] fmean = fmean_a
    cdef double[:, :, ::1] fcov = fcov_a
    cdef double[:, ::1] mu_out = mu_a
    cdef double[:, ::1] mupred_out = mupred_a
    cdef double[:, ::1] ll_out = ll_a

    xs_a = np.zeros((r, MAXN))
    Ps_a = np.zeros((r, MAXN * MAXN))
    xl_a = np.zeros((r, MAXN))
    Pl_a = np.zeros((r, MAXN * MAXN))
    xm_a = np.zeros((r, MAXN))
    Pm_a = np.zeros((r, MAXN * MAXN))
    w_a = np.zeros((r, r))
    cdef double[:, ::1] xs = xs_a
    cdef double[:, ::1] Ps = Ps_a
    cdef double[:, ::1] xl = xl_a
    cdef double[:, ::1] Pl = Pl_a
    cdef double[:, ::1] xm = xm_a
    cdef double[:, ::1] Pm = Pm_a
    cdef double[:, ::1] w = w_a

    cdef double mu[MAXN]
    cdef double mupred[MAXN]
    cdef double newmu[MAXN]
    cdef double ll[MAXN]
    cdef double col[MAXN]
    cdef double fm[MAXN]
    cdef double fc[MAXN * MAXN]

    if r > MAXN or N > MAXN or d > MAXN:
        raise ValueError("dimensions exceed the compiled kernel limit")

    for i in range(r):
        mu[i] = mu0[i]
        for a in range(dims[i]):
            xs[i, a] = x0[i, a]
            for b in range(dims[i]):
                Ps[i, a * MAXN + b] = P0[i, a, b]

    with nogil:
        for k in range(K):
            if interacting:
                for i in range(r):
                    total = 0.0
                    for j in range(r):
                        total = total + p[j, i] * mu[j]
                    mupred[i] = total
                for i in range(r):
                    if mupred[i] < FLOOR:
                        total = 0.0
                        for j in range(r):
                            total += p[j, i]
                        for j in range(r):
                            w[j, i] = p[j, i] / total if total > 0.0 else 1.0 / r
                    else:
                        for j in range(r):
                            w[j, i] = (p[j, i] * mu[j]) / mupred[i]
                for j in range(r):
                    lift(&T[j, 0, 0], &xs[j, 0], &Ps[j, 0], N, dims[j], aug, &xl[j, 0], &Pl[j, 0])
                for i in range(r):
                    for j in range(r):
                        col[j] = w[j, i]
                    moment_match(col, &xl[0, 0], &Pl[0, 0], r, N, fm, fc)
                    project(&T[i, 0, 0], fm, fc, N, dims[i], &xm[i, 0], &Pm[i, 0])
            else:
                for i in range(r):
                    mupred[i] = mu[i]
                    for a in range(MAXN):
                        xm[i, a] = xs[i, a]
                    for a in range(MAXN * MAXN):
                        Pm[i, a] = Ps[i, a]

            for i in range(r):
                if kf_step(&A[i, 0, 0], &Q[i, 0, 0], &H[i, 0, 0], &R[i, 0, 0], dims[i], d,
                           &ys[k, 0], &xm[i, 0], &Pm[i, 0], &ll[i]):
                    status = 1
                    break
            if status:
                fail_step = k
                break
            if normalize(mupred, ll, r, newmu):
                status = 2
                fail_step = k
                break
            for i in range(r):
                mu[i] = newmu[i]
                mu_out[k, i] = newmu[i]
                mupred_out[k, i] = mupred[i]
                ll_out[k, i] = ll[i]
                for a in range(MAXN):
                    xs[i, a] = xm[i, a]
                for a in range(MAXN * MAXN):
                    Ps[i, a] = Pm[i, a]
            for j in range(r):
                lift(&T[j, 0, 0], &xs[j, 0], &Ps[j, 0], N, dims[j], aug, &xl[j, 0], &Pl[j, 0])
            moment_match(mu, &xl[0, 0], &Pl[0, 0], r, N, fm, fc)
            for a in range(N):
                fmean[k, a] = fm[a]
                for b in range(N):
                    fcov[k, a, b] = fc[a * MAXN + b]

    return status, fail_step, fmean_a, fcov_a, mu_a, mupred_a, ll_a
