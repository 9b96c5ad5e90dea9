# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np

from libc.math cimport sqrt, fabs, log, sinh, cosh
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

cdef enum:
    ST_CENT = 0
    ST_SSTEP = 1
    ST_XSTEP = 2
    ST_PHI = 3
    ST_XU = 4
    ST_XLOW = 5
    ST_SLOW = 6
    ST_SHIGH = 7
    ST_RATIO = 8

cdef enum:
    OK = 0
    AT_TARGET = 1
    LOST = 2
    SINGULAR = 3
    NONPOS = 4


def incidence_matvec(const Py_ssize_t[::1] pos, const Py_ssize_t[::1] neg, h):
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t m = pos.shape[0], e
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double a
    for e in range(m):
        a = 0.0
        if pos[e] >= 0:
            a += hv[pos[e]]
        if neg[e] >= 0:
            a -= hv[neg[e]]
        o[e] = a
    return out


def heavy_scan(const Py_ssize_t[::1] pos, const Py_ssize_t[::1] neg, g, h,
               double eps):
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t m = pos.shape[0], e, cnt = 0
    idx = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] iv = idx
    cdef double a
    for e in range(m):
        a = 0.0
        if pos[e] >= 0:
            a += hv[pos[e]]
        if neg[e] >= 0:
            a -= hv[neg[e]]
        if fabs(gv[e] * a) > eps:
            iv[cnt] = e
            cnt += 1
    return idx[:cnt].copy()


cdef void _assemble(const Py_ssize_t[::1] pos, const Py_ssize_t[::1] neg,
                    Py_ssize_t nred, Py_ssize_t k, Py_ssize_t m,
                    const double* d, double* E) noexcept nogil:
    """Dense E (k*nred square, row-major); ``d`` is (k+1, m) row-major."""
    cdef Py_ssize_t K = k * nred, e, i, j, l, p, q
    cdef double dsum, kij, di, rest
    for i in range(K * K):
        E[i] = 0.0
    for e in range(m):
        p = pos[e]
        q = neg[e]
        dsum = 0.0
        for i in range(k + 1):
            dsum += d[i * m + e]
        for i in range(k):
            di = d[i * m + e]
            for j in range(k):
                if i == j:
                    # d_i * sum_{l != i} d_l / d_sum avoids cancellation
                    rest = 0.0
                    for l in range(k + 1):
                        if l != i:
                            rest += d[l * m + e]
                    kij = di * rest / dsum
                else:
                    kij = -di * d[j * m + e] / dsum
                if p >= 0:
                    E[(i * nred + p) * K + j * nred + p] += kij
                if q >= 0:
                    E[(i * nred + q) * K + j * nred + q] += kij
                if p >= 0 and q >= 0:
                    E[(i * nred + p) * K + j * nred + q] -= kij
                    E[(i * nred + q) * K + j * nred + p] -= kij


def assemble_schur(const Py_ssize_t[::1] pos, const Py_ssize_t[::1] neg,
                   Py_ssize_t nred, d):
    cdef double[:, ::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t k = dv.shape[0] - 1, m = dv.shape[1]
    out = np.empty((k * nred, k * nred))
    cdef double[:, ::1] o = out
    if k * nred > 0:
        _assemble(pos, neg, nred, k, m, &dv[0, 0], &o[0, 0])
    return out


def path_batch(const Py_ssize_t[::1] pos, const Py_ssize_t[::1] neg,
               Py_ssize_t nred, Py_ssize_t k,
               double[::1] x, double[::1] s, double[::1] y,
               double t, double t_target, double tref, int forward,
               double h, double lam, double scale, double max_scale,
               int practical, Py_ssize_t niter, double tref_tol,
               double logt_limit, const double[::1] ubound,
               const double[::1] xinit, const double[::1] sinit,
               double[::1] stats):
    """Compiled version of ``_kernels_py.path_batch`` (same contract)."""
    cdef Py_ssize_t m = pos.shape[0], N = x.shape[0], K = k * nred
    cdef Py_ssize_t i, j, e, r, its = 0, rejects = 0
    cdef int status = OK, info = 0, nK = <int>K, one = 1
    cdef bint track = ubound.shape[0] == N, have_dir, pos_ok
    cdef double t_start = t, tn, fac, beta = 0.0, gnorm, a, cent, phi
    cdef double ns, nx, sx, ss, val, ratio, reg
    cdef char uplo = b'L'

    Ea = np.empty(max(K * K, 1))
    Eb = np.empty(max(K * K, 1))
    work = np.empty(12 * N + 4 * K + 4 * m + 8)
    cdef double[::1] Ev = Ea
    cdef double[::1] wk = work
    cdef double[::1] Ebv = Eb
    cdef double* E = &Ev[0]
    cdef double* E2 = &Ebv[0]
    cdef double* d = &wk[0]
    cdef double* gs = d + N
    cdef double* g = gs + N
    cdef double* dx = g + N
    cdef double* ds = dx + N
    cdef double* xn = ds + N
    cdef double* sn = xn + N
    cdef double* Av = sn + N
    cdef double* sc = Av + N
    cdef double* rhs = sc + K
    cdef double* dsum = rhs + K
    cdef double* w = dsum + m
    cdef double* q = w + m
    cdef double* zc = q + m

    while its < niter:
        if t == t_target:
            status = AT_TARGET
            break
        if fabs(log(t / t_start)) >= logt_limit:
            break
        if fabs(log(t / tref)) > tref_tol:
            tref = t
        gnorm = 0.0
        for i in range(N):
            a = lam * (x[i] * s[i] / tref - 1.0)
            g[i] = -lam * sinh(a)
            gnorm += g[i] * g[i]
        gnorm = sqrt(gnorm)
        have_dir = gnorm >= 1e-14
        if have_dir:
            for i in range(N):
                d[i] = x[i] / s[i]
                gs[i] = g[i] / s[i]
            for e in range(m):
                a = 0.0
                val = 0.0
                for i in range(k + 1):
                    a += d[i * m + e]
                    val += gs[i * m + e]
                dsum[e] = a
                w[e] = val / a
            if K > 0:
                _assemble(pos, neg, nred, k, m, d, E)
                for r in range(K):
                    sc[r] = 1.0 / sqrt(E[r * K + r])
                for r in range(K):
                    for j in range(K):
                        E[r * K + j] *= sc[r] * sc[j]
                for r in range(K * K):
                    E2[r] = E[r]
                reg = 0.0
                while True:
                    dpotrf(&uplo, &nK, E, &nK, &info)
                    if info == 0:
                        break
                    # roundoff broke positivity: shift the unit diagonal
                    reg = 1e-13 if reg == 0.0 else reg * 100.0
                    if reg > 1e-6:
                        break
                    for r in range(K * K):
                        E[r] = E2[r]
                    for r in range(K):
                        E[r * K + r] += reg
                if info != 0:
                    status = SINGULAR
                    break
                for r in range(K):
                    rhs[r] = 0.0
                for i in range(k):
                    for e in range(m):
                        val = gs[i * m + e] - d[i * m + e] * w[e]
                        if pos[e] >= 0:
                            rhs[i * nred + pos[e]] += val
                        if neg[e] >= 0:
                            rhs[i * nred + neg[e]] -= val
                for r in range(K):
                    rhs[r] *= sc[r]
                dpotrs(&uplo, &nK, &one, E, &nK, rhs, &nK, &info)
                for r in range(K):
                    rhs[r] *= sc[r]
            for e in range(m):
                q[e] = 0.0
            for i in range(k):
                for e in range(m):
                    a = 0.0
                    if pos[e] >= 0:
                        a += rhs[i * nred + pos[e]]
                    if neg[e] >= 0:
                        a -= rhs[i * nred + neg[e]]
                    Av[i * m + e] = a
                    q[e] += d[i * m + e] * a
            for e in range(m):
                zc[e] = w[e] - q[e] / dsum[e]
            for i in range(k):
                for e in range(m):
                    ds[i * m + e] = Av[i * m + e] + zc[e]
            for e in range(m):
                ds[k * m + e] = zc[e]
            for i in range(N):
                dx[i] = gs[i] - d[i] * ds[i]

        while True:
            fac = 1.0 + h * scale
            if forward:
                tn = t / fac
                if tn < t_target:
                    tn = t_target
            else:
                tn = t * fac
                if tn > t_target:
                    tn = t_target
            pos_ok = True
            if have_dir:
                beta = tn / (32.0 * lam * gnorm) * scale
                for i in range(N):
                    xn[i] = x[i] + beta * dx[i]
                    sn[i] = s[i] + beta * ds[i]
                    if xn[i] <= 0.0 or sn[i] <= 0.0:
                        pos_ok = False
            else:
                for i in range(N):
                    xn[i] = x[i]
                    sn[i] = s[i]
            cent = 0.0
            phi = 0.0
            if pos_ok:
                for i in range(N):
                    a = fabs(xn[i] * sn[i] / tn - 1.0)
                    if a > cent:
                        cent = a
                    a = lam * a
                    if a > 700.0:
                        a = 700.0
                    phi += cosh(a)
                phi /= N
            else:
                cent = 1e308
                phi = 1e308
            if not practical:
                if not pos_ok:
                    status = NONPOS
                break
            if pos_ok and cent <= 1.0 / 16 and phi <= 64.0:
                scale = 2.0 * scale
                if scale > max_scale:
                    scale = max_scale
                break
            rejects += 1
            if scale <= 1.0:
                status = LOST
                break
            scale = scale / 2.0
            if scale < 1.0:
                scale = 1.0
        if status == LOST or status == NONPOS:
            break
        if have_dir:
            ns = 0.0
            nx = 0.0
            for i in range(N):
                a = beta * ds[i] / s[i]
                ns += a * a
                a = beta * dx[i] / x[i]
                nx += a * a
                x[i] = xn[i]
                s[i] = sn[i]
            ns = sqrt(ns)
            nx = sqrt(nx)
            if ns > stats[ST_SSTEP]:
                stats[ST_SSTEP] = ns
            if nx > stats[ST_XSTEP]:
                stats[ST_XSTEP] = nx
            for r in range(K):
                y[r] -= beta * rhs[r]
            for e in range(m):
                y[K + e] -= beta * zc[e]
        t = tn
        its += 1
        if cent > stats[ST_CENT]:
            stats[ST_CENT] = cent
        if phi > stats[ST_PHI]:
            stats[ST_PHI] = phi
        if track:
            sx = 0.0
            ss = 0.0
            for i in range(N):
                val = x[i] / ubound[i]
                if val > stats[ST_XU]:
                    stats[ST_XU] = val
                val = t / (3.0 * N * sinit[i] * x[i])
                if val > stats[ST_XLOW]:
                    stats[ST_XLOW] = val
                val = t / (10.0 * ubound[i] * s[i])
                if val > stats[ST_SLOW]:
                    stats[ST_SLOW] = val
                val = s[i] / (3.0 * N * sinit[i])
                if val > stats[ST_SHIGH]:
                    stats[ST_SHIGH] = val
                sx += x[i] / xinit[i]
                ss += s[i] / sinit[i]
            ratio = (sx + ss) / (3.0 * N)
            if ratio > stats[ST_RATIO]:
                stats[ST_RATIO] = ratio
    if t == t_target and status == OK:
        status = AT_TARGET
    return t, tref, scale, its, rejects, status
