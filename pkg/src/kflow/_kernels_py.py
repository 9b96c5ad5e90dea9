"""Reference implementations of the hot kernels (NumPy only).

Every function here has a twin with the same signature in the compiled
``_ckernels`` extension; ``kflow.kernels`` picks one at import time.
"""
import numpy as np


def incidence_matvec(pos, neg, h):
    hp = np.append(np.asarray(h, dtype=float), 0.0)
    return hp[pos] - hp[neg]


def heavy_scan(pos, neg, g, h, eps):
    vals = np.abs(g * incidence_matvec(pos, neg, h))
    return np.flatnonzero(vals > eps)


def edge_blocks(d):
    """Per-edge k x k blocks ``diag(d_i) - d_i d_j / d_sum`` (shape m,k,k)."""
    dsum = d.sum(axis=0)
    dk = d[:-1].T
    K = -dk[:, :, None] * dk[:, None, :] / dsum[:, None, None]
    # diagonal as d_i * sum_{j != i} d_j / d_sum, free of cancellation
    pre = np.cumsum(d, axis=0) - d
    suf = np.cumsum(d[::-1], axis=0)[::-1] - d
    idx = np.arange(dk.shape[1])
    K[:, idx, idx] = (dk * (pre[:-1] + suf[:-1]).T) / dsum[:, None]
    return K


def assemble_schur(pos, neg, nred, d):
    """Dense Schur complement ``E`` (commodity-major layout)."""
    k = d.shape[0] - 1
    K = edge_blocks(d)
    # E[i, a, j, b] accumulated over edges, a/b are reduced vertex indices
    E = np.zeros((k, nred + 1, k, nred + 1))
    Kt = K.transpose(1, 0, 2)  # (k, m, k)
    ar = np.arange(k)
    for p, q, sign in ((pos, pos, 1.0), (neg, neg, 1.0),
                       (pos, neg, -1.0), (neg, pos, -1.0)):
        np.add.at(E, (ar[:, None, None], p[None, :, None], ar[None, None, :],
                      q[None, :, None]), sign * Kt)
    return E[:, :nred, :, :nred].reshape(k * nred, k * nred)


# stats slots filled by path_batch (running maxima over accepted steps)
ST_CENT, ST_SSTEP, ST_XSTEP, ST_PHI, ST_XU, ST_XLOW, ST_SLOW, ST_SHIGH, \
    ST_RATIO = range(9)
NSTATS = 9

OK, AT_TARGET, LOST, SINGULAR, NONPOS = range(5)


def _direction(pos, neg, nred, k, x, s, g):
    """Unit-beta Newton direction ``(dx, ds, z)`` for gradient ``g``.

    ``z`` is the dual direction (``ds = calA z``).
    """
    m = pos.shape[0]
    xb = x.reshape(k + 1, m)
    sb = s.reshape(k + 1, m)
    d = xb / sb
    dsum = d.sum(axis=0)
    E = assemble_schur(pos, neg, nred, d)
    sc = 1.0 / np.sqrt(np.diag(E))
    cf = _cho_factor(sc[:, None] * E * sc[None, :])
    if cf is None:
        return None
    gs = g.reshape(k + 1, m) / sb
    w = gs.sum(axis=0) / dsum
    r = gs[:k] - d[:k] * w
    rhs = np.empty((k, nred))
    for i in range(k):
        rhs[i] = _rmatvec(pos, neg, nred, r[i])
    v = (sc * _cho_solve(cf, sc * rhs.reshape(-1))).reshape(k, nred)
    Av = np.empty((k, m))
    for i in range(k):
        Av[i] = incidence_matvec(pos, neg, v[i])
    q = (d[:k] * Av).sum(axis=0) / dsum
    ycap = w - q
    ds = np.empty((k + 1, m))
    ds[:k] = Av + ycap
    ds[k] = ycap
    dx = gs - d * ds
    z = np.concatenate([v.reshape(-1), ycap])
    return dx.reshape(-1), ds.reshape(-1), z


def _rmatvec(pos, neg, nred, r):
    out = np.zeros(nred + 1)
    np.add.at(out, pos, r)
    np.subtract.at(out, neg, r)
    return out[:nred]


REG_START, REG_STOP = 1e-13, 1e-6


def _cho_factor(M):
    """Cholesky of a unit-diagonal SPD matrix, shifting the diagonal by a
    growing multiple of the identity if roundoff breaks the factorization."""
    import scipy.linalg as sla
    reg = 0.0
    while True:
        try:
            A = M if reg == 0.0 else M + reg * np.eye(M.shape[0])
            return sla.cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            reg = REG_START if reg == 0.0 else reg * 100.0
            if reg > REG_STOP:
                return None


def _cho_solve(cf, b):
    import scipy.linalg as sla
    return sla.cho_solve(cf, b, check_finite=False)


def path_batch(pos, neg, nred, k, x, s, y, t, t_target, tref, forward, h,
               lam, scale, max_scale, practical, niter, tref_tol, logt_limit,
               ubound, xinit, sinit, stats):
    """Run up to ``niter`` path-following iterations with exact ``xbar = x``.

    ``x``, ``s``, ``y`` and ``stats`` are updated in place.  Returns
    ``(t, tref, scale, iterations, rejections, status)``.
    """
    N = x.shape[0]
    t_start = t
    track = ubound.shape[0] == N
    its = rejects = 0
    status = OK
    while its < niter:
        if t == t_target:
            status = AT_TARGET
            break
        if abs(np.log(t / t_start)) >= logt_limit:
            break
        if abs(np.log(t / tref)) > tref_tol:
            tref = t
        vb = x * s / tref
        arg = lam * (vb - 1.0)
        g = -lam * np.sinh(arg)
        gnorm = np.sqrt(np.dot(g, g))
        if gnorm < 1e-14:
            dirn = None
        else:
            dirn = _direction(pos, neg, nred, k, x, s, g)
            if dirn is None:
                status = SINGULAR
                break
        while True:
            fac = 1.0 + h * scale
            tn = max(t / fac, t_target) if forward else min(t * fac, t_target)
            if dirn is None:
                xn, sn = x, s
                dx = ds = z = None
                beta = 0.0
            else:
                dx, ds, z = dirn
                beta = tn / (32.0 * lam * gnorm) * scale
                xn = x + beta * dx
                sn = s + beta * ds
            pos_ok = bool(np.all(xn > 0) and np.all(sn > 0))
            if pos_ok:
                vn = xn * sn / tn
                cent = np.abs(vn - 1.0).max()
                phi = np.cosh(np.minimum(lam * np.abs(vn - 1.0), 700.0)).sum() / N
            else:
                cent = phi = np.inf
            if not practical:
                if not pos_ok:
                    status = NONPOS
                break
            if pos_ok and cent <= 1.0 / 16 and phi <= 64.0:
                scale = min(2.0 * scale, max_scale)
                break
            rejects += 1
            if scale <= 1.0:
                status = LOST
                break
            scale = max(scale / 2.0, 1.0)
        if status in (LOST, NONPOS):
            break
        if dirn is not None:
            stats[ST_SSTEP] = max(stats[ST_SSTEP],
                                  np.linalg.norm(beta * ds / s))
            stats[ST_XSTEP] = max(stats[ST_XSTEP],
                                  np.linalg.norm(beta * dx / x))
            x += beta * dx
            s += beta * ds
            y -= beta * z
        t = tn
        its += 1
        stats[ST_CENT] = max(stats[ST_CENT], cent)
        stats[ST_PHI] = max(stats[ST_PHI], phi)
        if track:
            stats[ST_XU] = max(stats[ST_XU], (x / ubound).max())
            stats[ST_XLOW] = max(stats[ST_XLOW],
                                 (t / (3.0 * N * sinit * x)).max())
            stats[ST_SLOW] = max(stats[ST_SLOW], (t / (10.0 * ubound * s)).max())
            stats[ST_SHIGH] = max(stats[ST_SHIGH], (s / (3.0 * N * sinit)).max())
            stats[ST_RATIO] = max(stats[ST_RATIO],
                                  ((x / xinit).sum() + (s / sinit).sum()) / (3.0 * N))
    if t == t_target and status == OK:
        status = AT_TARGET
    return t, tref, scale, its, rejects, status
