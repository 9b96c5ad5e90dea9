"""Path following on maintained approximations.

The iterate is never formed explicitly inside a batch.  The approximate
blocks ``xbar, sbar`` come from a :class:`PrimalDualMaintenanceDS`, the
Schur complement is kept current with Woodbury updates on the edges whose
weights moved, and the exact iterate is recovered at the end of each batch
of ``floor(sqrt(m))`` steps.
"""
from __future__ import annotations

import math

import numpy as np

from ._kernels_py import (ST_CENT, ST_PHI, ST_RATIO, ST_SHIGH, ST_SLOW,
                          ST_SSTEP, ST_XLOW, ST_XSTEP, ST_XU)
from .errors import CenteringLost, IterationCapExceeded, SingularSystem
from .ipm import potential_gradient, refresh_feasibility, safe_potential
from .linalg import BlockWeights, DirectSchur, SchurSystem
from .maintenance import CostCounters, PrimalDualMaintenanceDS

__all__ = ["run_maintained", "SAMPLED_CHECKS"]

SAMPLED_CHECKS = 10


def _gradient(xb, sb, tref, lam):
    return -potential_gradient(xb * sb / tref, lam)


def _wz(g, xb, sb):
    d = xb / sb
    gs = g / sb
    w = gs.sum(axis=0) / d.sum(axis=0)
    return w, gs - d * w


def _contract_error(pdm):
    """Worst ``|log(bar / exact)| / eps`` over all blocks."""
    x, s = pdm.exact()
    if np.any(x <= 0) or np.any(s <= 0):
        return math.inf
    err = max(np.abs(np.log(pdm.xbar / x)).max(),
              np.abs(np.log(pdm.sbar / s)).max())
    return float(err / pdm.eps)


def run_maintained(lp, it, t_target, params, bounds, trace, refresh=True,
                   seed=0):
    A = lp.A
    k, m, K = lp.k, lp.m, lp.k * lp.A.cols
    N = lp.nvars
    lam = params.lam
    forward = params.direction == "forward"
    practical = params.mode == "practical"
    eps = params.eps_approx
    tref_tol = 1.0 / (96.0 * lam)
    batch = max(1, math.isqrt(m))
    # acceptance is judged on approximations; leave room for their error
    cent_cap = 1.0 / 16 - 4.0 * eps
    scale = params.step_scale if practical else 1.0
    rng = np.random.default_rng(seed)
    counters = CostCounters()
    worst = 0.0
    stats = trace.stats
    if bounds is not None:
        ub, xi, si = (np.asarray(b, dtype=float) for b in bounds)
    y = it.y.copy()
    t = it.t
    tref = t

    while True:
        X = it.x.reshape(k + 1, m)
        S = it.s.reshape(k + 1, m)
        if abs(math.log(t / tref)) > tref_tol:
            tref = t
        g = _gradient(X, S, tref, lam)
        w, z = _wz(g, X, S)
        pdm = PrimalDualMaintenanceDS(A, X, S, w, z, eps, max_adds=batch)
        schur = SchurSystem(A, BlockWeights(pdm.d))
        sampled = set(rng.choice(batch, size=min(SAMPLED_CHECKS, batch),
                                 replace=False).tolist())
        for step in range(batch):
            if t == t_target:
                break
            if trace.iterations >= params.max_iterations:
                it.x, it.s = (a.reshape(-1) for a in pdm.exact())
                it.y, it.t = y, t
                raise IterationCapExceeded(trace.iterations, t)
            xb, sb = pdm.xbar, pdm.sbar
            if abs(math.log(t / tref)) > tref_tol:
                tref = t
                g = _gradient(xb, sb, tref, lam)
                w, z = _wz(g, xb, sb)
                pdm.update(np.arange(m), w, z)
                counters.bump("tref_refresh")
            d = pdm.d
            dsum = d.sum(axis=0)
            gnorm = float(np.linalg.norm(g))
            gs = g / sb
            if gnorm >= 1e-14:
                rhs = A.rmatvec((gs[:k] - d[:k] * w).T).T.reshape(-1)
                try:
                    v = schur.solve(rhs)
                except SingularSystem:
                    direct = DirectSchur(A, k)
                    direct.set_weights(BlockWeights(d))
                    v = direct.solve(rhs)
                    counters.bump("direct_fallback")
                v = v.reshape(k, A.cols)
                Av = A.matvec(v.T).T
                ycap = w - (d[:k] * Av).sum(axis=0) / dsum
                ds = np.vstack([Av + ycap, ycap[None, :]])
                dx = gs - d * ds
            else:
                v = np.zeros((k, A.cols))
                ycap = np.zeros(m)
                ds = dx = np.zeros_like(g)

            while True:
                fac = 1.0 + params.h * scale
                tn = max(t / fac, t_target) if forward \
                    else min(t * fac, t_target)
                beta = tn / (32.0 * lam * gnorm) * scale if gnorm >= 1e-14 \
                    else 0.0
                xn = xb + beta * dx
                sn = sb + beta * ds
                ok = bool(np.all(xn > 0) and np.all(sn > 0))
                cent = float(np.abs(xn * sn / tn - 1.0).max()) if ok \
                    else math.inf
                phi = safe_potential(xn * sn / tn, lam) / N if ok \
                    else math.inf
                if not practical:
                    if not ok:
                        raise CenteringLost(
                            f"step left the positive orthant at t={t:.6g}")
                    break
                if ok and cent <= cent_cap and phi <= 64.0:
                    scale = min(2.0 * scale, params.max_scale)
                    break
                trace.rejections += 1
                if scale <= 1.0:
                    raise CenteringLost(
                        f"step left the centered region at t={t:.6g}")
                scale = max(1.0, scale / 2.0)

            stats[ST_SSTEP] = max(stats[ST_SSTEP],
                                  float(np.linalg.norm(beta * ds / sb)))
            stats[ST_XSTEP] = max(stats[ST_XSTEP],
                                  float(np.linalg.norm(beta * dx / xb)))
            stats[ST_CENT] = max(stats[ST_CENT], cent)
            stats[ST_PHI] = max(stats[ST_PHI], phi)

            _, _, edges = pdm.add(v, beta)
            y[:K] -= beta * v.reshape(-1)
            y[K:] -= beta * ycap
            t = tn
            trace.iterations += 1
            if edges.size:
                xb, sb = pdm.xbar, pdm.sbar
                schur.set_weights(BlockWeights(pdm.d), changed=edges)
                g[:, edges] = _gradient(xb[:, edges], sb[:, edges], tref, lam)
                w_e, z_e = _wz(g[:, edges], xb[:, edges], sb[:, edges])
                w[edges] = w_e
                z[:, edges] = z_e
                pdm.update(edges, w_e, z_e)
            if step in sampled:
                worst = max(worst, _contract_error(pdm))
                counters.bump("contract_checks")

        worst = max(worst, _contract_error(pdm))
        counters.bump("contract_checks")
        counters.bump("batches")
        counters.merge(pdm.collect_counters())
        for key, val in schur.counters.items():
            counters.bump("schur." + key, val)
        x, s = pdm.exact()
        it.x, it.s, it.y, it.t = x.reshape(-1), s.reshape(-1), y, t
        if np.any(it.x <= 0) or np.any(it.s <= 0):
            raise CenteringLost(f"exact iterate not positive at t={t:.6g}")
        if refresh:
            refresh_feasibility(lp, it)
            y = it.y.copy()
        if bounds is not None:
            _bound_stats(stats, it, ub, xi, si, N)
        trace.record(it, scale)
        trace.counters = counters.as_dict()
        trace.counters["contract_max_ratio"] = worst
        phi = safe_potential(it.x * it.s / it.t, lam)
        if phi > 64.0 * N:
            raise CenteringLost(f"potential {phi:.3g} exceeds 64(k+1)m")
        if t == t_target:
            return it


def _bound_stats(stats, it, ub, xi, si, N):
    x, s, t = it.x, it.s, it.t
    stats[ST_XU] = max(stats[ST_XU], float((x / ub).max()))
    stats[ST_XLOW] = max(stats[ST_XLOW], float((t / (3 * N * si * x)).max()))
    stats[ST_SLOW] = max(stats[ST_SLOW], float((t / (10 * ub * s)).max()))
    stats[ST_SHIGH] = max(stats[ST_SHIGH], float((s / (3 * N * si)).max()))
    ratio = ((x / xi).sum() + (s / si).sum()) / (3.0 * N)
    stats[ST_RATIO] = max(stats[ST_RATIO], float(ratio))
