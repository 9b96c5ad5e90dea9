"""Implicit vector maintenance for the central path iterates.

The iterates evolve as ``s <- s + D A h + beta * w`` for slowly changing
diagonal ``D`` and ``w``.  The structures here store such running sums
implicitly (prefix sums of the ``h`` and ``beta``), and keep an explicit
approximation ``sbar`` that is only rewritten where the true value has
moved noticeably.  Every structure counts its own work in a
:class:`CostCounters`.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from . import kernels
from .errors import (BatchExhausted, IndexOutOfRange, NonPositiveWeight,
                     PremiseViolated, ValidationError)

__all__ = [
    "CostCounters", "SumOfProductDS", "SumOfVectorDS", "HeavyHitterDS",
    "ExactScanHH", "VectorMaintenanceDS", "PrimalDualMaintenanceDS",
    "StabilizerDS", "check_norm_lemma", "check_norm_bounds", "log2m",
]


def log2m(m):
    """``log2 m`` floored at 1, so thresholds stay finite for tiny ``m``."""
    return max(1.0, math.log2(max(m, 1)))


class CostCounters:
    """Monotone operation tallies.  Only :meth:`reset` lowers them."""

    def __init__(self):
        self._c = defaultdict(int)

    def bump(self, name, amount=1):
        if amount < 0:
            raise ValueError("counters never decrease")
        self._c[name] += amount

    def __getitem__(self, name):
        return self._c.get(name, 0)

    def merge(self, other, prefix=""):
        for key, val in other.items():
            self._c[prefix + key] += val

    def items(self):
        return self._c.items()

    def as_dict(self):
        return dict(sorted(self._c.items()))

    def reset(self):
        self._c.clear()


def _checked_index(idx, m):
    idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexOutOfRange(f"index outside [0, {m})")
    return idx


class _Prefix:
    """Growing table of compensated prefix sums ``P[t] = sum_{l<=t} a_l``.

    Each row is stored as ``hi + lo`` (Neumaier), so a window difference
    keeps about twice the working precision.
    """

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.hi = np.zeros((8,) + self.shape)
        self.lo = np.zeros((8,) + self.shape)
        self.T = 0

    def push(self, a):
        if self.T + 1 >= self.hi.shape[0]:
            grow = self.hi.shape[0]
            self.hi = np.concatenate([self.hi, np.zeros_like(self.hi[:grow])])
            self.lo = np.concatenate([self.lo, np.zeros_like(self.lo[:grow])])
        hi = self.hi[self.T]
        tot = hi + a
        err = np.where(np.abs(hi) >= np.abs(a), (hi - tot) + a, (a - tot) + hi)
        self.T += 1
        self.hi[self.T] = tot
        self.lo[self.T] = self.lo[self.T - 1] + err

    def window(self, t0, t1=None):
        """``P[t1] - P[t0]`` (sum of entries ``t0 < l <= t1``)."""
        t1 = self.T if t1 is None else t1
        return (self.hi[t1] - self.hi[t0]) + (self.lo[t1] - self.lo[t0])


class SumOfProductDS:
    """Running sum ``sum_l D^(l) A h^(l)`` with ``D`` changing per entry.

    Entry ``i`` is frozen at the iteration of its last weight change, so a
    query only needs ``a_i . (htilde^(T) - htilde^(t_i))``.
    """

    def __init__(self, A, d):
        self.A = A
        self.d = np.array(d, dtype=float).reshape(A.rows)
        if not np.all(np.isfinite(self.d)):
            raise ValidationError("weights must be finite")
        self._P = _Prefix((A.cols + 1,))
        self.last = np.zeros(A.rows, dtype=np.intp)
        self.frozen = np.zeros(A.rows)
        self.counters = CostCounters()

    @property
    def T(self):
        return self._P.T

    def _row_window(self, idx):
        # the prefix rows carry a trailing zero, so a deleted entry (-1)
        # reads that zero
        P = self._P
        T = P.T
        pos, neg, last = self.A.pos[idx], self.A.neg[idx], self.last[idx]
        hi, lo = P.hi, P.lo
        return (((hi[T, pos] - hi[last, pos]) + (lo[T, pos] - lo[last, pos]))
                - ((hi[T, neg] - hi[last, neg]) + (lo[T, neg] - lo[last, neg])))

    def query(self, idx=None):
        idx = np.arange(self.A.rows) if idx is None \
            else _checked_index(idx, self.A.rows)
        return self._query(idx)

    def _query(self, idx):
        self.counters.bump("query", idx.size)
        return self.frozen[idx] + self.d[idx] * self._row_window(idx)

    def update(self, idx, values):
        idx = _checked_index(idx, self.A.rows)
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("weights must be finite")
        self._update(idx, values)

    def _update(self, idx, values):
        self.frozen[idx] = self._query(idx)
        self.last[idx] = self._P.T
        self.d[idx] = values
        self.counters.bump("update", idx.size)

    def add(self, h):
        h = np.asarray(h, dtype=float).reshape(self.A.cols)
        self._P.push(np.append(h, 0.0))
        self.counters.bump("add")

    def window(self, t0, t1=None):
        """Sum of the ``h`` added in iterations ``t0+1 .. t1``."""
        return self._P.window(t0, t1)[:-1]


class SumOfVectorDS:
    """Running sum ``sum_l beta^(l) w^(l)`` with ``w`` changing per entry."""

    def __init__(self, w):
        self.w = np.array(w, dtype=float).reshape(-1)
        self.m = self.w.size
        self._P = _Prefix(())
        self.last = np.zeros(self.m, dtype=np.intp)
        self.frozen = np.zeros(self.m)
        self.counters = CostCounters()

    @property
    def T(self):
        return self._P.T

    def query(self, idx=None):
        idx = np.arange(self.m) if idx is None else _checked_index(idx, self.m)
        return self._query(idx)

    def _query(self, idx):
        P = self._P
        self.counters.bump("query", idx.size)
        last = self.last[idx]
        win = (P.hi[P.T] - P.hi[last]) + (P.lo[P.T] - P.lo[last])
        return self.frozen[idx] + self.w[idx] * win

    def update(self, idx, values):
        idx = _checked_index(idx, self.m)
        self._update(idx, np.broadcast_to(
            np.asarray(values, dtype=float), idx.shape))

    def _update(self, idx, values):
        self.frozen[idx] = self._query(idx)
        self.last[idx] = self._P.T
        self.w[idx] = values
        self.counters.bump("update", idx.size)

    def add(self, beta):
        self._P.push(np.float64(beta))
        self.counters.bump("add")

    def window(self, t0, t1=None):
        return float(self._P.window(t0, t1))


class HeavyHitterDS:
    """Interface: report rows ``i`` with ``|g_i (A h)_i| > eps``.

    Backends may return supersets but must never miss an index.
    """

    def set_weights(self, g):
        raise NotImplementedError

    def query(self, h, eps):
        raise NotImplementedError


class ExactScanHH(HeavyHitterDS):
    """Heavy hitters by scanning every row; returns exactly the set."""

    def __init__(self, A, g=None):
        self.A = A
        self.g = np.zeros(A.rows) if g is None else \
            np.array(g, dtype=float).reshape(A.rows)
        self.counters = CostCounters()

    def set_weights(self, g):
        self.g = np.asarray(g, dtype=float).reshape(self.A.rows)

    def query(self, h, eps):
        if not eps > 0:
            raise ValidationError("threshold must be positive")
        idx = kernels.heavy_scan(self.A.pos, self.A.neg, self.g,
                                 np.asarray(h, dtype=float), float(eps))
        self.counters.bump("rows_scanned", self.A.rows)
        self.counters.bump("returned", idx.size)
        return idx


class VectorMaintenanceDS:
    """Approximation ``sbar`` of ``s^(t) = s^(0) + sum_l (sum_c G_c A h_c
    + beta w)`` with ``|sbar_i - s_i| <= eps_i`` after every :meth:`add`.

    Parameters
    ----------
    A : IncidenceMatrix
    s0 : (m,) array
    G : (p, m) array
        Diagonal weights of the ``p`` product channels.
    w : (m,) array
    eps : (m,) array or float
    max_adds : int, optional
        Adds allowed before the structure must be rebuilt; defaults to
        ``floor(sqrt(m))``.
    """

    def __init__(self, A, s0, G, w, eps, max_adds=None):
        m = A.rows
        self.A = A
        self.m = m
        G = np.array(G, dtype=float, ndmin=2).reshape(-1, m)
        self.p = G.shape[0]
        self.s0 = np.array(s0, dtype=float).reshape(m)
        self.sbar = self.s0.copy()
        self.eps = np.array(np.broadcast_to(eps, (m,)), dtype=float)
        if np.any(self.eps <= 0):
            raise ValidationError("accuracies must be positive")
        self.sops = [SumOfProductDS(A, G[c]) for c in range(self.p)]
        self.sov = SumOfVectorDS(w)
        self.hh = ExactScanHH(A)
        self.levels = int(math.floor(math.log2(max(1.0, math.sqrt(m)))))
        self.max_adds = int(math.isqrt(m)) if max_adds is None else max_adds
        self.max_adds = max(1, self.max_adds)
        self.dirty = np.zeros((self.levels + 1, m), dtype=bool)
        self.theta = 1.0 / (10.0 * (self.p + 1) * log2m(m))
        self.t = 0
        self.counters = CostCounters()

    @property
    def G(self):
        return np.array([s.d for s in self.sops])

    @property
    def w(self):
        return self.sov.w

    def update(self, idx, G_cols, w_vals):
        """Change the channel weights (and ``w``) at entries ``idx``."""
        idx = _checked_index(idx, self.m)
        G_cols = np.asarray(G_cols, dtype=float).reshape(self.p, idx.size)
        w_vals = np.broadcast_to(np.asarray(w_vals, dtype=float), idx.shape)
        if not (np.all(np.isfinite(G_cols)) and np.all(np.isfinite(w_vals))):
            raise ValidationError("weights must be finite")
        self._update(idx, G_cols, w_vals)

    def _update(self, idx, G_cols, w_vals):
        for c, sop in enumerate(self.sops):
            sop._update(idx, G_cols[c])
        self.sov._update(idx, w_vals)
        self.dirty[:, idx] = True
        self.counters.bump("update", idx.size)

    def set_accuracy(self, idx, eps):
        idx = _checked_index(idx, self.m)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), idx.shape)
        if np.any(eps <= 0):
            raise ValidationError("accuracies must be positive")
        self.eps[idx] = eps
        self.dirty[:, idx] = True
        self.counters.bump("set_accuracy", idx.size)

    def exact(self, idx=None):
        idx = np.arange(self.m) if idx is None else _checked_index(idx, self.m)
        return self._exact(idx)

    def _exact(self, idx):
        out = self.s0[idx] + self.sov._query(idx)
        for sop in self.sops:
            out = out + sop._query(idx)
        return out

    def add(self, hs, beta):
        """Advance one iteration; returns ``(sbar, changed_indices)``."""
        if self.t >= self.max_adds:
            raise BatchExhausted(
                f"{self.max_adds} adds since the last rebuild")
        hs = np.asarray(hs, dtype=float).reshape(self.p, self.A.cols)
        self.t += 1
        for c, sop in enumerate(self.sops):
            sop.add(hs[c])
        self.sov.add(beta)
        self.counters.bump("add")

        marked = np.zeros(self.m, dtype=bool)
        for lev in range(self.levels + 1):
            span = 1 << lev
            if self.t % span:
                continue
            t0 = self.t - span
            dirty = self.dirty[lev]
            for sop in self.sops:
                g = np.abs(sop.d) / self.eps
                g[dirty] = 0.0
                self.hh.set_weights(g)
                marked[self.hh.query(sop.window(t0), self.theta)] = True
            grad = np.abs(self.sov.w * self.sov.window(t0))
            marked |= (grad > self.theta * self.eps) & ~dirty
            marked |= dirty
            self.counters.bump(f"detected_level_{lev}", int(marked.sum()))
            dirty[:] = False
        idx = np.flatnonzero(marked)
        changed = idx[:0]
        if idx.size:
            new = self._exact(idx)
            diff = new != self.sbar[idx]
            self.sbar[idx] = new
            changed = idx[diff]
        self.counters.bump("rewrites", changed.size)
        return self.sbar, changed


class PrimalDualMaintenanceDS:
    """Approximations ``xbar_j ~ x_j`` and ``sbar_j ~ s_j`` of all blocks.

    With ``d = xbar / sbar`` and ``v_{k+1} = 0`` the blocks follow

    ``s_j += beta * (w + sum_l (d_l / d_sum) A (v_j - v_l))``

    ``x_j += beta * (z_j - sum_l (d_j d_l / d_sum) A (v_j - v_l))``

    Each block is held by two :class:`VectorMaintenanceDS` (one for ``s``,
    one for ``x``) with ``k`` product channels.  An output entry is only
    rewritten when the maintained value drifts by more than ``eps/5`` in
    relative terms, and every rewrite refreshes ``d`` on that edge.

    Parameters
    ----------
    A : IncidenceMatrix
        Reduced incidence matrix (``m`` rows).
    x0, s0 : (k+1, m) arrays
    w : (m,) array
    z : (k+1, m) array
    eps : float
        Multiplicative accuracy of the outputs.
    """

    def __init__(self, A, x0, s0, w, z, eps, max_adds=None):
        x0 = np.array(x0, dtype=float, ndmin=2)
        s0 = np.array(s0, dtype=float, ndmin=2)
        if x0.shape != s0.shape or x0.shape[1] != A.rows:
            raise ValidationError("x0 and s0 must both be (k+1, m)")
        if np.any(x0 <= 0) or np.any(s0 <= 0):
            raise NonPositiveWeight("initial iterate must be positive")
        if not 0 < eps < 1:
            raise ValidationError("eps must lie in (0, 1)")
        self.A = A
        self.k = x0.shape[0] - 1
        self.m = A.rows
        self.eps = float(eps)
        self.vm_eps = self.eps / (10.0 * (self.k + 1))
        self.xbar = x0.copy()
        self.sbar = s0.copy()
        self.w = np.array(w, dtype=float).reshape(self.m)
        self.z = np.array(z, dtype=float).reshape(self.k + 1, self.m)
        self.d = self.xbar / self.sbar
        self.counters = CostCounters()
        kk = self.k + 1
        self.others = [np.array([l for l in range(kk) if l != j])
                       for j in range(kk)]
        self.svm, self.xvm = [], []
        for j in range(kk):
            sG, xG = self._weights(j, slice(None))
            self.svm.append(VectorMaintenanceDS(
                A, s0[j], sG, self.w, self.vm_eps * self.sbar[j], max_adds))
            self.xvm.append(VectorMaintenanceDS(
                A, x0[j], xG, self.z[j], self.vm_eps * self.xbar[j],
                max_adds))

    def _weights(self, j, idx):
        d = self.d[:, idx]
        frac = d[self.others[j]] / d.sum(axis=0)
        return frac, -d[j] * frac

    def update(self, idx, w_vals, z_vals):
        """Set ``w`` and ``z_1..z_{k+1}`` on edges ``idx``."""
        idx = _checked_index(idx, self.m)
        self.w[idx] = w_vals
        self.z[:, idx] = np.asarray(z_vals, dtype=float).reshape(
            self.k + 1, idx.size)
        self._push(idx)
        self.counters.bump("update", idx.size)

    def _push(self, idx):
        for j in range(self.k + 1):
            sG, xG = self._weights(j, idx)
            self.svm[j]._update(idx, sG, self.w[idx])
            self.xvm[j]._update(idx, xG, self.z[j, idx])

    def add(self, v, beta, norms=None):
        """Apply one step with ``v = (v_1..v_k)`` (shape (k, n')).

        ``norms``, if given, is the pair of squared relative step norms of
        ``s`` and ``x``; both must be at most 1/100.

        Returns ``(xbar, sbar, changed_edges)``.
        """
        if norms is not None and max(norms) > 1e-2:
            raise PremiseViolated(
                f"relative step norms {norms} exceed the 1/100 premise")
        v = np.asarray(v, dtype=float).reshape(self.k, self.A.cols)
        V = np.vstack([v, np.zeros((1, self.A.cols))])
        touched = np.zeros(self.m, dtype=bool)
        for j in range(self.k + 1):
            hs = beta * (V[j] - V[self.others[j]])
            for vm, bar in ((self.svm[j], self.sbar[j]),
                            (self.xvm[j], self.xbar[j])):
                u, cand = vm.add(hs, beta)
                if cand.size == 0:
                    continue
                drift = np.abs(bar[cand] - u[cand])
                hit = cand[drift > self.eps * bar[cand] / 5.0]
                if hit.size:
                    bar[hit] = u[hit]
                    if np.any(bar[hit] <= 0):
                        raise PremiseViolated("maintained value left the "
                                              "positive orthant")
                    vm.set_accuracy(hit, self.vm_eps * bar[hit])
                    touched[hit] = True
                    self.counters.bump("rewrites", hit.size)
        edges = np.flatnonzero(touched)
        if edges.size:
            self.d[:, edges] = self.xbar[:, edges] / self.sbar[:, edges]
            self._push(edges)
        self.counters.bump("add")
        self.counters.bump("changed_edges", edges.size)
        return self.xbar, self.sbar, edges

    def exact(self):
        """Exact ``(x, s)``, each of shape (k+1, m)."""
        x = np.array([vm.exact() for vm in self.xvm])
        s = np.array([vm.exact() for vm in self.svm])
        return x, s

    def collect_counters(self):
        out = CostCounters()
        out.merge(self.counters, "pdm.")
        for vm in self.svm + self.xvm:
            out.merge(vm.counters, "vm.")
            out.merge(vm.hh.counters, "hh.")
        return out


class StabilizerDS:
    """Smooths a stream of approximations so few entries change per step.

    Feed the per-step change of an approximation ``vbar`` of ``v``;
    the output ``vbar'`` follows ``vbar`` but an entry is only rewritten
    when it moved by ``beta / (4 log2 m)`` over a dyadic window ending now,
    plus a full refresh every ``floor(sqrt(m))`` steps.
    """

    def __init__(self, v0, alpha, beta):
        self.v_in = np.array(v0, dtype=float).reshape(-1)
        self.out = self.v_in.copy()
        self.m = self.v_in.size
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.levels = int(math.floor(math.log2(max(1.0, math.sqrt(self.m)))))
        self.acc = np.zeros((self.levels + 1, self.m))
        self.refresh_every = max(1, math.isqrt(self.m))
        self.threshold = self.beta / (4.0 * log2m(self.m))
        self.t = 0
        self.counters = CostCounters()

    def stabilize(self, delta):
        """``delta`` is a dense (m,) array or an ``(indices, values)`` pair.

        Returns ``(vbar_prime, changed_indices)``.
        """
        if isinstance(delta, tuple):
            idx, vals = delta
            idx = _checked_index(idx, self.m)
            dense = np.zeros(self.m)
            np.add.at(dense, idx, np.asarray(vals, dtype=float))
        else:
            dense = np.asarray(delta, dtype=float).reshape(self.m)
        self.t += 1
        self.v_in += dense
        self.acc += dense
        mark = np.zeros(self.m, dtype=bool)
        for lev in range(self.levels + 1):
            if self.t % (1 << lev):
                continue
            mark |= np.abs(self.acc[lev]) >= self.threshold
            self.acc[lev] = 0.0
        if self.t % self.refresh_every == 0:
            mark[:] = True
            self.counters.bump("full_refresh")
        idx = np.flatnonzero(mark)
        changed = idx[self.out[idx] != self.v_in[idx]]
        self.out[changed] = self.v_in[changed]
        self.counters.bump("changes", changed.size)
        return self.out, changed


def check_norm_lemma(d, v, w, A):
    """Factor-4 norm inequality for the commodity step decomposition.

    ``d`` is (k+1, m), ``v`` is (k+1, n'), ``w`` is (m,).  Returns
    ``(lhs, rhs, holds)`` with

    ``lhs = sum_ij ||D_i^(1/2) D_j D_sum^-1 A (v_i - v_j)||^2``
    ``rhs = 4 sum_i ||D_i^(1/2) (w + sum_j D_j D_sum^-1 A (v_i - v_j))||^2``
    """
    d = np.array(d, dtype=float, ndmin=2)
    if np.any(d <= 0):
        raise NonPositiveWeight("weights must be positive")
    v = np.array(v, dtype=float, ndmin=2)
    w = np.asarray(w, dtype=float)
    Av = np.array([A.matvec(vi) for vi in v])
    frac = d / d.sum(axis=0)
    diff = Av[:, None, :] - Av[None, :, :]  # (i, j, m)
    lhs = float((d[:, None, :] * (frac[None, :, :] * diff) ** 2).sum())
    eta = w + (frac[None, :, :] * diff).sum(axis=1)
    rhs = 4.0 * float((d * eta ** 2).sum())
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


def check_norm_bounds(xbar, sbar, v, w, A, mu):
    """Norm bounds in terms of the relative slack step.

    Requires ``xbar * sbar`` within a factor ``exp(1/5)`` of ``mu``.
    Returns ``(eps2, lhs_pair, lhs_w, holds)`` where ``eps2`` is
    ``sum_i ||eta_i / sbar_i||^2`` and ``holds`` checks
    ``lhs_pair <= 6 eps2`` and ``lhs_w <= 2 eps2``.
    """
    xbar = np.array(xbar, dtype=float, ndmin=2)
    sbar = np.array(sbar, dtype=float, ndmin=2)
    ratio = xbar * sbar / mu
    if np.any(np.abs(np.log(ratio)) > 0.2 + 1e-12):
        raise PremiseViolated("xbar * sbar is not within exp(1/5) of mu")
    d = xbar / sbar
    v = np.array(v, dtype=float, ndmin=2)
    w = np.asarray(w, dtype=float)
    Av = np.array([A.matvec(vi) for vi in v])
    frac = d / d.sum(axis=0)
    diff = Av[:, None, :] - Av[None, :, :]
    eta = w + (frac[None, :, :] * diff).sum(axis=1)
    eps2 = float(((eta / sbar) ** 2).sum())
    lhs_pair = float((((frac[None, :, :] * diff) / sbar[:, None, :]) ** 2)
                     .sum())
    lhs_w = float(((w[None, :] / sbar) ** 2).sum())
    holds = lhs_pair <= 6.0 * eps2 + 1e-9 and lhs_w <= 2.0 * eps2 + 1e-9
    return eps2, lhs_pair, lhs_w, bool(holds)
