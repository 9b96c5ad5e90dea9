"""Dense kernels for the Schur-reduced Newton system.

The normal matrix of the k-commodity LP has the block layout::

    [ A^T D_1 A              A^T D_1 ]
    [            ...         ...     ]
    [              A^T D_k A A^T D_k ]
    [ D_1 A  ...   D_k A     D_sum   ]

Eliminating the capacity block leaves the ``k n' x k n'`` matrix ``E``.
Vectors on the reduced side use a commodity-major layout, entry ``(i, a)``
at position ``i * n' + a``.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from . import _kernels_py, kernels
from .errors import (NonPositiveWeight, Overflow, Singular, SingularSystem,
                     UpdateSingular)

__all__ = [
    "BlockWeights", "assemble_E", "hessian_dense", "hessian_blocks",
    "schur_factored_inverse", "dense_solve", "InverseMaintenance",
    "SchurSystem", "DirectSchur", "apply_reduced_inverse",
]

_LOG_GUARD = 300.0


class BlockWeights:
    """Diagonal weights ``d_1..d_{k+1}`` (rows of ``d``) and their sum."""

    __slots__ = ("d", "dsum")

    def __init__(self, d):
        d = np.array(d, dtype=float, ndmin=2)
        if d.shape[0] < 2:
            raise ValueError("need at least two weight blocks (k >= 1)")
        if not np.all(d > 0):
            raise NonPositiveWeight("all weights must be strictly positive")
        if np.any(np.abs(np.log(d)) > _LOG_GUARD):
            raise Overflow("weight outside exp(+-300); conditioning guard")
        self.d = d
        self.dsum = d.sum(axis=0)

    @classmethod
    def from_iterate(cls, xbar, sbar, k):
        return cls((np.asarray(xbar) / np.asarray(sbar)).reshape(k + 1, -1))

    @property
    def k(self):
        return self.d.shape[0] - 1

    @property
    def m(self):
        return self.d.shape[1]


def assemble_E(A, weights):
    """Schur complement ``E`` for incidence block ``A`` and ``weights``."""
    if not isinstance(weights, BlockWeights):
        weights = BlockWeights(weights)
    return kernels.assemble_schur(A.pos, A.neg, A.cols, weights.d)


def hessian_dense(blockA, dflat):
    """``calA^T diag(d) calA`` from the dense stacked matrix."""
    return blockA.T @ (np.asarray(dflat)[:, None] * blockA)


def hessian_blocks(A, weights):
    """Normal matrix assembled from its block layout (no stacked matrix)."""
    Ad = A.to_dense()
    d, k = weights.d, weights.k
    nr, m = A.cols, A.rows
    size = k * nr + m
    H = np.zeros((size, size))
    for i in range(k):
        sl = slice(i * nr, (i + 1) * nr)
        H[sl, sl] = Ad.T @ (d[i][:, None] * Ad)
        H[sl, k * nr:] = Ad.T * d[i]
        H[k * nr:, sl] = d[i][:, None] * Ad
    H[k * nr:, k * nr:] = np.diag(weights.dsum)
    return H


def schur_factored_inverse(A, B, C, D):
    """Inverse of ``[[A, B], [C, D]]`` as a product of three block factors.

    Uses ``E = A - B D^-1 C``; both ``D`` and ``E`` must be invertible.
    """
    p, q = A.shape[0], D.shape[0]
    Dinv = np.linalg.inv(D)
    E = A - B @ Dinv @ C
    Einv = np.linalg.inv(E)
    Ip, Iq = np.eye(p), np.eye(q)
    Zpq = np.zeros((p, q))
    L = np.block([[Ip, Zpq], [-Dinv @ C, Iq]])
    M = np.block([[Einv, Zpq], [Zpq.T, Iq]])
    R = np.block([[Ip, -B @ Dinv], [Zpq.T, Dinv]])
    return L @ M @ R


def _lu_checked(M, exc=Singular, tol=1e-12):
    M = np.asarray(M, dtype=float)
    with warnings.catch_warnings():
        # a zero pivot is reported below as our own exception
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=True)
    scale = np.abs(M).sum(axis=1).max(initial=0.0)
    if scale == 0.0 or np.abs(np.diag(lu)).min() <= tol * scale:
        raise exc("matrix is numerically singular")
    return lu, piv


def dense_solve(M, rhs):
    """Solve ``M x = rhs`` by LU with partial pivoting."""
    return sla.lu_solve(_lu_checked(M), np.asarray(rhs, dtype=float))


def _as_dense(X, rows):
    if X is None:
        return np.zeros((rows, 0))
    if sps.issparse(X):
        return X.toarray()
    X = np.asarray(X, dtype=float)
    return X.reshape(rows, -1)


class InverseMaintenance:
    """Maintain ``M^-1 v`` under low-rank changes of ``M`` and changes of ``v``.

    The cached object is the inverse of the bordered matrix
    ``N = [[M, v], [0, -1]]`` whose last column is ``[M^-1 v; -1]``.  A
    change ``M += U V^T, v += dv`` is the rank ``r + 1`` change
    ``N += [[U, dv], [0, 0]] [[V, 0], [0, 1]]^T`` which the Woodbury
    identity folds into ``N^-1``.

    Parameters
    ----------
    M : (d, d) array_like
    v : (d,) array_like
    rebuild_rank : int, optional
        Total rank of permanent updates after which ``N^-1`` is recomputed
        from the tracked ``M``.  Defaults to ``d``.
    pivot_tol : float, optional
        Smallest accepted LU pivot relative to the row-sum norm of ``M``.
    """

    def __init__(self, M, v, rebuild_rank=None, pivot_tol=1e-12):
        self.pivot_tol = pivot_tol
        self.init(M, v, rebuild_rank)

    def init(self, M, v, rebuild_rank=None):
        M = np.array(M, dtype=float)
        v = np.array(v, dtype=float).reshape(-1)
        d = M.shape[0]
        if M.shape != (d, d) or v.shape != (d,):
            raise ValueError("M must be square and v must match")
        lu = _lu_checked(M, tol=self.pivot_tol)
        Minv = sla.lu_solve(lu, np.eye(d))
        Ninv = np.zeros((d + 1, d + 1))
        Ninv[:d, :d] = Minv
        Ninv[:d, d] = Minv @ v
        Ninv[d, d] = -1.0
        self.M, self.v, self.Ninv = M, v, Ninv
        self.dim = d
        if rebuild_rank is None:
            rebuild_rank = getattr(self, "rebuild_rank", None) or d
        self.rebuild_rank = rebuild_rank
        self.rank_since_init = 0
        self.counters = getattr(self, "counters", None) or {
            "init": 0, "update": 0, "temp_update": 0, "rank_total": 0,
            "temp_nnz": 0}
        self.counters["init"] += 1
        return self.solution()

    def solution(self):
        return self.Ninv[:self.dim, self.dim].copy()

    def _lift(self, U, V, dv):
        d = self.dim
        U = _as_dense(U, d)
        V = _as_dense(V, d)
        if U.shape != V.shape:
            raise ValueError("U and V must have the same shape")
        r = U.shape[1]
        UN = np.zeros((d + 1, r + 1))
        VN = np.zeros((d + 1, r + 1))
        UN[:d, :r] = U
        VN[:d, :r] = V
        if dv is not None:
            UN[:d, r] = _as_dense(dv, d).reshape(d)
        VN[d, r] = 1.0
        return U, V, UN, VN

    def update(self, U, V, new_v):
        """Permanently apply ``M += U V^T`` and ``v = new_v``."""
        new_v = np.asarray(new_v, dtype=float).reshape(self.dim)
        U, V, UN, VN = self._lift(U, V, new_v - self.v)
        self.counters["update"] += 1
        r = U.shape[1]
        if self.rank_since_init + r > self.rebuild_rank:
            return self.init(self.M + U @ V.T, new_v)
        NU = self.Ninv @ UN
        cap = np.eye(UN.shape[1]) + VN.T @ NU
        lu = _lu_checked(cap, UpdateSingular)
        VtN = VN.T @ self.Ninv
        self.Ninv = self.Ninv - NU @ sla.lu_solve(lu, VtN)
        self.M = self.M + U @ V.T
        self.v = new_v
        self.rank_since_init += r
        self.counters["rank_total"] += r
        return self.solution()

    def temp_update(self, U, V, v_delta=None):
        """``(M + U V^T)^-1 (v + v_delta)`` without changing any state."""
        d = self.dim
        self.counters["temp_update"] += 1
        for X in (U, V, v_delta):
            if X is not None:
                self.counters["temp_nnz"] += int(
                    X.nnz if sps.issparse(X) else np.count_nonzero(X))
        _, _, UN, VN = self._lift(U, V, v_delta)
        col = self.Ninv[:, d]
        NU = self.Ninv @ UN
        cap = np.eye(UN.shape[1]) + VN.T @ NU
        lu = _lu_checked(cap, UpdateSingular)
        out = col - NU @ sla.lu_solve(lu, VN.T @ col)
        return out[:d]

    def bordered(self):
        d = self.dim
        N = np.zeros((d + 1, d + 1))
        N[:d, :d] = self.M
        N[:d, d] = self.v
        N[d, d] = -1.0
        return N

    def probe_residual(self, columns):
        """``max_j ||N (N^-1 e_j) - e_j||_inf`` over the given columns."""
        N = self.bordered()
        cols = np.asarray(columns, dtype=int)
        R = N @ self.Ninv[:, cols]
        R[cols, np.arange(cols.size)] -= 1.0
        return float(np.abs(R).max(initial=0.0))


class DirectSchur:
    """Dense Cholesky of the Jacobi-scaled ``E``, refactored on every call."""

    def __init__(self, A, k):
        self.A = A
        self.k = k
        self.weights = None
        self.counters = {"factor": 0}

    def set_weights(self, weights):
        self.weights = weights
        E = assemble_E(self.A, weights)
        sc = 1.0 / np.sqrt(np.diag(E))
        M = sc[:, None] * E * sc[None, :]
        if not np.all(np.isfinite(M)):
            raise SingularSystem("Schur complement has non-finite entries")
        self._cf = _kernels_py._cho_factor(M)
        if self._cf is None:
            raise SingularSystem("Cholesky of the Schur complement failed")
        self._sc = sc
        self.counters["factor"] += 1

    def solve(self, rhs):
        sc = self._sc
        return sc * sla.cho_solve(self._cf, sc * rhs)


class SchurSystem:
    """``E`` kept current under per-edge weight changes via Woodbury updates.

    A change of the weights on edge ``e`` alters ``E`` by
    ``K_e' - K_e`` (a k x k block) tensored with ``a_e a_e^T``, where
    ``a_e`` is row ``e`` of ``A`` (at most two nonzeros).  Pending changes
    are applied as temporary updates; once their rank exceeds
    ``temp_rank`` they are committed permanently, and the underlying
    structure re-inverts from scratch once the committed rank exceeds
    ``k n'``.
    """

    def __init__(self, A, weights, temp_rank=None, residual_tol=1e-10):
        self.A = A
        self.k = weights.k
        self.nred = A.cols
        self.dim = self.k * self.nred
        if temp_rank is None:
            temp_rank = max(8, math.ceil(math.sqrt(self.dim)))
        self.temp_rank = temp_rank
        self.residual_tol = residual_tol
        self.counters = {"rebuild": 0, "commit": 0, "solve": 0,
                         "edge_changes": 0}
        self._rebuild(weights)

    # -- state -----------------------------------------------------------
    def _rebuild(self, weights):
        self.weights = weights
        self.d = weights.d.copy()
        self.d_committed = weights.d.copy()
        self.K_committed = kernels.edge_blocks(self.d)
        E = assemble_E(self.A, weights)
        self.scale = 1.0 / np.sqrt(np.diag(E))
        self.E = self.scale[:, None] * E * self.scale[None, :]
        self.pending = set()
        # E is SPD but can lose a direction to roundoff when a slack weight
        # is swamped by the flow weights; shift the tracked matrix the same
        # way the direct factorization does
        reg = 0.0
        while True:
            try:
                self.im = InverseMaintenance(self.E, np.zeros(self.dim),
                                             rebuild_rank=self.dim,
                                             pivot_tol=1e-15)
                break
            except Singular:
                reg = _kernels_py.REG_START if reg == 0.0 else reg * 100.0
                if reg > _kernels_py.REG_STOP:
                    raise
                self.E = self.E + reg * np.eye(self.dim)
        self.shift = reg
        self.counters["rebuild"] += 1

    def _edge_factors(self, edges, dK):
        """Scaled ``U, V`` for the block changes ``dK`` on ``edges``.

        Edge ``e`` contributes ``k`` columns: ``V`` holds the scaled
        incidence row for each commodity and ``U`` the same rows times the
        block change.
        """
        k, nr = self.k, self.nred
        edges = np.asarray(edges, dtype=int)
        ncol = edges.size * k
        U = np.zeros((self.dim, ncol))
        V = np.zeros((self.dim, ncol))
        for side, sign in ((self.A.pos, 1.0), (self.A.neg, -1.0)):
            idx = side[edges]
            ok = np.flatnonzero(idx >= 0)
            if ok.size == 0:
                continue
            for i in range(k):
                rows = i * nr + idx[ok]
                sc = sign * self.scale[rows]
                V[rows, ok * k + i] = sc
                for j in range(k):
                    U[rows, ok * k + j] = sc * dK[ok, i, j]
        return U, V

    def set_weights(self, weights, changed=None):
        """Record new weights; ``changed`` lists edges whose weights moved."""
        if changed is None:
            changed = np.flatnonzero(np.any(weights.d != self.d, axis=0))
        changed = np.asarray(changed, dtype=int)
        self.weights = weights
        if changed.size:
            newK = kernels.edge_blocks(weights.d[:, changed])
            oldK = kernels.edge_blocks(self.d[:, changed])
            U, V = self._edge_factors(changed, newK - oldK)
            self.E = self.E + U @ V.T
            self.d[:, changed] = weights.d[:, changed]
            self.pending.update(int(e) for e in changed)
            self.counters["edge_changes"] += int(changed.size)
        if self.k * len(self.pending) > self.temp_rank:
            self._commit()

    def _pending_factors(self):
        edges = np.array(sorted(self.pending), dtype=int)
        dK = kernels.edge_blocks(self.d[:, edges]) - self.K_committed[edges]
        return edges, self._edge_factors(edges, dK)

    def _commit(self):
        edges, (U, V) = self._pending_factors()
        try:
            self.im.update(U, V, self.im.v)
        except (Singular, UpdateSingular):
            # the fixed Jacobi scaling has drifted too far from the current
            # diagonal; rescale and re-invert
            self._rebuild(self.weights)
            return
        self.d_committed[:, edges] = self.d[:, edges]
        self.K_committed[edges] = kernels.edge_blocks(self.d[:, edges])
        self.pending.clear()
        self.counters["commit"] += 1

    def _solve_scaled(self, rhs_s, refine=2):
        if self.pending:
            _, (U, V) = self._pending_factors()
        else:
            U = V = None
        sol = self.im.temp_update(U, V, rhs_s - self.im.v)
        # the explicit inverse loses digits on ill-conditioned E; a couple
        # of refinement sweeps against the tracked E recover them
        for _ in range(refine):
            res = rhs_s - self.E @ sol
            sol = sol + self.im.temp_update(U, V, res - self.im.v)
        return sol

    def _residual_ok(self, sol, rhs_s):
        # judged in the original units: that residual is what the Newton
        # step leaves in the primal constraints
        res = (self.E @ sol - rhs_s) / self.scale
        rhs = rhs_s / self.scale
        return (np.abs(res).max(initial=0.0)
                <= self.residual_tol * np.abs(rhs).max(initial=0.0))

    def solve(self, rhs):
        """``E^-1 rhs`` for the current weights."""
        self.counters["solve"] += 1
        rhs_s = self.scale * np.asarray(rhs, dtype=float)
        try:
            sol = self._solve_scaled(rhs_s)
            ok = self._residual_ok(sol, rhs_s)
        except (Singular, UpdateSingular):
            ok = False
        if not ok:
            self._rebuild(self.weights)
            rhs_s = self.scale * np.asarray(rhs, dtype=float)
            sol = self._solve_scaled(rhs_s)
            if not self._residual_ok(sol, rhs_s):
                raise SingularSystem("Schur system residual check failed")
        return self.scale * sol


def apply_reduced_inverse(sys, g, sbar):
    """Reduced solve of the Newton system for gradient ``g``.

    Returns ``(w, v)`` with ``w = D_sum^-1 sum_i g_i / sbar_i`` and
    ``v`` of shape ``(k, n')`` solving ``E v = [A^T(g_i/sbar_i - d_i w)]_i``.
    """
    k, A = sys.k, sys.A
    d = sys.weights.d
    gs = (np.asarray(g, dtype=float) / np.asarray(sbar, dtype=float))
    gs = gs.reshape(k + 1, -1)
    w = gs.sum(axis=0) / sys.weights.dsum
    r = gs[:k] - d[:k] * w
    rhs = A.rmatvec(r.T).T.reshape(-1)
    v = sys.solve(rhs).reshape(k, A.cols)
    return w, v
