"""Graph and k-commodity instance model.

Demands use the net-inflow convention: ``d[v] < 0`` marks a supply vertex,
``d[v] > 0`` a sink.  The incidence matrix carries ``+1`` at the tail and
``-1`` at the head of each edge, so a flow ``f`` meets its demands when
``B^T f = -d``.  The reduced LP stores ``b_i = -d_i`` with the first vertex
removed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from .errors import (InvalidEps, NegativeSlack, NotConnected,
                     PathParameterTooSmall, UnbalancedDemand, ValidationError)

__all__ = [
    "DirectedGraph", "KCommodityInstance", "IncidenceMatrix", "ReducedLP",
    "AugmentedInstance", "build_incidence", "reduce_full_rank",
    "augment_initial", "swap_costs", "truncate_solution", "penalty_cost",
    "swap_threshold", "demand_residuals", "exact_reciprocal",
]


@dataclass(frozen=True)
class DirectedGraph:
    """Directed graph on vertices ``1..n``; edge order fixes row order."""

    n: int
    edges: tuple

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.n < 1:
            raise ValidationError("graph needs at least one vertex")
        for idx, (a, b) in enumerate(edges, start=1):
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise ValidationError(f"edge {idx} has endpoint out of range")
            if a == b:
                raise ValidationError(f"edge {idx} is a self-loop")

    @property
    def m(self):
        return len(self.edges)

    @property
    def tails(self):
        return np.fromiter((a - 1 for a, _ in self.edges), dtype=np.intp,
                           count=self.m)

    @property
    def heads(self):
        return np.fromiter((b - 1 for _, b in self.edges), dtype=np.intp,
                           count=self.m)

    def weak_components(self):
        if self.m == 0:
            return self.n
        adj = sps.coo_matrix(
            (np.ones(self.m), (self.tails, self.heads)), shape=(self.n, self.n))
        count, _ = connected_components(adj, directed=True, connection="weak")
        return count


@dataclass(frozen=True, eq=False)
class KCommodityInstance:
    graph: DirectedGraph
    k: int
    capacities: np.ndarray
    costs: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        m, n = self.graph.m, self.graph.n
        u = np.asarray(self.capacities, dtype=float).reshape(m)
        c = np.asarray(self.costs, dtype=float).reshape(self.k, m)
        d = np.asarray(self.demands, dtype=float).reshape(self.k, n)
        if self.k < 1:
            raise ValidationError("need at least one commodity")
        for idx in np.flatnonzero(u < 1):
            raise ValidationError(
                f"edge {idx + 1} has capacity {u[idx]:g}, expected >= 1")
        for i in range(self.k):
            total = d[i].sum()
            if abs(total) > 1e-9 * max(1.0, np.abs(d[i]).sum()):
                raise UnbalancedDemand(i + 1, total)
        for arr in (u, c, d):
            arr.setflags(write=False)
        object.__setattr__(self, "capacities", u)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "demands", d)

    @property
    def n(self):
        return self.graph.n

    @property
    def m(self):
        return self.graph.m

    @property
    def C(self):
        return float(np.abs(self.costs).max(initial=0.0))

    @property
    def U(self):
        return float(max(np.abs(self.capacities).max(initial=0.0),
                         np.abs(self.demands).max(initial=0.0)))

    def __eq__(self, other):
        if not isinstance(other, KCommodityInstance):
            return NotImplemented
        return (self.graph == other.graph and self.k == other.k
                and np.array_equal(self.capacities, other.capacities)
                and np.array_equal(self.costs, other.costs)
                and np.array_equal(self.demands, other.demands))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class IncidenceMatrix:
    """Sparse edge-vertex incidence matrix, possibly with deleted columns.

    Row ``e`` holds ``+1`` in column ``pos[e]`` and ``-1`` in column
    ``neg[e]``; an index of ``-1`` means that entry was deleted.
    """

    rows: int
    cols: int
    pos: np.ndarray
    neg: np.ndarray

    def to_dense(self):
        out = np.zeros((self.rows, self.cols))
        r = np.arange(self.rows)
        keep = self.pos >= 0
        out[r[keep], self.pos[keep]] = 1.0
        keep = self.neg >= 0
        out[r[keep], self.neg[keep]] = -1.0
        return out

    def to_sparse(self):
        r = np.arange(self.rows)
        kp, kn = self.pos >= 0, self.neg >= 0
        data = np.concatenate([np.ones(kp.sum()), -np.ones(kn.sum())])
        ri = np.concatenate([r[kp], r[kn]])
        ci = np.concatenate([self.pos[kp], self.neg[kn]])
        return sps.csr_matrix((data, (ri, ci)), shape=(self.rows, self.cols))

    def matvec(self, h):
        """``A @ h`` for a vector or a (cols, p) array."""
        h = np.asarray(h, dtype=float)
        hp = np.concatenate([h, np.zeros((1,) + h.shape[1:])])
        return hp[self.pos] - hp[self.neg]

    def rmatvec(self, y):
        """``A.T @ y``."""
        y = np.asarray(y, dtype=float)
        out = np.zeros((self.cols + 1,) + y.shape[1:])
        np.add.at(out, self.pos, y)
        np.subtract.at(out, self.neg, y)
        return out[:self.cols]

    def row_nnz(self):
        return (self.pos >= 0).astype(int) + (self.neg >= 0).astype(int)

    def delete_first_column(self):
        pos = np.where(self.pos > 0, self.pos - 1, -1)
        neg = np.where(self.neg > 0, self.neg - 1, -1)
        return IncidenceMatrix(self.rows, self.cols - 1, pos, neg)


def build_incidence(graph):
    return IncidenceMatrix(graph.m, graph.n, graph.tails, graph.heads)


@dataclass(frozen=True, eq=False)
class ReducedLP:
    """Full-rank k-commodity LP ``min c.x  s.t.  calA^T x = b, x >= 0``.

    ``x`` stacks the k commodity flows and the capacity slack, each of
    length ``m``.  ``calA`` has ``k (n-1) + m`` columns.
    """

    A: IncidenceMatrix
    b: np.ndarray
    c: np.ndarray
    k: int

    @property
    def m(self):
        return self.A.rows

    @property
    def n(self):
        return self.A.cols + 1

    @property
    def nred(self):
        return self.A.cols

    @property
    def nvars(self):
        return (self.k + 1) * self.m

    @property
    def ncons(self):
        return self.k * self.nred + self.m

    def with_costs(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (self.nvars,):
            raise ValueError("cost vector has wrong length")
        return ReducedLP(self.A, self.b, c, self.k)

    def block_matrix(self):
        """Dense stacked constraint matrix (rows are variables)."""
        m, nr, k = self.m, self.nred, self.k
        Ad = self.A.to_dense()
        out = np.zeros((self.nvars, self.ncons))
        eye = np.eye(m)
        for i in range(k):
            out[i * m:(i + 1) * m, i * nr:(i + 1) * nr] = Ad
            out[i * m:(i + 1) * m, k * nr:] = eye
        out[k * m:, k * nr:] = eye
        return out

    def primal_lhs(self, x):
        """``calA^T x`` without forming the dense matrix."""
        m, k = self.m, self.k
        xb = np.asarray(x, dtype=float).reshape(k + 1, m)
        parts = [self.A.rmatvec(xb[i]) for i in range(k)]
        parts.append(xb.sum(axis=0))
        return np.concatenate(parts)

    def dual_lhs(self, y):
        """``calA y``."""
        m, k, nr = self.m, self.k, self.nred
        y = np.asarray(y, dtype=float)
        ycap = y[k * nr:]
        out = np.empty((k + 1, m))
        for i in range(k):
            out[i] = self.A.matvec(y[i * nr:(i + 1) * nr]) + ycap
        out[k] = ycap
        return out.reshape(-1)


def reduce_full_rank(inst):
    comps = inst.graph.weak_components()
    if comps != 1:
        raise NotConnected(comps)
    for i in range(inst.k):
        total = inst.demands[i].sum()
        if abs(total) > 1e-9 * max(1.0, np.abs(inst.demands[i]).sum()):
            raise UnbalancedDemand(i + 1, total)
    A = build_incidence(inst.graph).delete_first_column()
    b = np.concatenate([-inst.demands[i, 1:] for i in range(inst.k)]
                       + [inst.capacities])
    c = np.concatenate([inst.costs.reshape(-1), np.zeros(inst.m)])
    return ReducedLP(A, b, c, inst.k)


def demand_residuals(graph, flows, demands):
    """Per-commodity ``||netinflow(f_i) - d_i||_1``."""
    B = build_incidence(graph)
    flows = np.atleast_2d(np.asarray(flows, dtype=float))
    demands = np.atleast_2d(np.asarray(demands, dtype=float))
    return np.array([np.abs(-B.rmatvec(f) - d).sum()
                     for f, d in zip(flows, demands)])


def penalty_cost(m, k, C, U, eps):
    """Cost put on the hub edges once the artificial costs are swapped out."""
    return 3.0 * m * k * max(C, 1.0) * U / eps ** 2


def swap_threshold(m, k, C, U, eps):
    """Smallest path parameter at which the cost swap keeps centrality."""
    return 30.0 * m * k * (max(C, 1.0) * U) ** 2 / eps ** 3


@dataclass(frozen=True, eq=False)
class AugmentedInstance:
    base: KCommodityInstance
    graph: DirectedGraph
    capacities: np.ndarray
    c_art: np.ndarray
    c_swap: np.ndarray
    Z: float
    eps: float
    edge_map: np.ndarray
    lp: ReducedLP = field(repr=False)

    @property
    def m(self):
        return self.graph.m

    @property
    def n(self):
        return self.graph.n

    @property
    def k(self):
        return self.base.k

    @property
    def hub_edges(self):
        return np.arange(self.base.m, self.graph.m)

    def lp_art(self):
        return self.lp.with_costs(self.c_art)

    def lp_swap(self):
        return self.lp.with_costs(self.c_swap)


_GRID = float(2 ** 30)


def exact_reciprocal(x):
    """Reciprocals chosen so that ``x * s`` rounds to exactly 1 when any
    float allows it (for ``x = 49`` the rounded ``1 / x`` misses but its
    upper neighbour hits).  Otherwise ``x * s`` is within one ulp of 1.
    """
    x = np.asarray(x, dtype=float)
    s = 1.0 / x
    up = np.nextafter(s, np.inf)
    return np.where((x * s != 1.0) & (x * up == 1.0), up, s)


def _has_reciprocal(x):
    return x * exact_reciprocal(x) == 1.0


def _nudge(x, direction, partner=None, limit=4096):
    """Step entries of ``x`` along the dyadic grid until ``x`` (and
    ``partner(x)``, if given) admit exact reciprocals."""
    x = np.array(x, dtype=float)
    for _ in range(limit):
        ok = _has_reciprocal(x)
        if partner is not None:
            ok &= _has_reciprocal(partner(x))
        if ok.all():
            return x
        x = np.where(ok, x, x + direction / _GRID)
    raise ValidationError("no exactly centred starting point on the grid")


def augment_initial(inst, eps):
    """Hub-augmented instance with an exactly centered starting point.

    Returns ``(aug, x0, y0, s0)`` with ``x0 * s0 == 1`` entrywise for the
    artificial costs ``aug.c_art``.
    """
    if not (0.0 < eps <= 0.1):
        raise InvalidEps(f"eps must lie in (0, 0.1], got {eps!r}")
    n, m, k = inst.n, inst.m, inst.k
    hub = n + 1
    new_edges = []
    for v in range(1, n + 1):
        new_edges.append((v, hub))
        new_edges.append((hub, v))
    graph = DirectedGraph(n + 1, inst.graph.edges + tuple(new_edges))
    mp = graph.m
    B = build_incidence(inst.graph)
    u = inst.capacities

    # every value below sits on a dyadic grid, so the sums are exact for
    # integer data; each one is nudged along the grid until it has an
    # exact reciprocal
    f = _nudge(np.floor(u / (k + 1) * _GRID) / _GRID, -1,
               lambda f: u - k * f)
    flows = np.zeros((k, mp))
    out_edges = m + 2 * np.arange(n)
    in_edges = out_edges + 1
    for i in range(k):
        flows[i, :m] = f
        # deficit > 0: v still needs that much inflow
        deficit = inst.demands[i] + B.rmatvec(f)
        base = _nudge(np.ones(n), 1, lambda a: np.abs(deficit) + a)
        flows[i, out_edges] = np.maximum(-deficit, 0.0) + base
        flows[i, in_edges] = np.maximum(deficit, 0.0) + base
    cap = np.empty(mp)
    cap[:m] = u
    cap[m:] = flows[:, m:].sum(axis=0) + _nudge(np.ones(mp - m), 1)
    slack = cap - flows.sum(axis=0)

    x0 = np.concatenate([flows.reshape(-1), slack])
    s0 = exact_reciprocal(x0)
    c_art = s0.copy()
    Z = penalty_cost(m, k, inst.C, inst.U, eps)
    c_swap = np.zeros((k + 1, mp))
    c_swap[:k, :m] = inst.costs
    c_swap[:k, m:] = Z
    c_swap = c_swap.reshape(-1)

    demands = np.zeros((k, n + 1))
    demands[:, :n] = inst.demands
    base_aug = KCommodityInstance(graph, k, cap, np.zeros((k, mp)), demands)
    lp = reduce_full_rank(base_aug).with_costs(c_art)
    aug = AugmentedInstance(inst, graph, cap, c_art, c_swap, Z, eps,
                            np.arange(m), lp)
    y0 = np.zeros(lp.ncons)
    return aug, x0, y0, s0


def swap_costs(aug, iterate):
    """Slack after replacing the artificial costs by the penalised ones."""
    base = aug.base
    thresh = swap_threshold(base.m, base.k, base.C, base.U, aug.eps)
    if not iterate.t > thresh:
        raise PathParameterTooSmall(
            f"t={iterate.t:.6g} must exceed {thresh:.6g} before swapping")
    s_new = iterate.s + (aug.c_swap - aug.c_art)
    bad = np.flatnonzero(s_new <= 0)
    if bad.size:
        raise NegativeSlack(f"{bad.size} slack coordinates became non-positive")
    return s_new


def truncate_solution(x_aug, aug):
    """Restrict an augmented solution to the original edges."""
    k, mp = aug.k, aug.m
    blocks = np.asarray(x_aug, dtype=float).reshape(k + 1, mp)
    return blocks[:, aug.edge_map].reshape(-1)
