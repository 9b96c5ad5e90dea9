"""End-to-end min-cost and max-throughput pipelines.

The instance is augmented with a hub vertex so that a perfectly centered
point is known for artificial costs.  The path is followed upwards until
the penalised costs can be swapped in without losing centrality, and then
downwards until the duality gap is below the target accuracy.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (CannotRepair, DimensionMismatch, IterationCapExceeded,
                     ValidationError)
from .instance import (DirectedGraph, KCommodityInstance, augment_initial,
                       build_incidence, demand_residuals, reduce_full_rank,
                       swap_costs, swap_threshold, truncate_solution)
from .ipm import (IpmParameters, Iterate, PathTrace, center, default_lambda,
                  refresh_feasibility, run_path)

__all__ = [
    "SolveConfig", "FlowSolution", "VerifyReport", "solve_mincost",
    "solve_throughput", "verify_certificate", "repair_demands",
    "generate_instance", "augmented_eps", "original_dual",
    "throughput_instance", "polish_dual", "polish_primal", "reverse_phase",
]


@dataclass(frozen=True)
class SolveConfig:
    eps: float = 1e-4
    engine: str = "direct"
    mode: str = "practical"
    seed: int = 0
    max_iterations: int = 5_000_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValidationError("eps must be positive")
        if self.max_iterations < 1:
            raise ValidationError("iteration cap must be at least 1")
        if self.engine not in ("direct", "maintained"):
            raise ValidationError(f"unknown engine {self.engine!r}")
        if self.mode not in ("strict", "practical"):
            raise ValidationError(f"unknown mode {self.mode!r}")


@dataclass
class VerifyReport:
    primal_residual: float
    dual_residual: float
    min_x: float
    min_s: float
    gap: float
    passed: bool

    def as_dict(self):
        return dict(primal_residual=self.primal_residual,
                    dual_residual=self.dual_residual, min_x=self.min_x,
                    min_s=self.min_s, gap=self.gap, passed=self.passed)


@dataclass
class FlowSolution:
    """Per-commodity flows on the original edges plus recomputed metrics."""

    flows: np.ndarray
    objective: float
    residuals: np.ndarray
    gap: float
    iterations: int
    counters: dict = field(default_factory=dict)
    throughput: float | None = None
    certificate: VerifyReport | None = None
    iterate: Iterate | None = field(default=None, repr=False)
    lp: object = field(default=None, repr=False)
    dual: np.ndarray | None = field(default=None, repr=False)


def verify_certificate(lp, x, y, s, eps):
    """Primal/dual feasibility and duality gap of ``(x, y, s)`` for ``lp``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != (lp.nvars,) or s.shape != (lp.nvars,) \
            or y.shape != (lp.ncons,):
        raise DimensionMismatch("certificate does not match the LP")
    pr = float(np.abs(lp.primal_lhs(x) - lp.b).max(initial=0.0))
    dr = float(np.abs(lp.dual_lhs(y) + s - lp.c).max(initial=0.0))
    gap = float(x @ s)
    tol = 1e-6 * (1.0 + float(np.abs(lp.b).max(initial=0.0)))
    passed = (pr <= tol and dr <= tol and x.min() >= -1e-9
              and s.min() >= -1e-9 and gap <= eps)
    return VerifyReport(pr, dr, float(x.min()), float(s.min()), gap,
                        bool(passed))


def augmented_eps(inst, eps):
    """Accuracy used for the augmentation: ``min(eps, 1/(16 lam), 0.1)``."""
    nvars = (inst.k + 1) * (inst.m + 2 * inst.n)
    return min(eps, 1.0 / (16.0 * default_lambda(nvars)), 0.1)


def reverse_phase(inst, cfg=SolveConfig()):
    """Augment ``inst`` and follow the artificial path up to ``t_mid``.

    Returns ``(aug, it, trace, params, eps_aug)``; ``it`` is re-centred
    at ``it.t == t_mid`` and still carries the artificial slacks.
    """
    reduce_full_rank(inst)
    eps_aug = augmented_eps(inst, cfg.eps)
    aug, x0, y0, s0 = augment_initial(inst, eps_aug)
    lp_art = aug.lp_art()
    params = IpmParameters.for_size(lp_art.nvars, mode=cfg.mode,
                                    max_iterations=cfg.max_iterations)
    u_aug = max(inst.U, float(aug.capacities.max()))
    t_mid = 2.0 * swap_threshold(inst.m, inst.k, inst.C, u_aug, eps_aug)
    trace = PathTrace()
    it = run_path(cfg.engine, lp_art, Iterate(x0, s0, 1.0, y0), t_mid,
                  params.with_direction("reverse"), trace=trace)
    center(lp_art, it, eps_aug / 4.0)
    return aug, it, trace, params, eps_aug


def _mincost_pipeline(inst, cfg):
    aug, it, trace, params, eps_aug = reverse_phase(inst, cfg)
    k = inst.k
    t_target = eps_aug / (4.0 * (k + 1) * aug.m)
    it.s = swap_costs(aug, it)
    lp_sw = aug.lp_swap()
    refresh_feasibility(lp_sw, it)
    left = cfg.max_iterations - trace.iterations
    params_fw = IpmParameters(params.lam, params.h, "forward", cfg.mode,
                              params.step_scale, params.max_scale,
                              max(left, 1))
    trace_fw = PathTrace()
    it = run_path(cfg.engine, lp_sw, it, t_target, params_fw, trace=trace_fw)
    # flow left on the hub edges means the demands cannot be met yet; keep
    # going, and treat a further drop of t by 1e6 as divergence
    t_floor = t_target * 1e-6
    while _hub_flow(aug, it) > cfg.eps:
        used = trace.iterations + trace_fw.iterations
        if it.t <= t_floor or used >= cfg.max_iterations:
            raise IterationCapExceeded(used, it.t)
        params_fw = replace(params_fw,
                            max_iterations=cfg.max_iterations - trace.iterations)
        it = run_path(cfg.engine, lp_sw, it, max(it.t / 100.0, t_floor),
                      params_fw, trace=trace_fw)
    counters = dict(trace.counters)
    for key, val in trace_fw.counters.items():
        if key.endswith("max_ratio"):
            counters[key] = max(counters.get(key, 0.0), val)
        elif isinstance(val, (int, float)):
            counters[key] = counters.get(key, 0) + val
        else:
            counters[key] = val
    counters["iterations_reverse"] = trace.iterations
    counters["iterations_forward"] = trace_fw.iterations
    counters["rejections"] = trace.rejections + trace_fw.rejections
    return aug, lp_sw, it, trace.iterations + trace_fw.iterations, counters, \
        eps_aug


def _hub_flow(aug, it):
    k = aug.k
    return float(it.x.reshape(k + 1, aug.m)[:k, aug.hub_edges].sum())


def original_dual(aug, y):
    """Restrict an augmented dual vector to the rows of the original LP.

    Hub edges never enter the original columns, so ``c - calA y`` on those
    columns is unchanged by the restriction.
    """
    k, n, m = aug.k, aug.base.n, aug.base.m
    nred_aug = aug.n - 1
    blocks = [y[i * nred_aug:i * nred_aug + n - 1] for i in range(k)]
    blocks.append(y[k * nred_aug:k * nred_aug + m])
    return np.concatenate(blocks)


def polish_dual(lp, x, s_ref, y):
    """Dual with the same reduced costs on the support of ``x`` but small norm.

    When some flows are zero in every feasible solution the dual optimal
    set is unbounded and the path drives ``y`` towards infinity, so that
    ``c - calA y`` loses all accuracy in floating point.  We fit the
    support columns (``x >= s``) by a minimum-norm solve; the most negative
    other column is then pinned to a small positive reduced cost and the
    fit repeated.  Returns ``y`` itself if the fit is inconsistent.
    """
    M = lp.block_matrix()
    fixed = x >= s_ref
    target = s_ref.copy()
    small = float(s_ref[fixed].max(initial=0.0))
    if small <= 0.0:
        return y
    tol = 1e-9 * (1.0 + float(np.abs(lp.c).max(initial=0.0)))
    for _ in range(int((~fixed).sum()) + 1):
        cand, *_ = np.linalg.lstsq(M[fixed], lp.c[fixed] - target[fixed],
                                   rcond=None)
        s = lp.c - M @ cand
        if np.abs(s[fixed] - target[fixed]).max() > small + tol:
            return y
        viol = ~fixed & (s <= 0.0)
        if not np.any(viol):
            return cand
        # pin one column at a time; pinning several can overconstrain
        j = int(np.argmin(np.where(viol, s, np.inf)))
        fixed[j] = True
        target[j] = min(s_ref[j], small)
    return y


def polish_primal(lp, x, s_ref):
    """Remove the residual of ``calA^T x = b`` using support columns only.

    The correction is the minimum-norm one in the metric of ``x`` on the
    support (``x >= s``), which is well conditioned even when the path's
    own weights ``x / s`` span many orders of magnitude.  Returns ``x``
    unchanged if the result would not be positive or not better.
    """
    r = lp.b - lp.primal_lhs(x)
    if not np.any(r):
        return x
    M = lp.block_matrix()
    sup = x >= s_ref
    xs = x[sup]
    u, *_ = np.linalg.lstsq(M[sup].T * xs, r, rcond=None)
    out = x.copy()
    out[sup] = xs + xs * u
    if np.any(out[sup] <= 0.0):
        return x
    if np.abs(lp.b - lp.primal_lhs(out)).max() >= np.abs(r).max():
        return x
    return out


def _best_certificate(lp, x, s_ref, y, eps):
    best = None
    x2 = polish_primal(lp, x, s_ref)
    for xc in (x, x2):
        for yc in (y, polish_dual(lp, xc, s_ref, y)):
            s = lp.c - lp.dual_lhs(yc)
            rep = verify_certificate(lp, xc, yc, s, eps)
            key = (not rep.passed, rep.primal_residual,
                   rep.gap if rep.min_s >= -1e-9 else math.inf)
            if best is None or key < best[0]:
                best = (key, xc, yc, rep)
    return best[1:]


def _solution(inst, aug, it, iterations, counters, eps):
    k, m = inst.k, inst.m
    lp = reduce_full_rank(inst)
    s_ref = it.s.reshape(k + 1, aug.m)[:, :m].reshape(-1)
    x, y, cert = _best_certificate(lp, truncate_solution(it.x, aug), s_ref,
                                   original_dual(aug, it.y), eps)
    s = lp.c - lp.dual_lhs(y)
    flows = x[:k * m].reshape(k, m).copy()
    objective = float((inst.costs * flows).sum())
    residuals = demand_residuals(inst.graph, flows, inst.demands)
    return FlowSolution(flows, objective, residuals, float(x @ s),
                        iterations, counters, None, cert, it, lp, y)


def solve_mincost(inst, cfg=SolveConfig()):
    """Approximately optimal k-commodity flow meeting the demands.

    Returns flows whose cost is within ``cfg.eps`` of optimal and whose
    per-commodity demand violations sum to at most ``cfg.eps``.
    """
    aug, _, it, iters, counters, _ = _mincost_pipeline(inst, cfg)
    return _solution(inst, aug, it, iters, counters, cfg.eps)


def throughput_instance(graph, capacities, pairs):
    """Instance whose min-cost solution maximises total routed flow."""
    k = len(pairs)
    if k < 1:
        raise ValidationError("need at least one source/sink pair")
    for idx, (a, b) in enumerate(pairs, start=1):
        if a == b:
            raise ValidationError(f"pair {idx} has equal source and sink")
        if not (1 <= a <= graph.n and 1 <= b <= graph.n):
            raise ValidationError(f"pair {idx} names a missing vertex")
    m = graph.m
    u = np.asarray(capacities, dtype=float)
    edges = graph.edges + tuple((b, a) for a, b in pairs)
    g2 = DirectedGraph(graph.n, edges)
    cap = np.concatenate([u, np.full(k, u.sum())])
    costs = np.zeros((k, m + k))
    costs[np.arange(k), m + np.arange(k)] = -1.0
    return KCommodityInstance(g2, k, cap, costs, np.zeros((k, graph.n)))


def solve_throughput(graph, capacities, pairs, cfg=SolveConfig()):
    """Maximum total flow routing commodity ``i`` from ``pairs[i][0]`` to
    ``pairs[i][1]`` under the shared capacities.

    The certificate refers to the gadget instance (one return edge per
    pair); the reported flows are repaired to conserve flow exactly.
    """
    inst = throughput_instance(graph, capacities, pairs)
    aug, _, it, iters, counters, _ = _mincost_pipeline(inst, cfg)
    raw = _solution(inst, aug, it, iters, counters, cfg.eps)
    k, m = inst.k, graph.m
    repaired = repair_demands(raw.flows, inst)
    through = float(repaired[np.arange(k), m + np.arange(k)].sum())
    residuals = demand_residuals(inst.graph, repaired, inst.demands)
    raw.flows = repaired[:, :m].copy()
    raw.objective = -through
    raw.throughput = through
    raw.residuals = residuals
    return raw


def repair_demands(flows, inst, tol=1e-12):
    """Cancel demand violations by removing flow along support paths.

    For each commodity, flow is reduced along a path (inside the support)
    from a vertex sending too much to a vertex receiving too much, until
    every vertex meets its demand.  Only removes flow, so capacities stay
    satisfied and costs change by at most the removed amount times the
    path cost.
    """
    flows = np.array(flows, dtype=float, ndmin=2)
    graph = inst.graph
    tails, heads = graph.tails, graph.heads
    B = build_incidence(graph)
    out_adj = [[] for _ in range(graph.n)]
    for e in range(graph.m):
        out_adj[tails[e]].append(e)
    for i in range(flows.shape[0]):
        f = flows[i]
        f[f < 0] = 0.0
        # r > 0: the vertex receives more than its demand
        r = -B.rmatvec(f) - inst.demands[i]
        scale = max(1.0, np.abs(f).max(initial=0.0))
        guard = 0
        while True:
            senders = np.flatnonzero(r < -tol * scale)
            if senders.size == 0:
                break
            guard += 1
            if guard > 10 * graph.m * graph.n + 10:
                raise CannotRepair("repair did not terminate")
            a = int(senders[0])
            path = _support_path(a, f, out_adj, tails, heads, r, tol * scale)
            if path is None:
                raise CannotRepair(
                    f"commodity {i + 1}: no support path from vertex {a + 1}")
            b = int(heads[path[-1]])
            delta = min(-r[a], r[b], f[path].min())
            f[path] -= delta
            r[a] += delta
            r[b] -= delta
        flows[i] = f
    return flows


def _support_path(src, f, out_adj, tails, heads, r, tol):
    """BFS along edges with positive flow to a vertex with surplus inflow."""
    prev = {src: -1}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for e in out_adj[v]:
            w = int(heads[e])
            if f[e] <= 0.0 or w in prev:
                continue
            prev[w] = e
            if r[w] > tol:
                path = []
                while prev[w] >= 0:
                    path.append(prev[w])
                    w = int(tails[prev[w]])
                return np.array(path[::-1], dtype=int)
            queue.append(w)
    return None


def generate_instance(n, m, k, U, C, seed=0):
    """Random instance that is feasible by construction.

    A weakly connected graph is drawn first; each commodity then routes a
    random amount along a random directed path, the demands are the net
    inflows of those flows and every capacity is at least the realised
    congestion.
    """
    if n < 2 or m < n - 1 or k < 1 or U < 1 or C < 0:
        raise ValidationError("need n >= 2, m >= n - 1, k >= 1, U >= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n) + 1
    edges = []
    for idx in range(1, n):
        a = int(perm[idx])
        b = int(perm[rng.integers(0, idx)])
        edges.append((a, b) if rng.random() < 0.5 else (b, a))
    while len(edges) < m:
        a, b = (int(v) for v in rng.integers(1, n + 1, size=2))
        if a != b:
            edges.append((a, b))
    order = rng.permutation(m)
    edges = [edges[i] for i in order]
    graph = DirectedGraph(n, edges)
    tails, heads = graph.tails, graph.heads
    out_adj = [[] for _ in range(n)]
    for e in range(m):
        out_adj[tails[e]].append(e)

    flows = np.zeros((k, m))
    budget = int(U)
    for i in range(k):
        amount = int(rng.integers(1, max(1, budget // k) + 1))
        path = _random_path(rng, n, out_adj, heads)
        flows[i, path] = amount
    cong = flows.sum(axis=0)
    # with U < k each commodity still sends one unit, so allow caps above U
    caps = np.array([int(rng.integers(max(1, int(c)), max(int(U), c) + 1))
                     for c in cong], dtype=float)
    B = build_incidence(graph)
    demands = np.array([-B.rmatvec(f) for f in flows])
    costs = rng.integers(0, int(C) + 1, size=(k, m)).astype(float)
    return KCommodityInstance(graph, k, caps, costs, demands)


def _random_path(rng, n, out_adj, heads):
    for _ in range(4 * n):
        v = int(rng.integers(0, n))
        path, seen = [], {v}
        length = int(rng.integers(1, n))
        while len(path) < length:
            choices = [e for e in out_adj[v] if int(heads[e]) not in seen]
            if not choices:
                break
            e = choices[int(rng.integers(0, len(choices)))]
            path.append(e)
            v = int(heads[e])
            seen.add(v)
        if path:
            return np.array(path, dtype=int)
    raise ValidationError("graph has no edges to route along")
