"""Robust central-path interior point method for k-commodity LPs.

Centrality is measured by ``Phi(v - 1) = sum cosh(lam (v_i - 1))`` with
``v = x s / t``.  Each iteration moves ``t`` by a factor ``1 + h`` and
takes a step along the normalised potential gradient, solved through the
Schur complement of the capacity block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from ._kernels_py import (AT_TARGET, LOST, NONPOS, NSTATS, SINGULAR, ST_CENT,
                          ST_PHI, ST_RATIO, ST_SHIGH, ST_SLOW, ST_SSTEP,
                          ST_XLOW, ST_XSTEP, ST_XU)
from .errors import (CenteringLost, DimensionMismatch, IterationCapExceeded,
                     Overflow, SingularSystem, ZeroGradient)
from .linalg import BlockWeights, DirectSchur, apply_reduced_inverse

__all__ = [
    "IpmParameters", "Iterate", "CenteringState", "PathTrace", "potential",
    "potential_gradient", "step_generic", "step_commodity", "normal_solve",
    "refresh_feasibility", "center", "run_path", "centrality",
]

_EXP_GUARD = 300.0
_GNORM_TINY = 1e-14


def default_lambda(nvars):
    return 16.0 * math.log(40.0 * math.sqrt(nvars))


def default_h(nvars, lam=None):
    lam = default_lambda(nvars) if lam is None else lam
    return 1.0 / (128.0 * lam * math.sqrt(nvars))


@dataclass(frozen=True)
class IpmParameters:
    """Step-size parameters and run controls.

    ``step_scale`` multiplies both ``h`` and the step length in practical
    mode and adapts between 1 and ``max_scale``.
    """

    lam: float
    h: float
    direction: str = "forward"
    mode: str = "strict"
    step_scale: float = 1.0
    max_scale: float = 2048.0
    max_iterations: int = 10_000_000

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.mode not in ("strict", "practical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.step_scale < 1.0 or self.max_iterations < 1:
            raise ValueError("step_scale must be >= 1 and the cap >= 1")

    @classmethod
    def for_size(cls, nvars, **kw):
        lam = default_lambda(nvars)
        return cls(lam=lam, h=default_h(nvars, lam), **kw)

    def with_direction(self, direction):
        return replace(self, direction=direction)

    @property
    def eps_approx(self):
        """Multiplicative accuracy asked of the maintained ``xbar, sbar``."""
        return 1.0 / (500.0 * self.lam)


@dataclass
class Iterate:
    x: np.ndarray
    s: np.ndarray
    t: float
    y: np.ndarray

    def copy(self):
        return Iterate(self.x.copy(), self.s.copy(), float(self.t),
                       self.y.copy())

    @property
    def gap(self):
        return float(self.x @ self.s)


def centrality(x, s, t):
    return float(np.abs(x * s / t - 1.0).max())


def potential(v, lam):
    """``sum_i cosh(lam (v_i - 1))``."""
    a = lam * (np.asarray(v, dtype=float) - 1.0)
    if np.any(np.abs(a) > _EXP_GUARD):
        raise Overflow("lam * |v - 1| exceeds 300")
    return float(np.cosh(a).sum())


def safe_potential(v, lam):
    """``potential`` that returns ``inf`` instead of raising."""
    a = lam * np.abs(np.asarray(v, dtype=float) - 1.0)
    if np.any(a > _EXP_GUARD):
        return math.inf
    return float(np.cosh(a).sum())


def potential_gradient(v, lam):
    a = lam * (np.asarray(v, dtype=float) - 1.0)
    if np.any(np.abs(a) > _EXP_GUARD):
        raise Overflow("lam * |v - 1| exceeds 300")
    return lam * np.sinh(a)


@dataclass
class CenteringState:
    """Approximate iterate and the gradient evaluated at ``vbar``."""

    xbar: np.ndarray
    sbar: np.ndarray
    vbar: np.ndarray
    g: np.ndarray
    gnorm: float

    @classmethod
    def build(cls, xbar, sbar, tref, lam):
        vbar = xbar * sbar / tref
        g = -potential_gradient(vbar, lam)
        return cls(xbar, sbar, vbar, g, float(np.linalg.norm(g)))


def _beta(cs, t_next, lam, scale=1.0):
    if cs.gnorm < _GNORM_TINY:
        raise ZeroGradient("gradient vanished; iterate is exactly centered")
    return t_next / (32.0 * lam * cs.gnorm) * scale


def step_generic(blockA, cs, t_next, lam, scale=1.0):
    """Reference step with a dense solve of the full normal matrix."""
    beta = _beta(cs, t_next, lam, scale)
    d = cs.xbar / cs.sbar
    H = blockA.T @ (d[:, None] * blockA)
    rhs = blockA.T @ (cs.g / cs.sbar)
    z = np.linalg.solve(H, rhs)
    ds = beta * (blockA @ z)
    dx = beta * cs.g / cs.sbar - d * ds
    return dx, ds


@dataclass
class CommodityStep:
    dx: np.ndarray
    ds: np.ndarray
    v: np.ndarray
    w: np.ndarray
    dy: np.ndarray
    beta: float


def commodity_direction(sys, cs, k):
    """Unit-beta blocks ``(dx, ds, v, w, z)``; ``ds = calA z``."""
    A = sys.A
    m = A.rows
    w, v = apply_reduced_inverse(sys, cs.g, cs.sbar)
    d = sys.weights.d
    Av = A.matvec(v.T).T
    q = (d[:k] * Av).sum(axis=0) / sys.weights.dsum
    ycap = w - q
    ds = np.empty((k + 1, m))
    ds[:k] = w + Av - q
    ds[k] = ycap
    dx = (cs.g / cs.sbar).reshape(k + 1, m) - d * ds
    z = np.concatenate([v.reshape(-1), ycap])
    return dx.reshape(-1), ds.reshape(-1), v, w, z


def step_commodity(sys, cs, t_next, lam, scale=1.0):
    """Step of the commodity method; ``sys`` must hold weights ``xbar/sbar``."""
    beta = _beta(cs, t_next, lam, scale)
    dx, ds, v, w, z = commodity_direction(sys, cs, sys.k)
    return CommodityStep(beta * dx, beta * ds, v, w, -beta * z, beta)


def normal_solve(sys, rhs):
    """Solve ``calA^T D calA z = rhs`` with the block elimination of ``E``."""
    A, k = sys.A, sys.k
    d, dsum = sys.weights.d, sys.weights.dsum
    nr, m = A.cols, A.rows
    top = rhs[:k * nr].reshape(k, nr)
    bot = rhs[k * nr:]
    u = bot / dsum
    red = top - A.rmatvec((d[:k] * u).T).T
    v = sys.solve(red.reshape(-1)).reshape(k, nr)
    Av = A.matvec(v.T).T
    zc = u - (d[:k] * Av).sum(axis=0) / dsum
    return np.concatenate([v.reshape(-1), zc])


def refresh_feasibility(lp, it, sys=None, max_rel=1e-3):
    """Pull ``x`` back onto ``calA^T x = b`` and rebuild ``s = c - calA y``.

    Both corrections are weighted least-squares projections with weights
    ``x / s``, so coordinates move in proportion to their own size.  A
    correction is skipped if it would move any coordinate by more than
    ``max_rel`` relative to its current value.
    """
    k = lp.k
    if sys is None:
        sys = DirectSchur(lp.A, k)
        sys.set_weights(BlockWeights((it.x / it.s).reshape(k + 1, -1)))
    d = (it.x / it.s)
    rp = lp.primal_lhs(it.x) - lp.b
    if np.any(rp):
        z = normal_solve(sys, rp)
        x_new = it.x - d * lp.dual_lhs(z)
        rp_new = lp.primal_lhs(x_new) - lp.b
        if (_small_move(x_new, it.x, max_rel)
                and np.abs(rp_new).max() < np.abs(rp).max()):
            it.x = x_new
    rd = lp.c - lp.dual_lhs(it.y) - it.s
    z = normal_solve(sys, lp.primal_lhs(d * rd))
    y_new = it.y + z
    s_new = lp.c - lp.dual_lhs(y_new)
    if _small_move(s_new, it.s, max_rel):
        # s is rebuilt from y, so the dual residual vanishes by
        # construction; only the size of the move is checked
        it.y, it.s = y_new, s_new
    return it


def _small_move(new, old, max_rel):
    # an ill-conditioned projection can put a large relative error on tiny
    # coordinates; such a correction is worse than the residual it removes
    return bool(np.all(np.isfinite(new)) and np.all(new > 0)
                and np.abs(new / old - 1.0).max() <= max_rel)


def center(lp, it, tol, max_steps=60):
    """Newton centering at fixed ``t`` until ``max |log(x s / t)| <= tol``."""
    k = lp.k
    for _ in range(max_steps):
        v = it.x * it.s / it.t
        if np.abs(np.log(v)).max() <= tol:
            return it
        sys = DirectSchur(lp.A, k)
        sys.set_weights(BlockWeights((it.x / it.s).reshape(k + 1, -1)))
        r = it.t - it.x * it.s
        zr = normal_solve(sys, lp.primal_lhs(r / it.s))
        ds = lp.dual_lhs(zr)
        dx = r / it.s - (it.x / it.s) * ds
        alpha = 1.0
        with np.errstate(divide="ignore"):
            for vec, dv in ((it.x, dx), (it.s, ds)):
                neg = dv < 0
                if np.any(neg):
                    alpha = min(alpha, 0.9 * float((-vec[neg] / dv[neg]).min()))
        it.x = it.x + alpha * dx
        it.s = it.s + alpha * ds
        it.y = it.y - alpha * zr
        refresh_feasibility(lp, it)
    v = it.x * it.s / it.t
    if np.abs(np.log(v)).max() > tol:
        raise CenteringLost("Newton centering did not converge")
    return it


@dataclass
class PathTrace:
    """Per-batch record of a path run plus running maxima of the step stats."""

    iterations: int = 0
    rejections: int = 0
    batches: list = field(default_factory=list)
    stats: np.ndarray = field(default_factory=lambda: np.zeros(NSTATS))
    counters: dict = field(default_factory=dict)

    def record(self, it, scale):
        self.batches.append((self.iterations, float(it.t), it.gap,
                             centrality(it.x, it.s, it.t), float(scale)))

    @property
    def max_centrality(self):
        return float(self.stats[ST_CENT])

    @property
    def max_step_norms(self):
        return float(self.stats[ST_SSTEP]), float(self.stats[ST_XSTEP])

    @property
    def max_potential_ratio(self):
        return float(self.stats[ST_PHI])

    @property
    def bound_ratios(self):
        """Worst ratios for ``x <= u``, ``x >= t/(3Ns0)``, ``s >= t/(10u)``,
        ``s <= 3N s0`` and the ratio bound; each is ``<= 1`` when it holds."""
        return {name: float(self.stats[i]) for name, i in (
            ("x_upper", ST_XU), ("x_lower", ST_XLOW), ("s_lower", ST_SLOW),
            ("s_upper", ST_SHIGH), ("ratio", ST_RATIO))}


def _check_start(lp, start):
    N = lp.nvars
    if start.x.shape != (N,) or start.s.shape != (N,):
        raise DimensionMismatch("iterate does not match the LP")
    if start.y.shape != (lp.ncons,):
        raise DimensionMismatch("dual vector does not match the LP")


def run_path(engine, lp, start, t_target, params, *, bounds=None,
             trace=None, refresh=True, backend=None):
    """Follow the central path from ``start.t`` to ``t_target``.

    Parameters
    ----------
    engine : {'direct', 'maintained'}
    lp : ReducedLP
    start : Iterate
        Centered starting point (not modified).
    t_target : float
    params : IpmParameters
    bounds : tuple of arrays, optional
        ``(u, x_init, s_init)`` enabling the magnitude and ratio checks.
    trace : PathTrace, optional
        Filled in place.
    refresh : bool
        Re-project onto the primal and dual constraints between batches.

    Returns
    -------
    Iterate
    """
    _check_start(lp, start)
    trace = PathTrace() if trace is None else trace
    it = start.copy()
    forward = params.direction == "forward"
    if (forward and t_target > it.t) or (not forward and t_target < it.t):
        raise ValueError("t_target lies on the wrong side of start.t")
    if it.t == t_target:
        trace.record(it, params.step_scale)
        return it
    if engine == "direct":
        return _run_direct(lp, it, t_target, params, bounds, trace, refresh,
                           backend)
    if engine == "maintained":
        from .maintained import run_maintained
        return run_maintained(lp, it, t_target, params, bounds, trace,
                              refresh)
    raise ValueError(f"unknown engine {engine!r}")


def _run_direct(lp, it, t_target, params, bounds, trace, refresh, backend):
    kern = kernels.get_backend(backend) if backend else kernels
    A = lp.A
    N = lp.nvars
    forward = params.direction == "forward"
    practical = params.mode == "practical"
    tref_tol = 1.0 / (96.0 * params.lam)
    if bounds is not None:
        ub, xi, si = (np.ascontiguousarray(b, dtype=float) for b in bounds)
    else:
        ub = xi = si = np.zeros(0)
    scale = params.step_scale if practical else 1.0
    tref = it.t
    x = np.ascontiguousarray(it.x, dtype=float)
    s = np.ascontiguousarray(it.s, dtype=float)
    y = np.ascontiguousarray(it.y, dtype=float)
    pos = np.ascontiguousarray(A.pos, dtype=np.intp)
    neg = np.ascontiguousarray(A.neg, dtype=np.intp)
    stats = trace.stats
    chunk = 4096
    while True:
        left = params.max_iterations - trace.iterations
        if left <= 0:
            it.x, it.s, it.y = x, s, y
            raise IterationCapExceeded(trace.iterations, it.t)
        t, tref, scale, its, rej, status = kern.path_batch(
            pos, neg, A.cols, lp.k, x, s, y, it.t, t_target, tref,
            int(forward), params.h, params.lam, scale, params.max_scale,
            int(practical), min(chunk, left), tref_tol, 0.5, ub, xi, si,
            stats)
        it.t = t
        trace.iterations += its
        trace.rejections += rej
        it.x, it.s, it.y = x, s, y
        if status == SINGULAR:
            raise SingularSystem("Cholesky of the Schur complement failed")
        if status in (LOST, NONPOS):
            raise CenteringLost(
                f"step left the centered region at t={it.t:.6g}")
        if refresh:
            refresh_feasibility(lp, it)
            x, s, y = it.x, it.s, it.y
        trace.record(it, scale)
        phi = safe_potential(it.x * it.s / it.t, params.lam)
        if phi > 64.0 * N:
            raise CenteringLost(f"potential {phi:.3g} exceeds 64(k+1)m")
        if status == AT_TARGET or it.t == t_target:
            return it
