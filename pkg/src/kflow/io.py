"""Text formats for instances, solutions and run reports.

Instance::

    p kflow <n> <m> <k>
    e <tail> <head> <cap>          (m lines, edges numbered from 1)
    c <i> <edge> <cost>            (optional, default 0)
    d <i> <vertex> <demand>        (optional, default 0)

Solution::

    o <objective>
    f <i> <edge> <flow>
    y <row> <value>                (optional dual certificate)

Lines starting with ``#`` and blank lines are ignored.  Reals are written
with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .instance import DirectedGraph, KCommodityInstance

__all__ = [
    "parse_instance", "format_instance", "Solution", "parse_solution",
    "format_solution", "RunReport", "fmt_real",
]


def fmt_real(x):
    """Shortest text that is exact at 17 significant digits."""
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.17g}"


def _records(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _int(tok, lineno, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(lineno, f"{what} must be an integer, got {tok!r}")


def _real(tok, lineno, what):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(lineno, f"{what} must be a number, got {tok!r}")
    if not np.isfinite(val):
        raise ParseError(lineno, f"{what} must be finite")
    return val


def _expect(fields, count, lineno):
    if len(fields) != count:
        raise ParseError(lineno, f"expected {count} fields, got {len(fields)}")


def parse_instance(text):
    """Parse the instance format into a :class:`KCommodityInstance`."""
    header = None
    edges, caps = [], []
    costs, demands = [], []
    first = True
    for lineno, f in _records(text):
        tag = f[0]
        if first:
            first = False
            if tag != "p" or len(f) != 5 or f[1] != "kflow":
                raise ParseError(lineno, "expected header 'p kflow <n> <m> <k>'")
            n, m, k = (_int(tok, lineno, name)
                       for tok, name in zip(f[2:], ("n", "m", "k")))
            if n < 1 or m < 0 or k < 1:
                raise ParseError(lineno, "need n >= 1, m >= 0, k >= 1")
            header = (n, m, k)
            continue
        if tag == "p":
            raise ParseError(lineno, "duplicate header")
        n, m, k = header
        if tag == "e":
            _expect(f, 4, lineno)
            if len(edges) == m:
                raise ParseError(lineno, f"more than {m} edges")
            a = _int(f[1], lineno, "tail")
            b = _int(f[2], lineno, "head")
            if not (1 <= a <= n and 1 <= b <= n):
                raise ParseError(lineno, "edge endpoint out of range")
            edges.append((a, b))
            caps.append(_real(f[3], lineno, "capacity"))
        elif tag in ("c", "d"):
            _expect(f, 4, lineno)
            i = _int(f[1], lineno, "commodity")
            j = _int(f[2], lineno, "index")
            val = _real(f[3], lineno, "value")
            if not 1 <= i <= k:
                raise ParseError(lineno, f"commodity {i} out of range")
            limit = m if tag == "c" else n
            if not 1 <= j <= limit:
                raise ParseError(lineno, f"index {j} out of range")
            (costs if tag == "c" else demands).append((i - 1, j - 1, val))
        else:
            raise ParseError(lineno, f"unknown record {tag!r}")
    if header is None:
        raise ParseError(1, "missing 'p kflow' header")
    n, m, k = header
    if len(edges) != m:
        raise ParseError(lineno if edges else 1,
                         f"header announces {m} edges, found {len(edges)}")
    C = np.zeros((k, m))
    D = np.zeros((k, n))
    for i, j, val in costs:
        C[i, j] = val
    for i, j, val in demands:
        D[i, j] = val
    return KCommodityInstance(DirectedGraph(n, edges), k, np.array(caps), C, D)


def format_instance(inst):
    lines = [f"p kflow {inst.n} {inst.m} {inst.k}"]
    for (a, b), u in zip(inst.graph.edges, inst.capacities):
        lines.append(f"e {a} {b} {fmt_real(u)}")
    for i in range(inst.k):
        for e in np.flatnonzero(inst.costs[i]):
            lines.append(f"c {i + 1} {e + 1} {fmt_real(inst.costs[i, e])}")
        for v in np.flatnonzero(inst.demands[i]):
            lines.append(f"d {i + 1} {v + 1} {fmt_real(inst.demands[i, v])}")
    return "\n".join(lines) + "\n"


@dataclass
class Solution:
    flows: np.ndarray
    objective: float | None = None
    dual: np.ndarray | None = None


def format_solution(flows, objective, dual=None):
    flows = np.atleast_2d(np.asarray(flows, dtype=float))
    lines = [f"o {fmt_real(objective)}"]
    for i, row in enumerate(flows, start=1):
        for e, val in enumerate(row, start=1):
            if val != 0.0:
                lines.append(f"f {i} {e} {fmt_real(val)}")
    if dual is not None:
        for r, val in enumerate(np.asarray(dual, dtype=float), start=1):
            lines.append(f"y {r} {fmt_real(val)}")
    return "\n".join(lines) + "\n"


def parse_solution(text, k, m, ncons=None):
    """Parse a solution for an instance with ``k`` commodities, ``m`` edges."""
    flows = np.zeros((k, m))
    dual = {}
    objective = None
    for lineno, f in _records(text):
        tag = f[0]
        if tag == "o":
            _expect(f, 2, lineno)
            objective = _real(f[1], lineno, "objective")
        elif tag == "f":
            _expect(f, 4, lineno)
            i = _int(f[1], lineno, "commodity")
            e = _int(f[2], lineno, "edge")
            if not (1 <= i <= k and 1 <= e <= m):
                raise ParseError(lineno, "flow index out of range")
            flows[i - 1, e - 1] = _real(f[3], lineno, "flow")
        elif tag == "y":
            _expect(f, 3, lineno)
            r = _int(f[1], lineno, "row")
            if r < 1 or (ncons is not None and r > ncons):
                raise ParseError(lineno, "dual row out of range")
            dual[r - 1] = _real(f[2], lineno, "dual value")
        else:
            raise ParseError(lineno, f"unknown record {tag!r}")
    y = None
    if dual:
        size = ncons if ncons is not None else max(dual) + 1
        y = np.zeros(size)
        for r, val in dual.items():
            y[r] = val
    return Solution(flows, objective, y)


@dataclass
class RunReport:
    """Everything needed to judge a run without the solver state."""

    n: int
    m: int
    k: int
    C: float
    U: float
    config: dict
    objective: float
    residuals: list
    gap: float
    iterations: int
    wall_time: float
    passed: bool
    throughput: float | None = None
    checks: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)

    @classmethod
    def from_solution(cls, inst, cfg, sol, wall_time, eps):
        res = [float(r) for r in sol.residuals]
        checks = {
            "certificate": bool(sol.certificate.passed),
            "residual_sum": bool(sum(res) <= eps),
            "gap": bool(sol.gap <= eps),
        }
        return cls(inst.n, inst.m, inst.k, inst.C, inst.U,
                   dict(sorted(asdict(cfg).items())), float(sol.objective),
                   res, float(sol.gap), int(sol.iterations),
                   float(wall_time), all(checks.values()),
                   None if sol.throughput is None else float(sol.throughput),
                   checks, _nest(sol.counters))

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True,
                          default=_json_default)

    def to_text(self):
        d = asdict(self)
        lines = []

        def emit(prefix, val):
            if isinstance(val, dict):
                for key in sorted(val):
                    emit(f"{prefix}.{key}" if prefix else key, val[key])
            elif isinstance(val, list):
                emit(prefix, " ".join(_scalar(v) for v in val))
            else:
                lines.append(f"{prefix} {_scalar(val)}")

        emit("", d)
        return "\n".join(lines) + "\n"


def _scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return fmt_real(v)
    return str(v)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _nest(counters):
    """``{'vm.add': 3}`` -> ``{'vm': {'add': 3}}``."""
    out = {}
    for key, val in sorted(counters.items()):
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"counter {key!r} clashes")
        node[parts[-1]] = val.item() if isinstance(val, np.generic) else val
    return out
