import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kflow.errors import (BatchExhausted, IndexOutOfRange, NonPositiveWeight,
                          PremiseViolated, ValidationError)
from kflow.instance import DirectedGraph, IncidenceMatrix, build_incidence
from kflow.maintenance import (CostCounters, ExactScanHH,
                               PrimalDualMaintenanceDS, StabilizerDS,
                               SumOfProductDS, SumOfVectorDS,
                               VectorMaintenanceDS, check_norm_bounds,
                               check_norm_lemma, log2m)

from conftest import (random_incidence, sop_replay, sov_replay,
                      stabilizer_stream, window_slope)


def unit_A():
    # one row, one column, entry +1
    return IncidenceMatrix(1, 1, np.array([0]), np.array([-1]))


def parallel_pair():
    """Two parallel edges 1 -> 2 with the first column deleted."""
    return build_incidence(DirectedGraph(2, [(1, 2), (1, 2)])) \
        .delete_first_column()


# -- prefix-sum structures -------------------------------------------------

def test_sop_empty():
    A = random_incidence(np.random.default_rng(0), 5, 8)
    assert not np.any(SumOfProductDS(A, np.ones(A.rows)).query())


def test_sop_hand_replay():
    # A = [2], d = 3 written as A = [1], d = 6
    ds = SumOfProductDS(unit_A(), [6.0])
    ds.add([1.0])
    ds.add([2.0])
    assert ds.query()[0] == 18.0
    ds.update([0], [2.0])
    ds.add([1.0])
    assert ds.query()[0] == 20.0


def test_sop_index_checks():
    ds = SumOfProductDS(unit_A(), [1.0])
    with pytest.raises(IndexOutOfRange):
        ds.update([1], [1.0])
    with pytest.raises(IndexOutOfRange):
        ds.query([-1])
    with pytest.raises(ValidationError):
        ds.update([0], [np.inf])


def test_sov_hand_replay():
    ds = SumOfVectorDS([5.0])
    assert ds.query()[0] == 0.0
    ds.add(2.0)
    ds.update([0], [1.0])
    ds.add(3.0)
    assert ds.query()[0] == 13.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sop_replay(seed):
    assert sop_replay(np.random.default_rng(seed), 200) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sov_replay(seed):
    assert sov_replay(np.random.default_rng(seed), 200) <= 1e-10


# -- heavy hitters ---------------------------------------------------------

def test_heavy_hitter_examples():
    A = parallel_pair()
    np.testing.assert_array_equal(A.to_dense(), [[-1.0], [-1.0]])
    hh = ExactScanHH(A, [1.0, 2.0])
    assert list(hh.query([0.3], 0.4)) == [1]
    assert hh.query([0.0], 0.4).size == 0
    # |g (A h)| equal to the threshold is not reported
    assert hh.query([0.5], 0.5).tolist() == [1]
    assert hh.query([0.5], 1.0).size == 0


def test_heavy_hitter_counts_scans():
    A = parallel_pair()
    hh = ExactScanHH(A, [1.0, 2.0])
    hh.query([0.3], 0.4)
    assert hh.counters["rows_scanned"] == 2
    assert hh.counters["returned"] == 1
    with pytest.raises(ValidationError):
        hh.query([0.3], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_heavy_hitter_matches_scan(seed):
    rng = np.random.default_rng(seed)
    A = random_incidence(rng, 7, 15)
    g = rng.normal(size=A.rows)
    h = rng.normal(size=A.cols)
    eps = float(rng.uniform(0.1, 2.0))
    ref = np.flatnonzero(np.abs(g * (A.to_dense() @ h)) > eps)
    np.testing.assert_array_equal(ExactScanHH(A, g).query(h, eps), ref)


# -- vector maintenance ----------------------------------------------------

def vm_stream(rng, A, steps, scale=0.05):
    """Random stream through a VectorMaintenanceDS, rebuilt every sqrt(m)
    adds; yields ``(sbar, exact, eps)`` after each add."""
    m = A.rows
    s0 = rng.uniform(1.0, 2.0, size=m)
    G = rng.uniform(0.5, 1.5, size=(2, m))
    w = rng.normal(size=m)
    eps = 0.01 * s0
    vm = VectorMaintenanceDS(A, s0, G, w, eps)
    for _ in range(steps):
        if vm.t == vm.max_adds:
            vm = VectorMaintenanceDS(A, vm.exact(), vm.G, vm.w, vm.eps)
        if rng.random() < 0.3:
            idx = rng.choice(m, size=2, replace=False)
            vm.update(idx, rng.uniform(0.5, 1.5, size=(2, 2)),
                      rng.normal(size=2))
        hs = scale * rng.normal(size=(2, A.cols))
        sbar, _ = vm.add(hs, scale * float(rng.normal()))
        yield sbar.copy(), vm.exact(), vm.eps.copy()


def test_vm_random_stream(rng):
    A = random_incidence(rng, 8, 16)
    for sbar, exact, eps in vm_stream(rng, A, 50):
        assert np.all(np.abs(sbar - exact) <= eps)


def test_vm_zero_stream(rng):
    A = random_incidence(rng, 8, 16)
    s0 = rng.uniform(1.0, 2.0, size=A.rows)
    vm = VectorMaintenanceDS(A, s0, np.ones((2, A.rows)), np.zeros(A.rows),
                             0.01)
    for _ in range(vm.max_adds):
        sbar, changed = vm.add(np.zeros((2, A.cols)), 0.0)
        assert changed.size == 0
        np.testing.assert_array_equal(sbar, s0)
    with pytest.raises(BatchExhausted):
        vm.add(np.zeros((2, A.cols)), 0.0)


def test_vm_large_step_reported_at_once(rng):
    A = random_incidence(rng, 8, 16)
    m = A.rows
    eps = 0.01
    w = np.zeros(m)
    w[3] = 1.0
    vm = VectorMaintenanceDS(A, np.ones(m), np.ones((1, m)), w, eps)
    sbar, changed = vm.add(np.zeros((1, A.cols)), 2 * eps)
    assert changed.tolist() == [3]
    assert sbar[3] == pytest.approx(1 + 2 * eps)


def test_vm_rejects_bad_accuracy(rng):
    A = random_incidence(rng, 4, 5)
    with pytest.raises(ValidationError):
        VectorMaintenanceDS(A, np.ones(A.rows), np.ones((1, A.rows)),
                            np.zeros(A.rows), 0.0)


# -- primal-dual maintenance -----------------------------------------------

def approx(a, b, eps):
    return bool(np.all(np.abs(np.log(a / b)) <= eps))


def test_pdm_random_stream(rng):
    A = parallel_pair()
    k, eps = 1, 0.1
    x0 = rng.uniform(1.0, 2.0, size=(k + 1, A.rows))
    s0 = 1.0 / x0
    pdm = PrimalDualMaintenanceDS(A, x0, s0, np.zeros(A.rows),
                                  np.zeros((k + 1, A.rows)), eps,
                                  max_adds=10)
    for _ in range(10):
        pdm.update(np.arange(A.rows), 0.02 * rng.normal(size=A.rows),
                   0.02 * rng.normal(size=(k + 1, A.rows)))
        xbar, sbar, _ = pdm.add(0.02 * rng.normal(size=(k, A.cols)), 1.0)
        x, s = pdm.exact()
        assert approx(xbar, x, eps) and approx(sbar, s, eps)


def test_pdm_zero_stream(rng):
    A = random_incidence(rng, 5, 8)
    x0 = rng.uniform(1.0, 2.0, size=(3, A.rows))
    s0 = rng.uniform(1.0, 2.0, size=(3, A.rows))
    pdm = PrimalDualMaintenanceDS(A, x0, s0, np.zeros(A.rows),
                                  np.zeros((3, A.rows)), 0.1)
    for _ in range(pdm.xvm[0].max_adds):
        xbar, sbar, edges = pdm.add(np.zeros((2, A.cols)), 0.5)
        assert edges.size == 0
    np.testing.assert_array_equal(xbar, x0)
    np.testing.assert_array_equal(sbar, s0)


def test_pdm_below_threshold_never_rewrites():
    A = parallel_pair()
    eps = 0.1
    x0 = np.ones((2, 2))
    s0 = np.ones((2, 2))
    steps = 4
    # total drift of s stays at 0.9 of the rewrite threshold eps / 5
    w = np.full(2, 0.9 * eps / 5 / steps)
    pdm = PrimalDualMaintenanceDS(A, x0, s0, w, np.zeros((2, 2)), eps,
                                  max_adds=steps)
    for _ in range(steps):
        _, sbar, _ = pdm.add(np.zeros((1, 1)), 1.0)
    assert pdm.counters["rewrites"] == 0
    np.testing.assert_array_equal(sbar, s0)
    _, s = pdm.exact()
    np.testing.assert_allclose(s, 1 + 0.9 * eps / 5)


def test_pdm_guards(rng):
    A = parallel_pair()
    with pytest.raises(NonPositiveWeight):
        PrimalDualMaintenanceDS(A, -np.ones((2, 2)), np.ones((2, 2)),
                                np.zeros(2), np.zeros((2, 2)), 0.1)
    pdm = PrimalDualMaintenanceDS(A, np.ones((2, 2)), np.ones((2, 2)),
                                  np.zeros(2), np.zeros((2, 2)), 0.1)
    with pytest.raises(PremiseViolated):
        pdm.add(np.zeros((1, 1)), 1.0, norms=(0.5, 0.0))


# -- stabilizer ------------------------------------------------------------

def test_stabilizer_constant_stream():
    st_ = StabilizerDS(np.arange(16.0), 1.0, 1.0)
    for _ in range(20):
        _, changed = st_.stabilize(np.zeros(16))
        assert changed.size == 0


def test_stabilizer_drift_caught_within_two_steps():
    m, beta = 16, 1.0
    st_ = StabilizerDS(np.zeros(m), 1.0, beta)
    drift = beta / (2 * log2m(m))
    seen = []
    for t in range(1, 3):
        _, changed = st_.stabilize(([5], [drift]))
        seen.extend(changed.tolist())
    assert seen and set(seen) == {5}


@pytest.mark.parametrize("seed", range(5))
def test_stabilizer_random_streams(seed):
    worst, changes = stabilizer_stream(seed)
    assert worst <= 1.0
    assert window_slope(changes) <= 1.2


# -- norm inequalities -----------------------------------------------------

def test_norm_lemma_equal_v(rng):
    A = random_incidence(rng, 4, 6)
    d = rng.uniform(0.5, 2.0, size=(3, A.rows))
    v = np.tile(rng.normal(size=A.cols), (3, 1))
    lhs, rhs, ok = check_norm_lemma(d, v, rng.normal(size=A.rows), A)
    assert lhs == 0.0 and ok


def test_norm_lemma_scalar():
    a, b, delta = 2.0, 5.0, 0.7
    lhs, rhs, ok = check_norm_lemma([[a], [b]], [[delta], [0.0]], [0.0],
                                    unit_A())
    assert lhs == pytest.approx(a * b * delta ** 2 / (a + b))
    assert rhs == pytest.approx(4 * lhs)
    assert ok


def test_norm_lemma_rejects_nonpositive():
    with pytest.raises(NonPositiveWeight):
        check_norm_lemma([[1.0], [0.0]], [[1.0], [0.0]], [0.0], unit_A())


def norm_draws(rng, draws):
    for _ in range(draws):
        k = int(rng.integers(1, 5))
        m = int(rng.integers(2, 11))
        n = int(rng.integers(2, min(m, 6) + 1))
        A = random_incidence(rng, n, max(m, n - 1))
        yield k, A


def test_norm_lemma_random(rng):
    for k, A in norm_draws(rng, 200):
        d = np.exp(rng.normal(scale=2.0, size=(k + 1, A.rows)))
        v = rng.normal(size=(k + 1, A.cols))
        assert check_norm_lemma(d, v, rng.normal(size=A.rows), A)[2]


def test_norm_bounds_random(rng):
    for k, A in norm_draws(rng, 200):
        mu = float(np.exp(rng.normal()))
        sbar = np.exp(rng.normal(size=(k + 1, A.rows)))
        xbar = mu / sbar * np.exp(rng.uniform(-0.2, 0.2, size=sbar.shape))
        v = rng.normal(size=(k + 1, A.cols))
        assert check_norm_bounds(xbar, sbar, v, rng.normal(size=A.rows), A,
                                 mu)[3]


def test_norm_bounds_premise():
    with pytest.raises(PremiseViolated):
        check_norm_bounds([[2.0], [1.0]], [[1.0], [1.0]], [[0.0], [0.0]],
                          [0.0], unit_A(), 1.0)


# -- counters --------------------------------------------------------------

def test_counters_never_decrease(rng):
    c = CostCounters()
    with pytest.raises(ValueError):
        c.bump("x", -1)
    A = random_incidence(rng, 6, 10)
    vm = VectorMaintenanceDS(A, np.ones(A.rows), np.ones((1, A.rows)),
                             rng.normal(size=A.rows), 0.01, max_adds=40)
    prev = {}
    for _ in range(40):
        vm.add(0.05 * rng.normal(size=(1, A.cols)), 0.05)
        now = vm.counters.as_dict()
        assert all(now.get(key, 0) >= val for key, val in prev.items())
        prev = now
    assert prev["add"] == 40
