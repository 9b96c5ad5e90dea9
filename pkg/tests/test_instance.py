import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kflow.errors import (InvalidEps, NegativeSlack, NotConnected,
                          PathParameterTooSmall, UnbalancedDemand,
                          ValidationError)
from kflow.instance import (DirectedGraph, KCommodityInstance, augment_initial,
                            build_incidence, demand_residuals,
                            exact_reciprocal, penalty_cost,
                            reduce_full_rank, swap_costs, swap_threshold,
                            truncate_solution)
from kflow.ipm import Iterate, potential
from kflow.solver import generate_instance

from conftest import single_edge


def triangle():
    return DirectedGraph(3, [(1, 2), (2, 3), (3, 1)])


def test_incidence_smallest_graph():
    B = build_incidence(DirectedGraph(2, [(1, 2)]))
    np.testing.assert_array_equal(B.to_dense(), [[1.0, -1.0]])


def test_incidence_triangle():
    B = build_incidence(triangle()).to_dense()
    np.testing.assert_array_equal(B, [[1, -1, 0], [0, 1, -1], [-1, 0, 1]])


def test_incidence_sparse_matches_dense():
    B = build_incidence(triangle())
    np.testing.assert_array_equal(B.to_sparse().toarray(), B.to_dense())


def test_reduce_single_edge():
    inst = single_edge()
    lp = reduce_full_rank(inst)
    np.testing.assert_array_equal(lp.A.to_dense(), [[-1.0]])
    # b_1 = -d_1 without the first vertex, then the capacities
    np.testing.assert_array_equal(lp.b, [-4.0, 5.0])


def test_reduce_triangle_spanning_trees():
    g = triangle()
    inst = KCommodityInstance(g, 1, np.ones(3), np.zeros((1, 3)),
                              np.zeros((1, 3)))
    A = reduce_full_rank(inst).A.to_dense()
    assert A.shape == (3, 2)
    # matrix-tree theorem: three spanning trees
    assert np.linalg.det(A.T @ A) == pytest.approx(3.0)


def test_reduce_disconnected():
    g = DirectedGraph(4, [(1, 2), (3, 4)])
    inst = KCommodityInstance(g, 1, np.ones(2), np.zeros((1, 2)),
                              np.zeros((1, 4)))
    with pytest.raises(NotConnected):
        reduce_full_rank(inst)


def test_unbalanced_demand_names_commodity():
    g = DirectedGraph(2, [(1, 2)])
    with pytest.raises(UnbalancedDemand, match="commodity 2"):
        KCommodityInstance(g, 2, np.ones(1), np.zeros((2, 1)),
                           np.array([[-1.0, 1.0], [0.0, 1.0]]))


@pytest.mark.parametrize("edges", [[(1, 1)], [(1, 3)]])
def test_graph_rejects_bad_edges(edges):
    with pytest.raises(ValidationError):
        DirectedGraph(2, edges)


def test_capacity_below_one_rejected():
    with pytest.raises(ValidationError):
        KCommodityInstance(DirectedGraph(2, [(1, 2)]), 1, np.array([0.5]),
                           np.zeros((1, 1)), np.zeros((1, 2)))


def test_block_matrix_matches_operators(rng):
    inst = generate_instance(6, 10, 2, 5, 5, seed=3)
    lp = reduce_full_rank(inst)
    M = lp.block_matrix()
    x = rng.random(lp.nvars)
    y = rng.random(lp.ncons)
    np.testing.assert_allclose(lp.primal_lhs(x), M.T @ x, atol=1e-12)
    np.testing.assert_allclose(lp.dual_lhs(y), M @ y, atol=1e-12)


def test_penalty_cost_value():
    assert penalty_cost(3, 2, 5, 7, 0.1) == pytest.approx(63000.0)


def test_augment_single_edge_flow():
    g = DirectedGraph(2, [(1, 2)])
    inst = KCommodityInstance(g, 1, np.array([4.0]), np.zeros((1, 1)),
                              np.zeros((1, 2)))
    aug, x0, y0, s0 = augment_initial(inst, 0.1)
    assert x0[0] == 2.0
    assert aug.m == 1 + 2 * 2 and aug.n == 3


def test_augment_rejects_eps():
    with pytest.raises(InvalidEps):
        augment_initial(single_edge(), 0.5)


def test_swap_synthetic():
    class Aug:
        base = single_edge()
        eps = 0.1
        c_art = np.array([1.0])
        c_swap = np.array([5.0])

    it = Iterate(np.ones(1), np.array([100.0]), 1e30, np.zeros(1))
    np.testing.assert_array_equal(swap_costs(Aug, it), [104.0])
    it.t = 1.0
    with pytest.raises(PathParameterTooSmall):
        swap_costs(Aug, it)
    Aug.c_swap = np.array([-200.0])
    it.t = 1e30
    with pytest.raises(NegativeSlack):
        swap_costs(Aug, it)


def test_swap_unchanged_where_costs_agree():
    inst = single_edge()
    aug, x0, y0, s0 = augment_initial(inst, 0.1)
    t = 2 * swap_threshold(inst.m, inst.k, inst.C, inst.U, 0.1)
    s_t = t * s0
    s = swap_costs(aug, Iterate(x0, s_t, t, y0))
    same = aug.c_swap == aug.c_art
    np.testing.assert_array_equal(s[same], s_t[same])
    assert np.abs(s - s_t).max() <= aug.Z


def test_exact_reciprocal():
    x = np.array([49.0, 3.0, 0.75, 1e-3])
    np.testing.assert_array_equal(x * exact_reciprocal(x), 1.0)
    assert 49.0 * (1.0 / 49.0) != 1.0


def test_truncate_exact_without_hub_flow():
    inst = single_edge()
    aug, *_ = augment_initial(inst, 0.1)
    xa = np.zeros((2, aug.m))
    xa[0, 0] = 4.0
    xa[1, 0] = 1.0
    xa[:, 1:] = 0.0
    x = truncate_solution(xa.reshape(-1), aug)
    np.testing.assert_array_equal(x, [4.0, 1.0])
    assert demand_residuals(inst.graph, x[:1], inst.demands)[0] == 0.0


@st.composite
def instances(draw):
    n = draw(st.integers(2, 8))
    m = draw(st.integers(n - 1, 2 * n))
    k = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2 ** 31))
    return generate_instance(n, m, k, draw(st.integers(1, 9)),
                             draw(st.integers(0, 9)), seed=seed)


@settings(max_examples=40, deadline=None)
@given(instances())
def test_incidence_rows(inst):
    B = build_incidence(inst.graph).to_dense()
    assert np.all((B != 0).sum(axis=1) == 2)
    assert set(np.unique(B)) <= {-1.0, 0.0, 1.0}
    np.testing.assert_array_equal(B @ np.ones(inst.n), 0.0)


@settings(max_examples=40, deadline=None)
@given(instances())
def test_reduced_matrix_full_rank(inst):
    A = reduce_full_rank(inst).A.to_dense()
    assert np.linalg.svd(A.T @ A, compute_uv=False).min() > 1e-10


@settings(max_examples=40, deadline=None)
@given(instances(), st.sampled_from([0.1, 1e-2, 1e-4]))
def test_augmented_start(inst, eps):
    aug, x0, y0, s0 = augment_initial(inst, eps)
    k = inst.k
    assert np.all(x0 * s0 == 1.0)
    lp = aug.lp_art()
    np.testing.assert_array_equal(lp.primal_lhs(x0) - lp.b, 0.0)
    np.testing.assert_array_equal(lp.dual_lhs(y0) + s0, lp.c)
    N = (k + 1) * aug.m
    assert potential(x0 * s0, 4.0) == N
    slack = x0.reshape(k + 1, aug.m)[k]
    assert np.all(slack >= np.minimum(1.0, aug.capacities / (k + 1)) - 1e-12)
