import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from mletpf.ot_core import (
    InfeasibleError,
    InvalidInputError,
    as_marginal,
    coupling_cost,
    solve_assignment,
    solve_transport,
    solve_transport_1d,
    squared_distance_cost,
)
from oracles import birkhoff_cost, permutation_minimum, random_weights, vertex_enumeration


def linprog_cost(p, q, c):
    n = p.size
    A = np.vstack([np.kron(np.eye(n), np.ones(n)), np.kron(np.ones(n), np.eye(n))])
    res = linprog(c.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None),
                  method="highs")
    assert res.status == 0
    return res.fun


def assert_feasible(d, p, q, tol=1e-9):
    m = d.toarray()
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), p, atol=tol * max(1, p.max()))
    np.testing.assert_allclose(m.sum(axis=0), q, atol=tol * max(1, q.max()))


def test_identical_point_sets():
    d = solve_transport([0.5, 0.5], [0.5, 0.5], np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(d.toarray(), [[0.5, 0], [0, 0.5]])
    assert d.cost(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0


def test_two_by_two_vertex():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    d = solve_transport([0.3, 0.7], [0.6, 0.4], c)
    np.testing.assert_allclose(d.toarray(), [[0.3, 0], [0.3, 0.4]], atol=1e-15)
    assert d.cost(c) == pytest.approx(0.3, abs=1e-15)


def test_single_point():
    d = solve_transport([1.0], [1.0], np.array([[7.0]]))
    np.testing.assert_array_equal(d.toarray(), [[1.0]])


def test_1d_hand_example():
    d = solve_transport_1d([0.0, 1.0], [0.75, 0.25], [0.5, 0.5])
    np.testing.assert_allclose(d.toarray(), [[0.5, 0.25], [0, 0.25]])
    c = squared_distance_cost(np.array([0.0, 1.0]))
    lp = solve_transport([0.75, 0.25], [0.5, 0.5], c)
    assert d.cost(c) == pytest.approx(lp.cost(c), abs=1e-15)


def test_1d_coincident_points():
    d = solve_transport_1d([5.0, 5.0], [0.2, 0.8], [0.6, 0.4])
    assert_feasible(d, np.array([0.2, 0.8]), np.array([0.6, 0.4]))
    assert d.cost(squared_distance_cost(np.array([5.0, 5.0]))) == 0.0


def test_1d_uniform_sorted_is_identity():
    n = 6
    d = solve_transport_1d(np.arange(n) * 1.5, np.full(n, 1 / n), np.full(n, 1 / n))
    np.testing.assert_allclose(d.toarray(), np.eye(n) / n)


def test_1d_unsorted_input():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(9)
    p = random_weights(rng, 9)
    q = np.full(9, 1 / 9)
    c = squared_distance_cost(x)
    d = solve_transport_1d(x, p, q)
    assert_feasible(d, p, q)
    assert d.cost(c) == pytest.approx(solve_transport(p, q, c).cost(c), abs=1e-12)


def test_assignment_examples():
    c = np.full((4, 4), 100.0)
    np.fill_diagonal(c, 0.0)
    np.testing.assert_array_equal(solve_assignment(c), np.arange(4))
    sigma = solve_assignment(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_array_equal(sigma, [1, 0])


def test_assignment_5x5_bruteforce():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c = rng.integers(0, 20, (5, 5)).astype(float)
        sigma = solve_assignment(c)
        assert c[np.arange(5), sigma].sum() == permutation_minimum(c)[0]


def test_coupling_cost_examples():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert coupling_cost(np.diag([0.4, 0.6]), c) == 0.0
    assert coupling_cost(np.array([[0.3, 0], [0.3, 0.4]]), c) == pytest.approx(0.3)
    n = 5
    assert coupling_cost(np.full((n, n), 1 / n**2), np.full((n, n), 2.5)) == pytest.approx(2.5)


def test_vertex_enumeration_small():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(2, 5))
        p, q = random_weights(rng, n), random_weights(rng, n)
        c = rng.random((n, n))
        d = solve_transport(p, q, c)
        assert_feasible(d, p, q)
        assert d.cost(c) == pytest.approx(vertex_enumeration(p, q, c), abs=1e-12)


def test_uniform_marginals_birkhoff():
    rng = np.random.default_rng(1)
    for n in range(2, 8):
        c = rng.random((n, n))
        u = np.full(n, 1 / n)
        assert solve_transport(u, u, c).cost(c) == pytest.approx(birkhoff_cost(c), abs=1e-12)


def test_beats_random_feasible_couplings():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(2, 8))
        p, q = random_weights(rng, n), random_weights(rng, n)
        c = rng.random((n, n))
        best = solve_transport(p, q, c).cost(c)
        indep = np.outer(p, q)
        for _ in range(100):
            # another vertex: optimal plan of a random cost
            v = solve_transport(p, q, rng.random((n, n))).toarray()
            t = rng.random()
            assert best <= coupling_cost(t * indep + (1 - t) * v, c) + 1e-12


def test_zero_mass_rows():
    p = np.array([0.0, 0.5, 0.5, 0.0])
    q = np.array([0.25, 0.25, 0.25, 0.25])
    c = np.random.default_rng(4).random((4, 4))
    d = solve_transport(p, q, c)
    assert_feasible(d, p, q)
    assert np.all(d.toarray()[[0, 3]] == 0)
    assert d.cost(c) == pytest.approx(linprog_cost(p, q, c), abs=1e-12)


def test_degenerate_ties():
    # all-equal costs and repeated marginals exercise the anti-cycling path
    n = 12
    u = np.full(n, 1 / n)
    d = solve_transport(u, u, np.ones((n, n)))
    assert_feasible(d, u, u)
    x = np.repeat(np.arange(4.0), 3)
    c = squared_distance_cost(x)
    d = solve_transport(u, u, c)
    assert d.cost(c) == pytest.approx(0.0, abs=1e-15)


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        solve_transport([0.5, 0.5], [1.0], np.zeros((2, 1)))
    with pytest.raises(InfeasibleError):
        solve_transport([0.5, 0.5], [0.9, 0.3], np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        solve_transport([0.5, 0.5], [0.5, 0.5], np.array([[0.0, np.nan], [1, 0]]))
    with pytest.raises(InvalidInputError):
        solve_transport([1.5, -0.5], [0.5, 0.5], np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        solve_assignment(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        as_marginal([0.2, 0.2])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 24), st.integers(0, 2**32 - 1), st.booleans())
def test_lp_properties(n, seed, zeros):
    rng = np.random.default_rng(seed)
    p, q = random_weights(rng, n, zeros), random_weights(rng, n, zeros)
    x = rng.standard_normal((n, 2))
    c = squared_distance_cost(x)
    d = solve_transport(p, q, c)
    assert_feasible(d, p, q)
    assert d.nnz <= 2 * n - 1
    assert d.cost(c) <= linprog_cost(p, q, c) + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_1d_properties(n, seed):
    rng = np.random.default_rng(seed)
    x = np.round(rng.standard_normal(n), 1)  # rounding creates ties
    p = random_weights(rng, n)
    u = np.full(n, 1 / n)
    d = solve_transport_1d(x, p, u)
    assert_feasible(d, p, u)
    assert d.nnz <= 2 * n - 1
    c = squared_distance_cost(x)
    # staircase: in sorted order, rows overlap in at most one column
    order = np.argsort(x, kind="stable")
    dense = d.toarray()[order]
    spans = [np.flatnonzero(r) for r in dense if r.any()]
    for a, b in zip(spans, spans[1:]):
        assert len(np.intersect1d(a, b)) <= 1
    # rows carrying at most 1/N of mass touch at most two uniform columns
    counts = np.diff(d.matrix.indptr)
    assert np.all(counts[p <= 1 / n + 1e-15] <= 2)
    assert d.cost(c) == pytest.approx(solve_transport(p, u, c).cost(c), abs=1e-10)


def test_deterministic():
    rng = np.random.default_rng(5)
    p, q = random_weights(rng, 20), random_weights(rng, 20)
    c = rng.random((20, 20))
    a, b = solve_transport(p, q, c), solve_transport(p, q, c)
    np.testing.assert_array_equal(a.toarray(), b.toarray())
