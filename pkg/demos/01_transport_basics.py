"""Optimal transport building blocks: exact LP couplings, 1-D quantile plans, assignment.

Run: python demos/01_transport_basics.py
"""
import numpy as np

from mletpf.ot_core import (
    solve_assignment,
    solve_transport,
    solve_transport_1d,
    squared_distance_cost,
)

rng = np.random.default_rng(0)

# A small weighted ensemble in the plane, transported onto uniform weights.
x = rng.standard_normal((8, 2))
w = rng.random(8)
w /= w.sum()
u = np.full(8, 1 / 8)
c = squared_distance_cost(x)
plan = solve_transport(w, u, c)
print("LP coupling: cost %.4f, %d nonzeros (vertex bound 2N-1 = 15)" % (plan.cost(c), plan.nnz))
print("row sums match weights:", np.allclose(plan.toarray().sum(1), w))

# In one dimension the optimal plan is the monotone rearrangement.
s = rng.standard_normal(8)
c1 = squared_distance_cost(s)
p1 = solve_transport_1d(s, w, u)
print("1-D plan cost %.6f vs LP %.6f" % (p1.cost(c1), solve_transport(w, u, c1).cost(c1)))

# Hand example: weights (3/4, 1/4) on points 0 and 1.
print(solve_transport_1d([0.0, 1.0], [0.75, 0.25], [0.5, 0.5]).toarray())

# Assignment between two equally weighted ensembles.
y = x + 0.05 * rng.standard_normal(x.shape)
sigma = solve_assignment(squared_distance_cost(x, y[::-1]))
print("assignment undoes the reversal:", np.array_equal(sigma, np.arange(8)[::-1]))
