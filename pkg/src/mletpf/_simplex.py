"""Transportation simplex kernel.

The basis is stored as a spanning tree on the bipartite graph with ``m`` row
nodes (``0..m-1``) and ``n`` column nodes (``m..m+n-1``).  Degenerate (zero
flow) basic cells are kept explicitly, so the tree always has ``m + n - 1``
edges.  Pricing is block search (Dantzig's rule inside a window of cells);
after a run of degenerate pivots the kernel switches to Bland's rule until the
objective moves again.
"""

import numpy as np
from numba import njit

# status codes returned by ``transport_simplex``
OPTIMAL = 0
ITERATION_LIMIT = 1


@njit(cache=True, nogil=True)
def _northwest_corner(a, b, bi, bj, x):
    m = a.shape[0]
    n = b.shape[0]
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    k = 0
    while True:
        t = min(ra[i], rb[j])
        if t < 0.0:
            t = 0.0
        bi[k] = i
        bj[k] = j
        x[k] = t
        k += 1
        ra[i] -= t
        rb[j] -= t
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return k


@njit(cache=True, nogil=True)
def _tree(m, n, bi, bj, adj_ptr, adj_node, adj_edge, parent, parent_edge, depth, order):
    nodes = m + n
    nb = bi.shape[0]
    adj_ptr[:] = 0
    for k in range(nb):
        adj_ptr[bi[k] + 1] += 1
        adj_ptr[m + bj[k] + 1] += 1
    for v in range(nodes):
        adj_ptr[v + 1] += adj_ptr[v]
    fill = adj_ptr[:-1].copy()
    for k in range(nb):
        r = bi[k]
        c = m + bj[k]
        adj_node[fill[r]] = c
        adj_edge[fill[r]] = k
        fill[r] += 1
        adj_node[fill[c]] = r
        adj_edge[fill[c]] = k
        fill[c] += 1
    parent[:] = -1
    depth[:] = -1
    depth[0] = 0
    parent_edge[0] = -1
    order[0] = 0
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for s in range(adj_ptr[v], adj_ptr[v + 1]):
            w = adj_node[s]
            if depth[w] < 0:
                depth[w] = depth[v] + 1
                parent[w] = v
                parent_edge[w] = adj_edge[s]
                order[tail] = w
                tail += 1
    return tail


@njit(cache=True, nogil=True)
def transport_simplex(a, b, C, max_iter, tol, degenerate_streak):
    """Solve ``min <X, C>`` over nonnegative ``X`` with row sums ``a``, column sums ``b``.

    Returns ``(rows, cols, flows, status, iterations)`` describing the final
    basis.  ``a`` and ``b`` must have equal totals.
    """
    m, n = C.shape
    nb = m + n - 1
    nodes = m + n
    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    x = np.empty(nb, np.float64)
    _northwest_corner(a, b, bi, bj, x)

    adj_ptr = np.zeros(nodes + 1, np.int64)
    adj_node = np.empty(2 * nb, np.int64)
    adj_edge = np.empty(2 * nb, np.int64)
    parent = np.empty(nodes, np.int64)
    parent_edge = np.empty(nodes, np.int64)
    depth = np.empty(nodes, np.int64)
    order = np.empty(nodes, np.int64)
    pot = np.zeros(nodes)
    path_u = np.empty(nodes, np.int64)
    path_v = np.empty(nodes, np.int64)
    cycle = np.empty(nodes + 1, np.int64)

    total = m * n
    block = max(int(np.sqrt(total)), 16)
    cursor = 0
    status = ITERATION_LIMIT
    bland = False
    streak = 0
    it = 0
    while it < max_iter:
        _tree(m, n, bi, bj, adj_ptr, adj_node, adj_edge, parent, parent_edge, depth, order)
        pot[0] = 0.0
        for s in range(1, nodes):
            v = order[s]
            e = parent_edge[v]
            pot[v] = C[bi[e], bj[e]] - pot[parent[v]]

        # pricing; column potentials enter with a sign flip: u_i + v_j = c_ij
        ei = -1
        ej = -1
        best = -tol
        if bland:
            for i in range(m):
                ui = pot[i]
                for j in range(n):
                    if C[i, j] - ui - pot[m + j] < -tol:
                        ei = i
                        ej = j
                        break
                if ei >= 0:
                    break
        else:
            # block search pricing, resuming where the previous scan stopped
            scanned = 0
            while scanned < total:
                stop = min(scanned + block, total)
                while scanned < stop:
                    i = cursor // n
                    j = cursor - i * n
                    r = C[i, j] - pot[i] - pot[m + j]
                    if r < best:
                        best = r
                        ei = i
                        ej = j
                    cursor += 1
                    if cursor == total:
                        cursor = 0
                    scanned += 1
                if ei >= 0:
                    break
        if ei < 0:
            status = OPTIMAL
            break

        # tree path from column node of the entering cell back to its row node
        u = m + ej
        v = ei
        nu = 0
        nv = 0
        while depth[u] > depth[v]:
            path_u[nu] = parent_edge[u]
            nu += 1
            u = parent[u]
        while depth[v] > depth[u]:
            path_v[nv] = parent_edge[v]
            nv += 1
            v = parent[v]
        while u != v:
            path_u[nu] = parent_edge[u]
            nu += 1
            u = parent[u]
            path_v[nv] = parent_edge[v]
            nv += 1
            v = parent[v]
        nc = 0
        for s in range(nu):
            cycle[nc] = path_u[s]
            nc += 1
        for s in range(nv - 1, -1, -1):
            cycle[nc] = path_v[s]
            nc += 1

        # cells at even path positions lose flow
        theta = np.inf
        leave = -1
        leave_key = 0
        for s in range(0, nc, 2):
            e = cycle[s]
            key = bi[e] * n + bj[e]
            if x[e] < theta or (x[e] == theta and key < leave_key):
                theta = x[e]
                leave = e
                leave_key = key
        if theta < 0.0:
            theta = 0.0
        for s in range(nc):
            e = cycle[s]
            if s % 2 == 0:
                x[e] -= theta
            else:
                x[e] += theta
        bi[leave] = ei
        bj[leave] = ej
        x[leave] = theta

        if theta <= 0.0:
            streak += 1
            if streak >= degenerate_streak:
                bland = True
        else:
            streak = 0
            bland = False
        it += 1

    for k in range(nb):
        if x[k] < 0.0:
            x[k] = 0.0
    return bi, bj, x, status, it
