"""Random instance generators shared by the tests."""

import numpy as np
from scipy import sparse

from mrws.least_gradient import make_problem
from mrws.space import build_from_symmetric_weights


def random_graph(rng, n, density=0.4, integer=False):
    """Connected random weighted graph: a random spanning tree plus extra edges."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(k)]
        W[a, b] = W[b, a] = 1.0
    extra = rng.random((n, n)) < density
    extra = np.triu(extra, 1)
    W[extra] = 1.0
    W = np.triu(W, 1)
    w = rng.integers(1, 5, size=W.shape).astype(float) if integer else rng.uniform(0.2, 2.0, W.shape)
    W = W * w
    W = W + W.T
    if rng.random() < 0.3:
        loops = rng.random(n) < 0.3
        W[np.diag_indices(n)] = loops * rng.uniform(0.1, 1.0, n)
    return build_from_symmetric_weights(sparse.csr_matrix(W))


def random_problem(rng, n, k, density=0.4, levels=None, integer=False):
    """Random graph with a random domain of size ``k`` and random boundary data."""
    while True:
        rws = random_graph(rng, n, density, integer)
        omega = rng.choice(n, size=k, replace=False)
        from mrws.space import m_boundary

        dec = m_boundary(rws, omega)
        if dec.boundary.size:
            break
    if levels is None:
        psi = rng.normal(size=dec.boundary.size)
    else:
        psi = rng.choice(np.asarray(levels, dtype=float), size=dec.boundary.size)
    return make_problem(rws, omega, psi)
