import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from mrws.counterexamples import gen_markov_counterexample, gen_poincare_witness
from mrws.errors import MissingMetric, Unbounded, ZeroAlpha, ZeroDenominator
from mrws.least_gradient import make_problem
from mrws.poincare import best_constant, layered_lower_bound, poincare_estimate, poincare_ratio
from mrws.space import build_from_symmetric_weights

from _gen import random_problem

seeds = st.integers(0, 2**32 - 1)


def graph(edges, n, coords=None):
    W = np.zeros((n, n))
    for a, b in edges:
        W[a, b] = W[b, a] = 1.0
    return build_from_symmetric_weights(sparse.csr_matrix(W), coords=coords)


@pytest.fixture
def p3():
    return make_problem(graph([(0, 1), (1, 2)], 3), [1], {0: 0.0, 2: 1.0})


def test_ratio_constant_data(p3):
    assert poincare_ratio(p3, [1.0], psi=[1.0, 1.0]) == 2.0 / 2.0


def test_ratio_path(p3):
    # 2 (1/2 1/4 + 1/2 1/4) + 1/4 + 1/4 over nu(b) = 2
    assert poincare_ratio(p3, [1.0], psi=[0.5, 0.5], q=2) == 0.5


def test_ratio_zero_denominator(p3):
    with pytest.raises(ZeroDenominator):
        poincare_ratio(p3, [0.0])


def test_best_constant_path(p3):
    est = best_constant(p3, 2)
    assert est.lambda_upper == pytest.approx(0.5, abs=1e-6)
    u = est.witness_u / est.witness_u[0]
    psi = est.witness_psi / est.witness_u[0]
    assert u[0] == 1.0 and np.allclose(psi, 0.5)


def test_single_state_q1():
    rws = graph([(0, 1), (1, 2), (1, 3)], 4)
    pb = make_problem(rws, [1], {0: 0.0, 2: 0.0, 3: 0.0})
    est = best_constant(pb, 1.0)
    assert est.lambda_upper <= 1.0 + 1e-12
    assert poincare_ratio(pb, [1.0], q=1.0) == 1.0


def test_layered_path(p3):
    low = layered_lower_bound(p3, 2)
    assert low.lambda_lower == 0.25
    assert low.shells.alphas.tolist() == [1.0]
    assert low.shells.coefficients.tolist() == [4.0]
    full = poincare_estimate(p3, 2)
    assert full.lambda_lower == 0.25 and full.lambda_upper == pytest.approx(0.5, abs=1e-6)


def test_layered_single_shell_q1():
    # each domain state sends half its mass to the boundary
    rws = graph([(0, 1), (1, 2), (0, 3), (2, 3)], 4)
    pb = make_problem(rws, [1, 3], {0: 0.0, 2: 1.0})
    low = layered_lower_bound(pb, 1.0)
    assert len(low.shells.shells) == 1
    alpha = low.shells.alphas[0]
    assert alpha == 1.0 and low.lambda_lower == alpha / 2


def test_layered_markov_chain():
    N = 10
    _, pb, _ = gen_markov_counterexample(N)
    low = layered_lower_bound(pb, 2)
    assert low.shells.alphas.tolist() == [2.0**-N]
    assert low.lambda_lower == 2.0**-N / 4


def test_two_shells_recurrence():
    rws = graph([(0, 1), (1, 2), (2, 3), (3, 4)], 5)
    pb = make_problem(rws, [1, 2, 3], {0: 0.0, 4: 0.0})
    dec = layered_lower_bound(pb, 2).shells
    assert [s.tolist() for s in dec.shells] == [[1, 3], [2]]
    assert dec.alphas.tolist() == [0.5, 1.0]
    assert dec.coefficients.tolist() == [8.0, 36.0]


def test_unbounded():
    W = np.zeros((4, 4))
    W[0, 1] = W[1, 0] = 1
    W[2, 3] = W[3, 2] = 1
    rws = build_from_symmetric_weights(sparse.csr_matrix(W))
    with pytest.warns(RuntimeWarning):
        pb = make_problem(rws, [1, 2, 3], {0: 0.0})
    with pytest.raises(Unbounded):
        layered_lower_bound(pb)


def test_width_shells():
    coords = np.arange(5, dtype=float)
    rws = graph([(0, 1), (1, 2), (2, 3), (3, 4)], 5, coords=coords)
    pb = make_problem(rws, [1, 2, 3], {0: 0.0, 4: 0.0})
    assert layered_lower_bound(pb, 2, "width=1").lambda_lower == layered_lower_bound(pb, 2, "hop").lambda_lower
    with pytest.raises(ZeroAlpha):
        # state 2 is within width 2 of the boundary but has no jump mass there
        layered_lower_bound(pb, 2, 2.0)
    with pytest.raises(MissingMetric):
        layered_lower_bound(make_problem(graph([(0, 1), (1, 2)], 3), [1], {0: 0.0, 2: 0.0}), 2, "width=1")


def test_markov_witness_upper_bounds():
    N = 24
    _, pb, _ = gen_markov_counterexample(N)
    ws = [gen_poincare_witness(k, 2.0, N) for k in range(1, 21)]
    for k, w in enumerate(ws, start=1):
        assert poincare_ratio(pb, w, q=2) <= 2 / k
    assert best_constant(pb, 2).lambda_upper <= 0.1


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_sandwich(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 25))
    pb = random_problem(rng, n, int(rng.integers(1, n)))
    q = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    low = layered_lower_bound(pb, q).lambda_lower
    assert low > 0
    for _ in range(5):
        u = rng.normal(size=pb.omega.size)
        psi = rng.normal(size=pb.psi.size) * rng.integers(0, 2)
        assert low <= poincare_ratio(pb, u, psi, q) + 1e-12
    up = best_constant(pb, q, starts=2, max_iter=100)
    assert low <= up.lambda_upper + 1e-8


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 100), st.sampled_from([1.0, 2.0, 3.0]))
def test_ratio_scale_invariance(seed, c, q):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 20))
    pb = random_problem(rng, n, int(rng.integers(1, n)))
    u, psi = rng.normal(size=pb.omega.size), rng.normal(size=pb.psi.size)
    c = c * rng.choice([-1, 1])
    assert poincare_ratio(pb, c * u, c * psi, q) == pytest.approx(poincare_ratio(pb, u, psi, q), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.sampled_from([1.0, 1.5, 2.0]))
def test_best_constant_below_witnesses(seed, q):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 15))
    pb = random_problem(rng, n, int(rng.integers(1, n)))
    ws = [rng.uniform(0.1, 1, pb.omega.size) for _ in range(3)]
    est = best_constant(pb, q, witnesses=ws, starts=2, max_iter=100)
    assert est.lambda_upper == pytest.approx(poincare_ratio(pb, est.witness_u, est.witness_psi, q), rel=1e-9)
    for w in ws:
        assert est.lambda_upper <= poincare_ratio(pb, w, np.zeros(pb.psi.size), q) + 1e-12
        assert est.lambda_upper <= poincare_ratio(pb, w, None, q) + 1e-12
