import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from mrws.errors import AsymmetricWeights, EmptyAnnulus, EmptyDomain, IsolatedState, MissingMetric, NotStochastic
from mrws.space import (
    StateSpace,
    build_annulus_step,
    build_epsilon_step,
    build_from_markov_kernel,
    build_from_symmetric_weights,
    is_ergodic,
    m_boundary,
    restrict_to_domain,
    validate_invariance,
    validate_reversibility,
)

from _gen import random_graph


def path3():
    W = sparse.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
    return build_from_symmetric_weights(W, labels=["a", "b", "c"])


def row(rws, i):
    return rws.kernel[i].toarray().ravel()


def test_path_weights():
    rws = path3()
    assert np.array_equal(rws.nu, [1, 2, 1])
    assert np.array_equal(row(rws, 1), [0.5, 0, 0.5])
    assert rws.reversibility.passed and rws.reversibility.residual == 0.0
    assert rws.ergodic


def test_single_edge():
    W = sparse.csr_matrix(np.array([[0, 3.5], [3.5, 0]]))
    rws = build_from_symmetric_weights(W)
    assert np.array_equal(rws.nu, [3.5, 3.5])
    assert np.array_equal(row(rws, 0), [0, 1]) and np.array_equal(row(rws, 1), [1, 0])


def test_isolated_state():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    with pytest.raises(IsolatedState):
        build_from_symmetric_weights(sparse.csr_matrix(W))


def test_asymmetric_weights():
    with pytest.raises(AsymmetricWeights):
        build_from_symmetric_weights(sparse.csr_matrix(np.array([[0, 1.0], [2.0, 0]])))


def test_two_state_swap():
    rws = build_from_markov_kernel(sparse.csr_matrix(np.array([[0, 1.0], [1.0, 0]])))
    assert np.allclose(rws.nu, [0.5, 0.5])
    assert rws.reversible


def test_three_cycle_not_reversible():
    K = np.roll(np.eye(3), 1, axis=1)
    rws = build_from_markov_kernel(sparse.csr_matrix(K))
    assert np.allclose(rws.nu, 1 / 3)
    rev = validate_reversibility(rws)
    assert not rev.passed
    assert rev.residual == pytest.approx(1 / 3)
    assert validate_invariance(rws).passed


def test_not_stochastic():
    K = sparse.csr_matrix(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(NotStochastic) as info:
        build_from_markov_kernel(K)
    assert info.value.row == 0


def test_perturbed_rows_fail_invariance():
    rws = path3()
    K = rws.kernel.toarray()
    K[1] = [0.501, 0, 0.499]
    bad = build_from_markov_kernel(sparse.csr_matrix(K), rws.nu)
    rep = validate_invariance(bad, 1e-6)
    assert not rep.passed and rep.residual > 1e-4


def collinear(n=3):
    return StateSpace(tuple(range(n)), coords=np.arange(n, dtype=float))


def test_epsilon_step_collinear():
    rws = build_epsilon_step(collinear(), np.ones(3), 1.5)
    assert np.allclose(row(rws, 0), [0.5, 0.5, 0])
    assert np.allclose(row(rws, 1), [1 / 3] * 3)
    rev = validate_reversibility(rws)
    assert not rev.passed and not rws.reversible
    assert rev.residual == pytest.approx(0.5 - 1 / 3)


def test_epsilon_step_extremes():
    big = build_epsilon_step(collinear(4), np.array([1.0, 2, 3, 4]), 100.0)
    assert np.allclose(big.kernel.toarray(), np.tile([0.1, 0.2, 0.3, 0.4], (4, 1)))
    assert big.reversible
    small = build_epsilon_step(collinear(4), np.ones(4), 0.1)
    assert np.array_equal(small.kernel.toarray(), np.eye(4))


def test_epsilon_step_needs_metric():
    with pytest.raises(MissingMetric):
        build_epsilon_step(StateSpace((0, 1)), np.ones(2), 1.0)


def test_annulus():
    rws = build_annulus_step(collinear(5), np.ones(5), 1.5, 0.5)
    assert np.allclose(row(rws, 2), [0, 0.5, 0, 0.5, 0])
    eps = build_epsilon_step(collinear(5), np.ones(5), 1.5)
    ann0 = build_annulus_step(collinear(5), np.ones(5), 1.5, 0.0)
    K = eps.kernel.toarray()
    np.fill_diagonal(K, 0)
    assert np.allclose(ann0.kernel.toarray(), K / K.sum(1, keepdims=True))
    with pytest.raises(ValueError):
        build_annulus_step(collinear(5), np.ones(5), 1.0, 1.0)
    with pytest.raises(EmptyAnnulus):
        build_annulus_step(collinear(3), np.ones(3), 0.9, 0.5)


def test_restrict_path():
    r = restrict_to_domain(path3(), [0, 1])
    assert np.array_equal(row(r, 0), [0, 1])
    assert np.array_equal(row(r, 1), [0.5, 0.5])
    assert r.reversible
    same = restrict_to_domain(path3(), [0, 1, 2])
    assert np.array_equal(same.kernel.toarray(), path3().kernel.toarray())
    with pytest.raises(EmptyDomain):
        restrict_to_domain(path3(), [])


def test_ergodicity():
    assert is_ergodic(path3())[0]
    W = sparse.csr_matrix(np.kron(np.eye(2), [[0, 1], [1, 0]]))
    ok, (A, B) = is_ergodic(build_from_symmetric_weights(W))
    assert not ok and sorted(A) == [0, 1] and sorted(B) == [2, 3]
    ident = build_from_markov_kernel(sparse.identity(3, format="csr"), np.ones(3))
    assert not is_ergodic(ident)[0]


def test_m_boundary():
    d = m_boundary(path3(), [1])
    assert d.boundary.tolist() == [0, 2] and d.omega_m.tolist() == [0, 1, 2]
    with pytest.warns(RuntimeWarning):
        d = m_boundary(path3(), [0, 1, 2])
    assert d.boundary.size == 0


def test_metric_must_be_symmetric():
    with pytest.raises(ValueError):
        StateSpace((0, 1), metric=[[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        StateSpace((0, 0))


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_reversible_implies_invariant(seed):
    rng = np.random.default_rng(seed)
    rws = random_graph(rng, int(rng.integers(2, 51)))
    assert validate_reversibility(rws).passed
    assert validate_invariance(rws, 1e-10).passed


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_weights_round_trip(seed):
    rng = np.random.default_rng(seed)
    rws = random_graph(rng, int(rng.integers(2, 30)))
    again = build_from_symmetric_weights(rws.flux)
    assert np.max(np.abs((again.kernel - rws.kernel).toarray())) <= 1e-14
    assert np.allclose(again.nu, rws.nu, rtol=1e-14, atol=0)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_restriction_keeps_balance(seed):
    rng = np.random.default_rng(seed)
    rws = random_graph(rng, int(rng.integers(2, 30)))
    k = int(rng.integers(1, rws.n + 1))
    r = restrict_to_domain(rws, rng.choice(rws.n, k, replace=False))
    assert validate_reversibility(r).passed


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(1e-3, 1e3))
def test_ergodic_scale_free(seed, c):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    W = np.where(rng.random((n, n)) < 0.2, rng.random((n, n)), 0)
    W = np.triu(W, 1)
    W = W + W.T + np.eye(n) * 1e-3
    rws = build_from_symmetric_weights(sparse.csr_matrix(W))
    scaled = build_from_markov_kernel(rws.kernel, c * rws.nu)
    assert is_ergodic(rws)[0] == is_ergodic(scaled)[0]


def test_empty_boundary_warning_is_warning_only():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m_boundary(path3(), [1])
