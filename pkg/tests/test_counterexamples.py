import numpy as np
import pytest

from mrws.calibration import find_calibration
from mrws.counterexamples import (
    gen_markov_counterexample,
    gen_poincare_witness,
    gen_tworow_counterexample,
    propagate_calibration_recurrence,
    tworow_label,
    tworow_witness,
)
from mrws.errors import WitnessExceedsTruncation
from mrws.least_gradient import solve_exact
from mrws.poincare import best_constant, poincare_ratio
from mrws.space import is_ergodic, validate_invariance, validate_reversibility


def test_markov_rows():
    rws, pb, trunc = gen_markov_counterexample(3)
    row0 = rws.kernel[0].toarray().ravel()
    assert row0.tolist() == [2 / 3 + 4.0**-3 / 3, 1 / 4, 1 / 16, 1 / 64]
    assert rws.nu.tolist() == [1, 0.5, 0.25, 0.125]
    assert rws.kernel[2].toarray().ravel().tolist() == [0.25, 0, 0.75, 0]
    assert trunc.tail_bound == 4.0**-3 / 3 and trunc.tail_policy == "self-loop-fold"
    assert pb.boundary.tolist() == [0] and pb.omega.tolist() == [1, 2, 3] and pb.psi.tolist() == [0.0]


@pytest.mark.parametrize("N", [2, 3, 8, 16, 24])
def test_markov_balance(N):
    rws, _, _ = gen_markov_counterexample(N)
    F = rws.flux.toarray()
    assert np.array_equal(F, F.T)
    assert validate_reversibility(rws, 0.0).passed
    assert validate_invariance(rws).residual <= 4.0**-N
    assert is_ergodic(rws)[0]


def test_markov_too_small():
    with pytest.raises(ValueError):
        gen_markov_counterexample(1)


def test_witness_values():
    u = gen_poincare_witness(1, 1.0, 5)
    assert u.tolist() == [1, 2, 0, 0, 0]
    assert gen_poincare_witness(2, 2.0, 4).tolist() == [1, 2**0.5, 2, 0]
    assert gen_poincare_witness(0, 2.0, 4).tolist() == [1, 0, 0, 0]
    with pytest.raises(WitnessExceedsTruncation):
        gen_poincare_witness(5, 2.0, 5)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0])
def test_witness_ratios_decay(q):
    N = 24
    _, pb, _ = gen_markov_counterexample(N)
    assert np.isfinite(poincare_ratio(pb, gen_poincare_witness(0, q, N), q=q))
    for k in range(1, 21):
        assert poincare_ratio(pb, gen_poincare_witness(k, q, N), q=q) <= 2 / k


@pytest.mark.parametrize("N", [8, 16, 24])
def test_markov_best_constant(N):
    _, pb, _ = gen_markov_counterexample(N)
    assert best_constant(pb, 2).lambda_upper <= 2 / (N // 2)


def test_tworow_measure():
    rws, pb = gen_tworow_counterexample(5)
    for n in range(1, 6):
        for top in (False, True):
            x = rws.labels.index(tworow_label(3 * n, top))
            assert rws.nu[x] == 2.0 ** (-n + 1) + 2.0**-n + 8.0**-n
    assert is_ergodic(rws)[0]
    assert validate_reversibility(rws, 1e-15).passed
    labels = [rws.labels[x] for x in pb.boundary]
    assert all(lab.startswith("t") for lab in labels)
    assert pb.psi.tolist() == [(-1.0) ** int(lab[1:]) for lab in labels]


def test_tworow_witness_ratios():
    N = 12
    _, pb = gen_tworow_counterexample(N)
    lam = best_constant(pb, 2).lambda_upper
    for k in range(N):
        w = tworow_witness(pb, k)
        r = poincare_ratio(pb, w, np.zeros(pb.psi.size), q=2)
        assert r <= 3 * 2.0**-k
        assert lam <= r + 1e-12


def test_tworow_truncations_calibrate():
    for N in (3, 5, 8):
        _, pb = gen_tworow_counterexample(N)
        u = solve_exact(pb).u
        assert find_calibration(pb, u, verify_tol=1e-6).passed
    _, pb, _ = gen_markov_counterexample(10)
    assert find_calibration(pb, solve_exact(pb).u, verify_tol=1e-6).passed


def test_recurrence_examples():
    trace, bounded = propagate_calibration_recurrence(3, 1.0)
    assert not bounded
    trace, bounded = propagate_calibration_recurrence(20, 0.0)
    assert bounded
    for step in trace:
        lo, hi = step["interval"]
        assert lo <= 1 and hi >= -1 and lo <= hi
    with pytest.raises(ValueError):
        propagate_calibration_recurrence(1, 0.0)


def test_recurrence_rejects_large_starts():
    for g in (0.43, 0.5, -0.5, 1.0):
        assert not propagate_calibration_recurrence(20, g)[1]


@pytest.mark.xfail(strict=True, reason="perturbations of size 4^-k keep every start with |g23| <= 3/7 bounded")
def test_recurrence_rejects_dyadic_start():
    D = 20
    assert not propagate_calibration_recurrence(D, 2.0 ** -(D - 2))[1]
