"""Finite truncations of two infinite spaces without a Poincare inequality.

* A birth-death-like chain on the nonnegative integers whose boundary is the
  single state 0.
* Two infinite rows of states joined by weights that decay at different
  geometric rates, with the top row as boundary.

Also propagates the interval recurrence that rules out bounded calibrations on
the infinite two-row space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import WitnessExceedsTruncation
from .least_gradient import DomainProblem, make_problem
from .space import build_from_markov_kernel, build_from_symmetric_weights


@dataclass(frozen=True)
class TruncationSpec:
    N: int
    tail_policy: str
    tail_bound: float


def gen_markov_counterexample(N: int):
    """Chain on ``0..N`` with ``nu(n) = 2^-n`` and state 0 as the m-boundary.

    Jumps from 0 to ``n`` have mass ``4^-n``; the tail beyond ``N`` is folded
    into the self-loop at 0.  Returns ``(rws, problem, truncation)``.
    """
    if N < 2:
        raise ValueError("need N >= 2")
    n = np.arange(1, N + 1)
    tail = 4.0 ** (-N) / 3.0
    rows = [0] * (N + 1)
    cols = [0] + n.tolist()
    vals = [2.0 / 3.0 + tail] + (4.0 ** (-n)).tolist()
    for k in n:
        rows += [k, k]
        cols += [0, k]
        vals += [2.0 ** (-k), 1.0 - 2.0 ** (-k)]
    K = sparse.csr_matrix((vals, (rows, cols)), shape=(N + 1, N + 1))
    nu = np.concatenate([[1.0], 2.0 ** (-n)])
    rws = build_from_markov_kernel(K, nu, labels=range(N + 1), coords=np.arange(N + 1.0))
    problem = make_problem(rws, n, {0: 0.0})
    return rws, problem, TruncationSpec(N, "self-loop-fold", tail)


def gen_poincare_witness(k: int, q: float, N: int) -> np.ndarray:
    """``u(n) = 2^((n-1)/q)`` for ``1 <= n <= k+1`` and 0 beyond, on states ``1..N``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k + 1 > N:
        raise WitnessExceedsTruncation(f"witness needs {k + 1} states, truncation has {N}")
    n = np.arange(1, N + 1)
    return np.where(n <= k + 1, 2.0 ** ((n - 1) / q), 0.0)


def tworow_label(column: int, top: bool) -> str:
    return f"{'t' if top else 'b'}{column}"


def gen_tworow_counterexample(N: int, psi=None):
    """Columns ``2..3N+2`` in two rows; the bottom row is the domain.

    Within each row, ``3n -- 3n+1`` has weight ``2^-n``, ``3n+1 -- 3n+2`` weight
    ``4^-n`` and ``3n+2 -- 3n+3`` weight ``2^-n``; columns ``3n, 3n+1, 3n+2``
    carry a vertical link of weight ``8^-n``.  Default data on the top row is
    ``(-1)^k``.  Returns ``(rws, problem)``.
    """
    if N < 3:
        raise ValueError("need N >= 3")
    first, last = 2, 3 * N + 2
    cols = list(range(first, last + 1))
    ncol = len(cols)
    labels = [tworow_label(c, False) for c in cols] + [tworow_label(c, True) for c in cols]
    idx = lambda c, top: (c - first) + (ncol if top else 0)  # noqa: E731
    W = sparse.lil_matrix((2 * ncol, 2 * ncol))
    for c in cols:
        n, r = divmod(c, 3)
        right = {0: 2.0 ** (-n), 1: 4.0 ** (-n), 2: 2.0 ** (-n)}[r]
        if c + 1 <= last:
            for top in (False, True):
                W[idx(c, top), idx(c + 1, top)] = right
                W[idx(c + 1, top), idx(c, top)] = right
        W[idx(c, False), idx(c, True)] = 8.0 ** (-n)
        W[idx(c, True), idx(c, False)] = 8.0 ** (-n)
    coords = [(c, 0.0) for c in cols] + [(c, 1.0) for c in cols]
    rws = build_from_symmetric_weights(W.tocsr(), labels=labels, coords=coords)
    top = np.arange(ncol, 2 * ncol)
    if psi is None:
        data = {int(i): float((-1) ** c) for i, c in zip(top, cols)}
    else:
        data = {int(i): float(v) for i, v in zip(top, psi)}
    problem = make_problem(rws, np.arange(ncol), data)
    return rws, problem


def tworow_witness(problem: DomainProblem, k: int) -> np.ndarray:
    """Indicator of the bottom columns ``>= 3k+2``."""
    labels = problem.rws.labels
    columns = np.array([int(labels[x][1:]) for x in problem.omega])
    return (columns >= 3 * k + 2).astype(float)


def _scale(iv, a):
    lo, hi = a * iv[0], a * iv[1]
    return (min(lo, hi), max(lo, hi))


def _step(iv, factor, slack):
    """``factor * g - slack * v`` over ``v`` in [-1, 1], intersected with [-1, 1]."""
    lo, hi = _scale(iv, factor)
    lo, hi = lo - slack, hi + slack
    return (max(lo, -1.0), min(hi, 1.0)), (lo, hi)


def propagate_calibration_recurrence(D: int, g23: float):
    """Interval propagation of the zero-mean conditions along the bottom row.

    Starting from ``g(2,3) = g23``, each period ``k`` applies

        g(3k, 3k+1)   = 2 g(3k-1, 3k)        - 4^-k v
        g(3k+1, 3k+2) = 2^k g(3k, 3k+1)      - 2^-k v
        g(3k+2, 3k+3) = 2^-k g(3k+1, 3k+2)   - 4^-k v

    with every vertical value ``v`` ranging over [-1, 1] and every horizontal
    value confined to [-1, 1].  Returns ``(trace, bounded)``: ``bounded`` is
    False iff some interval becomes empty within periods ``1..D-1``.
    """
    if D < 2:
        raise ValueError("need D >= 2")
    iv = (float(g23), float(g23))
    trace = [{"period": 0, "edge": [2, 3], "interval": list(iv)}]
    if abs(g23) > 1:
        return trace, False
    for k in range(1, D):
        for (a, b), factor, slack in (
            ((3 * k, 3 * k + 1), 2.0, 4.0 ** (-k)),
            ((3 * k + 1, 3 * k + 2), 2.0 ** k, 2.0 ** (-k)),
            ((3 * k + 2, 3 * k + 3), 2.0 ** (-k), 4.0 ** (-k)),
        ):
            iv, raw = _step(iv, factor, slack)
            trace.append({"period": k, "edge": [a, b], "interval": list(raw)})
            if iv[0] > iv[1]:
                return trace, False
    return trace, True
