"""Finite metric random walk spaces.

A space is a finite state set carrying a row-stochastic jump kernel ``m`` and a
strictly positive measure ``nu``.  Builders validate invariance, detailed
balance and ergodicity once, at construction; the resulting objects are
immutable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial.distance import cdist

from .errors import (
    AsymmetricWeights,
    EmptyAnnulus,
    EmptyDomain,
    IsolatedState,
    MissingMetric,
    MRWSError,
    NoStationaryMeasure,
    NotReversible,
    NotStochastic,
)

STOCHASTIC_TOL = 1e-12
REVERSIBILITY_TOL = 1e-9
DENSE_STATIONARY_LIMIT = 2000


class InvalidParameter(MRWSError, ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of a single verification with its worst residual."""

    name: str
    passed: bool
    residual: float
    tol: float
    worst: Any = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        worst = self.worst
        if isinstance(worst, tuple):
            worst = list(worst)
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "residual": float(self.residual),
            "tol": float(self.tol),
            "worst": worst,
            "details": self.details,
        }


@dataclass(frozen=True)
class StateSpace:
    labels: tuple
    coords: np.ndarray | None = None
    metric: np.ndarray | None = None

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise ValueError("state labels must be unique")
        object.__setattr__(self, "labels", labels)
        n = len(labels)
        if self.coords is not None:
            coords = np.array(self.coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != n:
                raise ValueError("one coordinate vector per state is required")
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)
        if self.metric is not None:
            d = np.array(self.metric, dtype=float)
            if d.shape != (n, n):
                raise ValueError("metric table must be n x n")
            if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.allclose(d, d.T, rtol=0, atol=1e-12):
                raise ValueError("metric must be symmetric, nonnegative and zero on the diagonal")
            d.setflags(write=False)
            object.__setattr__(self, "metric", d)

    @property
    def n(self) -> int:
        return len(self.labels)

    def distances(self) -> np.ndarray:
        """Pairwise distance table, from ``metric`` or Euclidean ``coords``."""
        if self.metric is not None:
            return self.metric
        if self.coords is not None:
            return cdist(self.coords, self.coords)
        raise MissingMetric("state space has neither a metric table nor coordinates")

    @property
    def has_metric(self) -> bool:
        return self.metric is not None or self.coords is not None


@dataclass(frozen=True)
class DomainDecomposition:
    omega: np.ndarray
    boundary: np.ndarray
    omega_m: np.ndarray

    def to_dict(self, labels: Sequence) -> dict:
        return {
            "omega": [labels[i] for i in self.omega],
            "boundary": [labels[i] for i in self.boundary],
        }


@dataclass(frozen=True, eq=False)
class RandomWalkSpace:
    """Finite state space with kernel rows ``kernel[x] = m_x`` and measure ``nu``."""

    space: StateSpace
    kernel: sparse.csr_matrix
    nu: np.ndarray
    invariance: CertificateReport | None = None
    reversibility: CertificateReport | None = None
    ergodic: bool | None = None

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def labels(self) -> tuple:
        return self.space.labels

    @property
    def reversible(self) -> bool:
        return self.reversibility is not None and self.reversibility.passed

    @property
    def flux(self) -> sparse.csr_matrix:
        """The pair measure ``nu(x) m_x(y)`` as a sparse matrix."""
        f = sparse.diags(self.nu) @ self.kernel
        return sparse.csr_matrix(f)

    def symmetric_weights(self) -> sparse.csr_matrix:
        f = self.flux
        return sparse.csr_matrix(0.5 * (f + f.T))

    def index_of(self, items: Iterable) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return np.array([lookup[it] for it in items], dtype=int)
        except KeyError as exc:
            raise KeyError(f"unknown state {exc.args[0]!r}") from None

    def with_flags(self) -> "RandomWalkSpace":
        return _with_flags(self.space, self.kernel, self.nu)

    def require_reversible(self, force: bool = False) -> None:
        if not force and not self.reversible:
            residual = self.reversibility.residual if self.reversibility else float("nan")
            raise NotReversible(
                f"operation assumes detailed balance; worst residual {residual:.3g}"
            )


def _as_index_array(items, n: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(items), dtype=int))
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError("state index out of range")
    return idx


def _labels(n: int, labels) -> tuple:
    return tuple(range(n)) if labels is None else tuple(labels)


def _check_stochastic(K: sparse.csr_matrix) -> None:
    if K.nnz and K.data.min() < 0:
        rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
        bad = int(rows[np.argmin(K.data)])
        raise NotStochastic(f"row {bad} has a negative entry", row=bad)
    sums = np.asarray(K.sum(axis=1)).ravel()
    dev = np.abs(sums - 1.0)
    if dev.size and dev.max() > STOCHASTIC_TOL:
        bad = int(np.argmax(dev))
        raise NotStochastic(f"row {bad} sums to {sums[bad]!r}", row=bad, row_sum=float(sums[bad]))


def _with_flags(space, K, nu, *, reversible_by_construction=False) -> RandomWalkSpace:
    K = sparse.csr_matrix(K, dtype=float)
    K.eliminate_zeros()
    K.sort_indices()
    nu = _frozen(nu)
    bare = RandomWalkSpace(space, K, nu)
    inv = validate_invariance(bare)
    rev = validate_reversibility(bare)
    if reversible_by_construction:
        rev = CertificateReport(rev.name, True, rev.residual, rev.tol, rev.worst,
                                {**rev.details, "exact_by_construction": True})
    erg, _ = is_ergodic(bare)
    return RandomWalkSpace(space, K, nu, inv, rev, erg)


# ---------------------------------------------------------------- builders

def build_from_symmetric_weights(W, labels=None, coords=None, metric=None) -> RandomWalkSpace:
    """Graph random walk ``m_x = w_x. / d_x`` with ``nu = d``."""
    W = sparse.csr_matrix(W, dtype=float)
    n = W.shape[0]
    if W.shape != (n, n):
        raise ValueError("weight table must be square")
    if W.nnz and W.data.min() < 0:
        raise ValueError("weights must be nonnegative")
    asym = abs(W - W.T)
    if asym.nnz and asym.max() > 1e-12:
        raise AsymmetricWeights(f"weight table asymmetric by {asym.max():.3g}")
    W = sparse.csr_matrix(0.5 * (W + W.T))
    d = np.asarray(W.sum(axis=1)).ravel()
    space = StateSpace(_labels(n, labels), coords, metric)
    zero = np.flatnonzero(d <= 0)
    if zero.size:
        raise IsolatedState(space.labels[zero[0]])
    K = sparse.diags(1.0 / d) @ W
    return _with_flags(space, K, d, reversible_by_construction=True)


def stationary_measure(K: sparse.spmatrix, tol: float = 1e-12, max_iter: int = 10**6) -> np.ndarray:
    """Probability vector with ``pi K = pi``.

    Dense least-squares solve up to ``DENSE_STATIONARY_LIMIT`` states, power
    iteration beyond.
    """
    K = sparse.csr_matrix(K, dtype=float)
    n = K.shape[0]
    if n <= DENSE_STATIONARY_LIMIT:
        A = np.vstack([K.toarray().T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.abs(A @ pi - b).max() > 1e-9:
            raise NoStationaryMeasure("linear system for the stationary vector is inconsistent")
    else:
        pi = np.full(n, 1.0 / n)
        KT = K.T.tocsr()
        for _ in range(max_iter):
            nxt = KT @ pi
            nxt /= nxt.sum()
            if np.abs(nxt - pi).sum() < tol:
                pi = nxt
                break
            pi = nxt
        else:
            raise NoStationaryMeasure("power iteration did not converge")
    if pi.min() <= 1e-14 * max(pi.max(), 1e-300):
        raise NoStationaryMeasure(
            "stationary vector is not strictly positive (transient states or several closed classes)"
        )
    return pi / pi.sum()


def build_from_markov_kernel(K, pi=None, labels=None, coords=None, metric=None) -> RandomWalkSpace:
    K = sparse.csr_matrix(K, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("kernel must be square")
    K.eliminate_zeros()
    _check_stochastic(K)
    if pi is None:
        pi = stationary_measure(K)
    else:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (n,) or np.any(pi <= 0):
            raise ValueError("measure must have one strictly positive weight per state")
    return _with_flags(StateSpace(_labels(n, labels), coords, metric), K, pi)


def _metric_space(states: StateSpace) -> np.ndarray:
    if not states.has_metric:
        raise MissingMetric("a metric or coordinates are required")
    return states.distances()


def build_epsilon_step(states: StateSpace, mu, eps: float) -> RandomWalkSpace:
    """Uniform jumps (w.r.t. ``mu``) into the closed ball ``d(x, y) <= eps``."""
    d = _metric_space(states)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (states.n,) or np.any(mu <= 0):
        raise ValueError("mu must be strictly positive, one weight per state")
    mask = d <= eps
    M = mask * mu[None, :]
    K = M / M.sum(axis=1, keepdims=True)
    return _with_flags(states, sparse.csr_matrix(K), mu)


def build_annulus_step(states: StateSpace, mu, eps: float, delta: float) -> RandomWalkSpace:
    """Uniform jumps into the annulus ``delta < d(x, y) <= eps``."""
    if not 0 <= delta < eps:
        raise InvalidParameter(f"need 0 <= delta < eps, got delta={delta}, eps={eps}")
    d = _metric_space(states)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (states.n,) or np.any(mu <= 0):
        raise ValueError("mu must be strictly positive, one weight per state")
    M = ((d > delta) & (d <= eps)) * mu[None, :]
    mass = M.sum(axis=1)
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise EmptyAnnulus(states.labels[empty[0]])
    return _with_flags(states, sparse.csr_matrix(M / mass[:, None]), mu)


def restrict_to_domain(rws: RandomWalkSpace, omega) -> RandomWalkSpace:
    """Walk on ``omega`` where mass leaving the domain becomes a self-atom."""
    idx = _as_index_array(omega, rws.n)
    if idx.size == 0:
        raise EmptyDomain("domain is empty")
    K = rws.kernel[idx][:, idx]
    leaked = 1.0 - np.asarray(K.sum(axis=1)).ravel()
    leaked[np.abs(leaked) < 1e-15] = 0.0
    K = sparse.csr_matrix(K + sparse.diags(leaked))
    sp = rws.space
    sub = StateSpace(
        tuple(sp.labels[i] for i in idx),
        None if sp.coords is None else sp.coords[idx],
        None if sp.metric is None else sp.metric[np.ix_(idx, idx)],
    )
    return _with_flags(sub, K, rws.nu[idx])


# ---------------------------------------------------------------- validators

def validate_invariance(rws: RandomWalkSpace, tol: float = REVERSIBILITY_TOL) -> CertificateReport:
    pushed = rws.kernel.T @ rws.nu
    rel = np.abs(rws.nu - pushed) / rws.nu
    worst = int(np.argmax(rel)) if rel.size else None
    residual = float(rel.max()) if rel.size else 0.0
    return CertificateReport(
        "invariance", residual <= tol, residual, tol,
        None if worst is None else rws.labels[worst],
        {"absolute": float(np.abs(rws.nu - pushed).max()) if rel.size else 0.0},
    )


def validate_reversibility(rws: RandomWalkSpace, tol: float = REVERSIBILITY_TOL) -> CertificateReport:
    """Detailed balance, pairwise and relative to the larger of the two fluxes.

    A pair with flux in one direction only fails with relative defect 1, so a
    passing report also certifies support symmetry.
    """
    F = rws.flux.tocoo()
    Fd = sparse.csr_matrix(F)
    back = np.asarray(Fd.T.tocsr()[F.row, F.col]).ravel()
    diff = np.abs(F.data - back)
    scale = np.maximum(F.data, back)
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    if diff.size == 0:
        return CertificateReport("reversibility", True, 0.0, tol)
    k = int(np.argmax(diff))
    kr = int(np.argmax(rel))
    passed = bool(rel.max() <= tol)
    worst = (rws.labels[F.row[k]], rws.labels[F.col[k]])
    return CertificateReport(
        "reversibility", passed, float(diff[k]), tol, worst,
        {
            "relative": float(rel[kr]),
            "worst_relative_pair": [rws.labels[F.row[kr]], rws.labels[F.col[kr]]],
            "support_symmetric": bool(np.all((F.data > 0) == (back > 0))),
        },
    )


def support_graph(rws: RandomWalkSpace) -> sparse.csr_matrix:
    F = rws.flux.tolil()
    F.setdiag(0)
    F = sparse.csr_matrix(F)
    F.eliminate_zeros()
    G = (F + F.T) > 0
    return sparse.csr_matrix(G, dtype=float)


def is_ergodic(rws: RandomWalkSpace):
    """Connectivity of the support graph; returns ``(verdict, (A, B) or None)``.

    The witness ``A`` is the component containing state 0, and ``L_m(A, B) = 0``.
    """
    if rws.n <= 1:
        return True, None
    ncomp, comp = csgraph.connected_components(support_graph(rws), directed=False)
    if ncomp == 1:
        return True, None
    A = np.flatnonzero(comp == comp[0])
    B = np.flatnonzero(comp != comp[0])
    return False, (A, B)


def m_boundary(rws: RandomWalkSpace, omega) -> DomainDecomposition:
    idx = _as_index_array(omega, rws.n)
    inside = np.zeros(rws.n, dtype=bool)
    inside[idx] = True
    mass_into = np.asarray(rws.kernel[:, idx].sum(axis=1)).ravel()
    boundary = np.flatnonzero((~inside) & (mass_into > 0))
    if rws.nu[boundary].sum() <= 0:
        warnings.warn(
            "m-boundary has zero measure; the problem needs nu(boundary) > 0 (ergodicity)",
            RuntimeWarning,
            stacklevel=2,
        )
    omega_m = np.union1d(idx, boundary)
    for a in (idx, boundary, omega_m):
        a.setflags(write=False)
    return DomainDecomposition(idx, boundary, omega_m)
