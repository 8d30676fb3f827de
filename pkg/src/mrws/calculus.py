"""Nonlocal calculus on a finite random walk space.

All sums run over the stored support of the pair measure ``nu(x) m_x(y)`` in
CSR order (ascending row, then column), which fixes the summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import lp
from .errors import MRWSError, ProblemTooLarge
from .space import RandomWalkSpace

MAX_DUAL_PAIRS = 20_000


@dataclass(frozen=True, eq=False)
class PairField:
    """Real values on ordered pairs ``(rows[k], cols[k])``."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise ValueError("rows, cols and values must have equal length")

    def __len__(self):
        return self.values.size

    def to_sparse(self, n: int) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.values, (self.rows, self.cols)), shape=(n, n))

    def as_dict(self) -> dict:
        return {(int(x), int(y)): float(v) for x, y, v in zip(self.rows, self.cols, self.values)}

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max(initial=0.0))

    @classmethod
    def from_dict(cls, entries: dict) -> "PairField":
        keys = sorted(entries)
        return cls([k[0] for k in keys], [k[1] for k in keys], [entries[k] for k in keys])

    @classmethod
    def on_support(cls, M: sparse.spmatrix, values) -> "PairField":
        M = sparse.csr_matrix(M)
        rows = np.repeat(np.arange(M.shape[0]), np.diff(M.indptr))
        return cls(rows, M.indices.copy(), values)


def _indices(items) -> np.ndarray:
    return np.unique(np.asarray(list(items), dtype=int))


def _support(rws: RandomWalkSpace):
    F = rws.flux
    rows = np.repeat(np.arange(rws.n), np.diff(F.indptr))
    return F, rows, F.indices


def interaction(rws: RandomWalkSpace, A, B) -> float:
    """``L_m(A, B)``: the pair-measure mass flowing from ``A`` into ``B``."""
    A, B = _indices(A), _indices(B)
    if A.size == 0 or B.size == 0:
        return 0.0
    return float(rws.flux[A][:, B].sum())


def perimeter(rws: RandomWalkSpace, E) -> float:
    E = _indices(E)
    inside = np.zeros(rws.n, dtype=bool)
    inside[E] = True
    rest = np.flatnonzero(~inside)
    value = interaction(rws, E, rest)
    other = float(rws.nu[E].sum()) - interaction(rws, E, E)
    if abs(value - other) > 1e-10 * max(1.0, float(rws.nu[E].sum())):
        raise MRWSError(f"perimeter forms disagree: {value!r} vs {other!r}")
    return value


def total_variation(rws: RandomWalkSpace, u, restrict=None) -> float:
    u = np.asarray(u, dtype=float)
    F, rows, cols = _support(rws)
    w = F.data
    if restrict is not None:
        keep = np.zeros(rws.n, dtype=bool)
        keep[_indices(restrict)] = True
        sel = keep[rows] & keep[cols]
        rows, cols, w = rows[sel], cols[sel], w[sel]
    return 0.5 * float(np.sum(w * np.abs(u[cols] - u[rows])))


def nonlocal_gradient(rws: RandomWalkSpace, u) -> PairField:
    u = np.asarray(u, dtype=float)
    F, rows, cols = _support(rws)
    return PairField(rows, cols.copy(), u[cols] - u[rows])


def divergence(rws: RandomWalkSpace, z: PairField) -> np.ndarray:
    """``(div z)(x) = 1/2 sum_y (z(x,y) - z(y,x)) m_x(y)``, z read as 0 off its keys."""
    Z = z.to_sparse(rws.n)
    D = (Z - Z.T).multiply(rws.kernel)
    return 0.5 * np.asarray(D.sum(axis=1)).ravel()


def greens_identity_residual(rws: RandomWalkSpace, u, z: PairField, *, force: bool = False) -> float:
    """Absolute defect of ``sum u div(z) nu = -1/2 sum grad(u) z dnu⊗m``."""
    rws.require_reversible(force)
    u = np.asarray(u, dtype=float)
    lhs = float(np.sum(u * divergence(rws, z) * rws.nu))
    F = rws.flux
    Z = z.to_sparse(rws.n)
    G = nonlocal_gradient(rws, u).to_sparse(rws.n)
    rhs = 0.5 * float(G.multiply(Z).multiply(F).sum())
    return abs(lhs + rhs)


def greens_scale(rws: RandomWalkSpace, u, z: PairField) -> float:
    """Natural magnitude of the two sides of Green's identity."""
    u = np.asarray(u, dtype=float)
    G = nonlocal_gradient(rws, u).to_sparse(rws.n)
    Z = z.to_sparse(rws.n)
    return max(1.0, float(abs(G.multiply(Z).multiply(rws.flux)).sum()))


def superlevel_set(u, t) -> np.ndarray:
    """Indices of the strict superlevel set ``{u > t}``."""
    return np.flatnonzero(np.asarray(u) > t)


def coarea_integral(rws: RandomWalkSpace, u) -> float:
    """Exact integral of ``t -> P_m({u > t})`` over the range of ``u``."""
    u = np.asarray(u, dtype=float)
    levels, rank = np.unique(u, return_inverse=True)
    if levels.size < 2:
        return 0.0
    F, rows, cols = _support(rws)
    # pair (x, y) crosses the boundary of {u > t_i} from inside iff rank[y] <= i < rank[x]
    up = rank[rows] > rank[cols]
    delta = np.zeros(levels.size + 1)
    np.add.at(delta, rank[cols[up]], F.data[up])
    np.add.at(delta, rank[rows[up]], -F.data[up])
    per = np.cumsum(delta)[:-2]
    return float(np.sum(per * np.diff(levels)))


def dual_objective(rws: RandomWalkSpace, u):
    """Coefficients ``c`` with ``sum_x u div(z) nu = c @ z`` on the pair support."""
    u = np.asarray(u, dtype=float)
    F, rows, cols = _support(rws)
    back = np.asarray(F.T.tocsr()[rows, cols]).ravel()
    return 0.5 * (u[rows] * F.data - u[cols] * back), PairField(rows, cols.copy(), np.zeros(F.nnz))


def tv_dual_value(rws: RandomWalkSpace, u, *, method: str = "auto", force: bool = False,
                  return_field: bool = False):
    """Maximize ``sum u div(z) nu`` over fields with ``|z| <= 1``.

    ``method`` is ``"enumerate"`` (vertices of the box, at most 20 pairs),
    ``"primal-dual"`` or ``"auto"``.
    """
    rws.require_reversible(force)
    c, support = dual_objective(rws, u)
    if c.size > MAX_DUAL_PAIRS:
        raise ProblemTooLarge(f"{c.size} pair variables exceed {MAX_DUAL_PAIRS}")
    if method == "auto":
        method = "enumerate" if c.size <= lp.MAX_ENUMERATION_VARS else "primal-dual"
    if method == "enumerate":
        res = lp.enumerate_box_vertices(c, -1.0, 1.0)
    elif method == "primal-dual":
        res = lp.primal_dual_box_lp(c, -1.0, 1.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    if return_field:
        return res.value, PairField(support.rows, support.cols, res.x)
    return res.value
