"""Small linear programs over boxes: a primal-dual first-order solver and a
vertex-enumeration oracle.

Both solve

    maximize  c @ x   subject to  A @ x = b,  lo <= x <= hi

the enumeration only for ``A`` empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import svds

from .errors import ProblemTooLarge

MAX_ENUMERATION_VARS = 20


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    gap: float
    violation: float
    iterations: int
    converged: bool


def _operator_norm(A) -> float:
    if A.shape[0] == 0 or A.nnz == 0:
        return 0.0
    if min(A.shape) <= 2:
        return float(np.linalg.norm(A.toarray(), 2))
    try:
        return float(svds(A.astype(float), k=1, return_singular_vectors=False)[0])
    except Exception:
        return float(np.linalg.norm(A.toarray(), 2))


def primal_dual_box_lp(c, lo, hi, A=None, b=None, *, max_iter: int = 100_000,
                       tol: float = 1e-8, x0=None) -> LPResult:
    """Chambolle-Pock iterations for a box-constrained LP with equality rows.

    Stops when both the equality violation and the duality gap are below
    ``tol``.  For infeasible systems the iterate approaches a least-violation
    point and ``converged`` stays False.
    """
    c = np.asarray(c, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), c.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), c.shape)
    nvar = c.size
    if A is None:
        A = sparse.csr_matrix((0, nvar))
        b = np.zeros(0)
    A = sparse.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    L = _operator_norm(A)
    if L == 0:
        tau = sigma = 1.0
    else:
        tau = sigma = 0.99 / L
    scale_c = max(1.0, float(np.abs(c).max(initial=0.0)))
    if L == 0:
        tau = 1e6 * (hi - lo).max(initial=1.0) / scale_c

    x = np.clip(np.zeros(nvar) if x0 is None else np.asarray(x0, float), lo, hi)
    y = np.zeros(A.shape[0])
    AT = A.T.tocsr()
    it = 0
    gap = violation = np.inf
    for it in range(1, max_iter + 1):
        x_new = np.clip(x + tau * (c - AT @ y), lo, hi)
        y = y + sigma * (A @ (2 * x_new - x) - b)
        x = x_new
        if it % 10 == 0 or it == 1:
            r = A @ x - b
            violation = float(np.abs(r).max(initial=0.0))
            # dual bound: max over box of (c - A^T y) @ x + b @ y
            red = c - AT @ y
            dual = float(b @ y + np.where(red > 0, red * hi, red * lo).sum())
            gap = abs(dual - float(c @ x))
            if violation <= tol and gap <= tol * scale_c:
                break
    r = A @ x - b
    violation = float(np.abs(r).max(initial=0.0))
    return LPResult(x, float(c @ x), float(gap), violation, it,
                    bool(violation <= tol and gap <= tol * scale_c))


def enumerate_box_vertices(c, lo, hi, *, chunk: int = 1 << 15) -> LPResult:
    """Brute-force maximum of ``c @ x`` over the vertices of a box."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if n > MAX_ENUMERATION_VARS:
        raise ProblemTooLarge(f"{n} variables exceed the enumeration limit {MAX_ENUMERATION_VARS}")
    lo = np.broadcast_to(np.asarray(lo, dtype=float), c.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), c.shape)
    best_val = -np.inf
    best = None
    bits = np.arange(n)
    total = 1 << n
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total))
        choose_hi = ((codes[:, None] >> bits[None, :]) & 1).astype(bool)
        X = np.where(choose_hi, hi, lo)
        vals = X @ c
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best = X[k].copy()
    if best is None:
        best = np.zeros(0)
        best_val = 0.0
    return LPResult(best, best_val, 0.0, 0.0, total, True)
