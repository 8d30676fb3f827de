"""Two-sided estimates of the nonlocal q-Poincare constant of a domain.

The constant is the infimum over ``u`` and boundary data ``psi`` of

    [sum_{x in Omega} nu(x) sum_{y in Omega_m} m_x(y) |u_psi(y) - u(x)|^q
     + sum_{boundary} nu |psi|^q] / sum_{Omega} nu |u|^q.

Upper bounds come from explicit witnesses; the lower bound iterates a per-shell
inequality outward from the m-boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import minimize
from scipy.sparse import csgraph

from .errors import MissingMetric, Unbounded, ZeroAlpha, ZeroDenominator
from .least_gradient import DomainProblem
from .space import support_graph

SEED = 0x5EED


@dataclass
class ShellDecomposition:
    shells: list
    boundary: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    coefficients: np.ndarray

    def to_dict(self, labels) -> dict:
        return {
            "shells": [[labels[i] for i in s] for s in self.shells],
            "alphas": self.alphas.tolist(),
            "betas": self.betas.tolist(),
            "coefficients": self.coefficients.tolist(),
        }


@dataclass
class PoincareEstimate:
    q: float
    lambda_upper: float | None = None
    witness_u: np.ndarray | None = None
    witness_psi: np.ndarray | None = None
    lambda_lower: float | None = None
    shells: ShellDecomposition | None = None
    notes: list = field(default_factory=list)


class _Blocks:
    """Pair masses ``a_xy = nu(x) m_x(y)`` for x in the domain, split by target."""

    def __init__(self, problem: DomainProblem):
        A = problem.local_flux
        self.inner = A[problem.inner][:, problem.inner].tocsr()
        self.outer = A[problem.inner][:, problem.outer].tocsr()
        self.nu_in = problem.rws.nu[problem.omega]
        self.nu_out = problem.rws.nu[problem.boundary]
        self.I = self.inner.tocoo()
        self.O = self.outer.tocoo()


def _numerator(b: _Blocks, u, psi, q) -> float:
    I, O = b.I, b.O
    total = float(np.sum(I.data * np.abs(u[I.col] - u[I.row]) ** q))
    total += float(np.sum(O.data * np.abs(psi[O.col] - u[O.row]) ** q))
    return total + float(np.sum(b.nu_out * np.abs(psi) ** q))


def poincare_ratio(problem: DomainProblem, u, psi=None, q: float = 2.0) -> float:
    u = np.asarray(u, dtype=float)
    psi = problem.psi if psi is None else np.asarray(psi, dtype=float)
    b = _Blocks(problem)
    den = float(np.sum(b.nu_in * np.abs(u) ** q))
    if den <= 0:
        raise ZeroDenominator("u vanishes on the domain")
    return _numerator(b, u, psi, q) / den


def _optimal_psi_q2(b: _Blocks, u) -> np.ndarray:
    s = np.asarray(b.outer.sum(axis=0)).ravel()
    return (b.outer.T @ u) / (s + b.nu_out)


def _optimal_psi(b: _Blocks, u, q) -> np.ndarray:
    """Per boundary state, minimize ``sum_x a_xy |t - u_x|^q + nu_y |t|^q`` over t."""
    if q == 2:
        return _optimal_psi_q2(b, u)
    O = b.outer.tocsc()
    m = O.shape[1]
    if q == 1:
        # weighted median of the neighbour values and 0; ties go to the point nearest 0
        psi = np.zeros(m)
        for y in range(m):
            lo, hi = O.indptr[y], O.indptr[y + 1]
            pts = np.append(u[O.indices[lo:hi]], 0.0)
            wts = np.append(O.data[lo:hi], b.nu_out[y])
            cost = np.abs(pts[:, None] - pts[None, :]) @ wts
            best = np.flatnonzero(cost <= cost.min())
            psi[y] = pts[best[np.argmin(np.abs(pts[best]))]]
        return psi
    # q > 1: bisection on the increasing derivative, all boundary states at once
    C = b.O
    vals, cols, w = u[C.row], C.col, C.data
    lo = np.zeros(m)
    hi = np.zeros(m)
    np.minimum.at(lo, cols, vals)
    np.maximum.at(hi, cols, vals)
    phi = lambda d: np.sign(d) * np.abs(d) ** (q - 1)  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = np.bincount(cols, w * phi(mid[cols] - vals), m) + b.nu_out * phi(mid)
        below = h < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))):
            break
    return 0.5 * (lo + hi)


def _quadratic_form(b: _Blocks) -> np.ndarray:
    """Matrix of the q = 2 numerator after exact elimination of ``psi``."""
    I = b.inner.toarray()
    O = b.outer.toarray()
    Q = np.diag(I.sum(axis=1) + I.sum(axis=0)) - (I + I.T)
    s = O.sum(axis=0)
    Q += np.diag(O.sum(axis=1)) - (O / (s + b.nu_out)) @ O.T
    return 0.5 * (Q + Q.T)


def _q2_witness(b: _Blocks):
    Q = _quadratic_form(b)
    vals, vecs = linalg.eigh(Q, np.diag(b.nu_in), subset_by_index=[0, 0])
    u = vecs[:, 0]
    u = u / np.abs(u).max()
    if u.sum() < 0:
        u = -u
    return float(vals[0]), u


def _ratio_and_grad(b: _Blocks, u, psi, q):
    I, O = b.I, b.O
    d_in = u[I.col] - u[I.row]
    d_out = psi[O.col] - u[O.row]
    num = (float(np.sum(I.data * np.abs(d_in) ** q)) + float(np.sum(O.data * np.abs(d_out) ** q))
           + float(np.sum(b.nu_out * np.abs(psi) ** q)))
    den = float(np.sum(b.nu_in * np.abs(u) ** q))
    phi = lambda d: q * np.sign(d) * np.abs(d) ** (q - 1)  # noqa: E731
    g_num = np.zeros(u.size)
    np.add.at(g_num, I.col, I.data * phi(d_in))
    np.add.at(g_num, I.row, -I.data * phi(d_in))
    np.add.at(g_num, O.row, -O.data * phi(d_out))
    g_den = b.nu_in * phi(u)
    return num / den, (g_num - (num / den) * g_den) / den


def _descend(b: _Blocks, u, q, max_iter: int, rtol: float = 1e-10):
    """Minimize ``u -> ratio(u, psi*(u))`` by L-BFGS; with ``psi`` optimal, the
    partial gradient in ``u`` is the gradient of the reduced ratio."""

    def fun(v):
        if not np.any(v):
            return np.inf, np.zeros_like(v)
        r, g = _ratio_and_grad(b, v, _optimal_psi(b, v, q), q)
        return r, g

    r0 = poincare_ratio_blocks(b, u, _optimal_psi(b, u, q), q)
    res = minimize(fun, u, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": rtol, "gtol": 1e-12})
    v = res.x
    if np.any(v) and np.isfinite(res.fun) and res.fun < r0:
        v = v / np.abs(v).max()
        psi = _optimal_psi(b, v, q)
        r = poincare_ratio_blocks(b, v, psi, q)
        if r <= r0:
            return r, v, psi
    return r0, u, _optimal_psi(b, u, q)


def poincare_ratio_blocks(b: _Blocks, u, psi, q) -> float:
    return _numerator(b, u, psi, q) / float(np.sum(b.nu_in * np.abs(u) ** q))


def quick_upper_bound(problem: DomainProblem, q: float) -> float:
    """Cheap upper bound: the q = 2 eigenvector witness evaluated at exponent ``q``."""
    b = _Blocks(problem)
    lam, u = _q2_witness(b)
    if q == 2:
        return max(lam, 0.0)
    return poincare_ratio_blocks(b, u, _optimal_psi(b, u, q), q)


def best_constant(problem: DomainProblem, q: float = 2.0, *, starts: int = 5, max_iter: int = 500,
                  witnesses=(), seed: int = SEED) -> PoincareEstimate:
    """Smallest witness ratio found; always an upper bound on the constant.

    For q = 2 the boundary data are eliminated in closed form and the minimum
    is a generalized eigenvalue, so the bound is exact up to rounding.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    b = _Blocks(problem)
    lam2, u2 = _q2_witness(b)
    if q == 2:
        psi = _optimal_psi_q2(b, u2)
        ratio = poincare_ratio_blocks(b, u2, psi, 2.0)
        return PoincareEstimate(2.0, ratio, u2, psi,
                                notes=["exact elimination of boundary data; generalized eigenvalue"])
    rng = np.random.default_rng(seed)
    candidates = [u2, np.ones(b.nu_in.size)]
    candidates += [np.asarray(w, dtype=float) for w in witnesses]
    candidates += [rng.uniform(0.0, 1.0, b.nu_in.size) for _ in range(starts)]
    best = (np.inf, None, None)
    for u0 in candidates:
        if not np.any(u0):
            continue
        found = _descend(b, u0 / np.abs(u0).max(), q, max_iter)
        if found[0] < best[0]:
            best = found
    return PoincareEstimate(float(q), best[0], best[1], best[2],
                            notes=["multi-start descent; upper bound only"])


def _hop_shells(problem: DomainProblem) -> list:
    G = support_graph(problem.rws)
    sub = problem.decomp.omega_m
    H = G[sub][:, sub]
    m = sub.size
    # distances from the boundary through domain states only: drop boundary-boundary links
    is_out = np.zeros(m, dtype=bool)
    is_out[problem.outer] = True
    H = H.tocoo()
    keep = ~(is_out[H.row] & is_out[H.col])
    H = sparse.csr_matrix((H.data[keep], (H.row[keep], H.col[keep])), shape=(m, m))
    src = m
    extra = sparse.csr_matrix((np.ones(problem.outer.size), (np.full(problem.outer.size, src), problem.outer)),
                              shape=(m + 1, m + 1))
    H = sparse.bmat([[H, None], [None, sparse.csr_matrix((1, 1))]]).tocsr() + extra
    dist = csgraph.shortest_path(H, directed=False, unweighted=True, indices=src)
    d = dist[problem.inner] - 1
    if not np.all(np.isfinite(d)):
        raise Unbounded([problem.rws.labels[x] for x in problem.omega[~np.isfinite(d)]])
    d = d.astype(int)
    return [problem.omega[d == j] for j in range(1, int(d.max(initial=0)) + 1)]


def _width_shells(problem: DomainProblem, width: float) -> list:
    space = problem.rws.space
    if not space.has_metric:
        raise MissingMetric("width shells need a metric or coordinates")
    D = space.distances()
    remaining = set(problem.omega.tolist())
    previous = problem.boundary
    shells = []
    while remaining:
        rem = np.array(sorted(remaining))
        near = D[np.ix_(rem, previous)].min(axis=1) <= width
        if not near.any():
            raise Unbounded([problem.rws.labels[x] for x in rem])
        shell = rem[near]
        shells.append(shell)
        remaining -= set(shell.tolist())
        previous = shell
    return shells


def shell_decomposition(problem: DomainProblem, q: float, shells="hop") -> ShellDecomposition:
    if isinstance(shells, str):
        if shells == "hop":
            layers = _hop_shells(problem)
        elif shells.startswith("width="):
            layers = _width_shells(problem, float(shells.split("=", 1)[1]))
        else:
            raise ValueError(f"unknown shell mode {shells!r}")
    else:
        layers = _width_shells(problem, float(shells))
    K = problem.rws.kernel
    prev = problem.boundary
    alphas = []
    for j, B in enumerate(layers, start=1):
        alpha = float(np.asarray(K[B][:, prev].sum(axis=1)).min())
        if alpha <= 0:
            raise ZeroAlpha(j)
        alphas.append(alpha)
        prev = B
    alphas = np.array(alphas)
    betas = 2.0 ** q / alphas
    coeffs = np.empty_like(betas)
    c = 0.0
    for j, beta in enumerate(betas):
        c = beta * (1.0 + c)
        coeffs[j] = c
    return ShellDecomposition(layers, problem.boundary, alphas, betas, coeffs)


def layered_lower_bound(problem: DomainProblem, q: float = 2.0, shells="hop") -> PoincareEstimate:
    """``1 / sum_j c_j`` with ``c_j = 2^q / alpha_j (1 + c_{j-1})`` over shells grown from the boundary."""
    dec = shell_decomposition(problem, q, shells)
    lam = 1.0 / float(dec.coefficients.sum())
    return PoincareEstimate(float(q), lambda_lower=lam, shells=dec,
                            notes=[f"shells={shells}" if isinstance(shells, str) else f"shells=width={shells}"])


def poincare_estimate(problem: DomainProblem, q: float = 2.0, shells="hop", **opts) -> PoincareEstimate:
    up = best_constant(problem, q, **opts)
    low = layered_lower_bound(problem, q, shells)
    up.lambda_lower, up.shells = low.lambda_lower, low.shells
    up.notes += low.notes
    return up
