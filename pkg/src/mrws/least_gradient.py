"""The m-least gradient Dirichlet problem and its exact solution by min cuts.

The relaxed energy ``J(u) = 1/2 sum_{x,y in Omega_m} nu(x) m_x(y) |u_psi(y) - u_psi(x)|``
is a sum of weighted absolute jumps, so by the coarea formula it splits into
one s-t cut problem per level between consecutive boundary values.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import sparse

from .calculus import total_variation
from .errors import BoundaryMismatch, EmptyBoundary, NonNestedCuts, ProblemTooLarge
from .maxflow import FlowNetwork
from .space import DomainDecomposition, RandomWalkSpace, m_boundary

BRUTEFORCE_LIMIT = 10**7
SUBSET_ENUMERATION_LIMIT = 14


@dataclass(frozen=True, eq=False)
class DomainProblem:
    """Domain ``omega``, its m-boundary, and boundary data ``psi``.

    ``psi`` is aligned with ``decomp.boundary``; fields ``u`` on the domain are
    aligned with ``decomp.omega``.
    """

    rws: RandomWalkSpace
    decomp: DomainDecomposition
    psi: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        return self.decomp.omega

    @property
    def boundary(self) -> np.ndarray:
        return self.decomp.boundary

    @property
    def psi_norm(self) -> float:
        return float(np.abs(self.psi).max(initial=0.0))

    @cached_property
    def _positions(self):
        om = self.decomp.omega_m
        inner = np.searchsorted(om, self.decomp.omega)
        outer = np.searchsorted(om, self.decomp.boundary)
        return inner, outer

    @property
    def inner(self) -> np.ndarray:
        """Positions of the domain states inside ``omega_m``."""
        return self._positions[0]

    @property
    def outer(self) -> np.ndarray:
        return self._positions[1]

    @cached_property
    def local_flux(self) -> sparse.csr_matrix:
        om = self.decomp.omega_m
        A = self.rws.flux[om][:, om]
        A = sparse.csr_matrix(A)
        A.sort_indices()
        return A

    @cached_property
    def local_kernel(self) -> sparse.csr_matrix:
        om = self.decomp.omega_m
        return sparse.csr_matrix(self.rws.kernel[om][:, om])

    @cached_property
    def pairs(self):
        """Unordered pairs ``i < j`` of ``omega_m`` positions with symmetrized weight."""
        A = self.local_flux
        C = sparse.triu(A + A.T, k=1).tocoo()
        order = np.lexsort((C.col, C.row))
        i, j = C.row[order], C.col[order]
        Af = self.local_flux
        a_ij = np.asarray(Af[i, j]).ravel()
        a_ji = np.asarray(Af[j, i]).ravel()
        return i, j, 0.5 * (a_ij + a_ji), a_ij, a_ji

    def extend(self, u) -> np.ndarray:
        """``u_psi`` on ``omega_m``."""
        full = np.empty(self.decomp.omega_m.size)
        full[self.inner] = np.asarray(u, dtype=float)
        full[self.outer] = self.psi
        return full

    def to_global(self, u) -> dict:
        labels = self.rws.labels
        om = self.decomp.omega_m
        return {labels[k]: float(v) for k, v in zip(om, self.extend(u))}


@dataclass
class SolveReport:
    u: np.ndarray
    energy: float
    method: str
    tie_break: str | None = None
    diagnostics: list = field(default_factory=list)


def make_problem(rws: RandomWalkSpace, omega, psi) -> DomainProblem:
    """Pose the problem; ``psi`` maps boundary state index to value, or is an
    array aligned with the sorted m-boundary."""
    decomp = m_boundary(rws, omega)
    boundary = decomp.boundary
    if boundary.size == 0:
        raise EmptyBoundary("the domain has an empty m-boundary")
    if isinstance(psi, Mapping):
        keys = {int(k) for k in psi}
        expected = set(boundary.tolist())
        if keys != expected:
            raise BoundaryMismatch(
                [rws.labels[i] for i in sorted(expected - keys)],
                [rws.labels[i] if 0 <= i < rws.n else i for i in sorted(keys - expected)],
            )
        values = np.array([float(psi[int(b)]) for b in boundary])
    else:
        values = np.asarray(psi, dtype=float)
        if values.ndim != 1 or values.size != boundary.size:
            raise BoundaryMismatch(
                [rws.labels[i] for i in boundary[values.size:]],
                [f"#{i}" for i in range(boundary.size, values.size)],
            )
    if not np.all(np.isfinite(values)):
        raise ValueError("boundary data must be finite")
    if rws.ergodic is False:
        warnings.warn("space is not ergodic; the problem may decouple", RuntimeWarning, stacklevel=2)
    values.setflags(write=False)
    return DomainProblem(rws, decomp, values)


def relaxed_energy(problem: DomainProblem, u) -> float:
    full = problem.extend(u)
    A = problem.local_flux
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    return 0.5 * float(np.sum(A.data * np.abs(full[A.indices] - full[rows])))


def clamp_to_boundary_range(u, psi) -> np.ndarray:
    M = float(np.abs(np.asarray(psi, dtype=float)).max(initial=0.0))
    return np.clip(np.asarray(u, dtype=float), -M, M)


# ---------------------------------------------------------------- min cuts

def _exact_weights(problem: DomainProblem):
    i, j, c, a_ij, a_ji = problem.pairs
    exact = [(Fraction(x) + Fraction(y)) / 2 for x, y in zip(a_ij, a_ji)]
    return i, j, exact


def cut_characteristic(problem: DomainProblem, boundary_in, *, minimal: bool = True,
                       exact: bool = True):
    """Minimize ``J`` over characteristic functions with boundary trace ``boundary_in``.

    Returns ``(S, value)`` with ``S`` a boolean mask over the domain states.
    """
    boundary_in = np.asarray(boundary_in, dtype=bool)
    k = problem.omega.size
    m = problem.decomp.omega_m.size
    # local position -> network node (domain) / terminal (boundary)
    node = np.full(m, -1)
    node[problem.inner] = np.arange(k)
    side = np.zeros(m, dtype=int)  # 1 source, 2 sink for boundary states
    side[problem.outer] = np.where(boundary_in, 1, 2)
    s, t = k, k + 1
    if exact:
        i, j, w = _exact_weights(problem)
        net = FlowNetwork(k + 2)
        zero = Fraction(0)
    else:
        i, j, w, _, _ = problem.pairs
        w = [float(x) for x in w]
        net = FlowNetwork(k + 2, eps=1e-15 * max(w, default=1.0))
        zero = 0.0
    net.zero = zero
    const = zero
    for a, b, c in zip(i.tolist(), j.tolist(), w):
        na, nb = node[a], node[b]
        if na >= 0 and nb >= 0:
            net.add_undirected(na, nb, c)
        elif na >= 0 or nb >= 0:
            inner_node = na if na >= 0 else nb
            term = side[b] if na >= 0 else side[a]
            if term == 1:
                net.add_edge(s, inner_node, c)
            else:
                net.add_edge(inner_node, t, c)
        elif side[a] != side[b]:
            const += c
    flow = net.max_flow(s, t)
    src = net.min_cut(minimal=minimal)
    S = np.zeros(k, dtype=bool)
    S[[v for v in src if v < k]] = True
    return S, float(flow + const)


def solve_exact(problem: DomainProblem, tie_break: str = "minimal", *, exact: bool = True) -> SolveReport:
    """Layer-cake minimizer of ``J``: one min cut per gap between boundary values.

    ``tie_break`` selects the pointwise minimal or maximal minimizer.
    """
    if tie_break in ("min", "max"):
        tie_break = {"min": "minimal", "max": "maximal"}[tie_break]
    if tie_break not in ("minimal", "maximal"):
        raise ValueError("tie_break must be 'minimal' or 'maximal'")
    minimal = tie_break == "minimal"
    levels = np.unique(problem.psi)
    k = problem.omega.size
    if levels.size == 1:
        u = np.full(k, levels[0])
        return SolveReport(u, relaxed_energy(problem, u), "mincut", tie_break, [])
    u = np.full(k, levels[0])
    diagnostics = []
    previous = None
    for lo, hi in zip(levels[:-1], levels[1:]):
        t = 0.5 * (lo + hi)
        S, value = cut_characteristic(problem, problem.psi > t, minimal=minimal, exact=exact)
        if previous is not None and np.any(S & ~previous):
            raise NonNestedCuts(f"cut at level {t!r} is not contained in the previous one")
        previous = S
        u = u + (hi - lo) * S
        diagnostics.append({
            "threshold": float(t),
            "height": float(hi - lo),
            "cut_value": value,
            "source_side": [problem.rws.labels[x] for x in problem.omega[S]],
        })
    # values are exactly boundary values: snap away accumulated rounding
    u = levels[np.argmin(np.abs(u[:, None] - levels[None, :]), axis=1)]
    return SolveReport(u, relaxed_energy(problem, u), "mincut", tie_break, diagnostics)


def _energies(problem: DomainProblem, U_full: np.ndarray) -> np.ndarray:
    i, j, c, _, _ = problem.pairs
    return np.abs(U_full[:, j] - U_full[:, i]) @ c


def solve_bruteforce(problem: DomainProblem, grid=None, *, chunk: int = 50_000) -> SolveReport:
    """Exhaustive minimization of ``J`` over ``grid**omega`` (default grid: boundary values)."""
    grid = np.unique(problem.psi) if grid is None else np.unique(np.asarray(grid, dtype=float))
    k = problem.omega.size
    if float(grid.size) ** k > BRUTEFORCE_LIMIT:
        raise ProblemTooLarge(f"{grid.size}^{k} candidates exceed {BRUTEFORCE_LIMIT}")
    m = problem.decomp.omega_m.size
    best_val, best_u = np.inf, None
    it = itertools.product(range(grid.size), repeat=k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            break
        idx = np.array(block, dtype=int).reshape(len(block), k)
        U = np.empty((len(block), m))
        U[:, problem.inner] = grid[idx]
        U[:, problem.outer] = problem.psi
        e = _energies(problem, U)
        a = int(np.argmin(e))
        if e[a] < best_val:
            best_val, best_u = float(e[a]), grid[idx[a]]
    return SolveReport(best_u, relaxed_energy(problem, best_u), "bruteforce", None,
                       [{"grid": grid.tolist()}])


# ---------------------------------------------------------------- structure checks

def is_least_gradient(rws: RandomWalkSpace, u, omega, *, tol: float = 1e-9) -> bool:
    """Whether ``u`` (on all of X) cannot lower ``TV_m`` by perturbations inside ``omega``."""
    u = np.asarray(u, dtype=float)
    decomp = m_boundary(rws, omega)
    if decomp.boundary.size == 0:
        return total_variation(rws, u) <= tol
    problem = make_problem(rws, decomp.omega, u[decomp.boundary])
    J_u = relaxed_energy(problem, u[decomp.omega])
    # pairs leaving omega_m do not see the domain, so TV and J differ by a constant
    outside = total_variation(rws, u) - J_u
    inner = total_variation(rws, u, restrict=decomp.omega_m)
    if abs(inner - J_u) > 1e-9 * max(1.0, J_u) or outside < -1e-9 * max(1.0, J_u):
        return False
    best = solve_exact(problem).energy
    return J_u <= best + tol * max(1.0, best)


def _characteristic_energy(problem: DomainProblem, S_mask, boundary_in) -> float:
    full = np.empty(problem.decomp.omega_m.size)
    full[problem.inner] = S_mask
    full[problem.outer] = boundary_in
    return float(_energies(problem, full[None, :])[0])


def minimal_characteristic_energy(problem: DomainProblem, boundary_in, method: str = "auto") -> float:
    k = problem.omega.size
    if method == "auto":
        method = "bruteforce" if k <= SUBSET_ENUMERATION_LIMIT else "mincut"
    if method == "mincut":
        return cut_characteristic(problem, boundary_in)[1]
    if method != "bruteforce":
        raise ValueError(f"unknown method {method!r}")
    if k > SUBSET_ENUMERATION_LIMIT:
        raise ProblemTooLarge(f"subset enumeration over {k} states exceeds {SUBSET_ENUMERATION_LIMIT}")
    codes = np.arange(1 << k)
    X = ((codes[:, None] >> np.arange(k)[None, :]) & 1).astype(float)
    U = np.empty((X.shape[0], problem.decomp.omega_m.size))
    U[:, problem.inner] = X
    U[:, problem.outer] = np.asarray(boundary_in, dtype=float)
    return float(_energies(problem, U).min())


def superlevel_minimality(problem: DomainProblem, u, t: float, *, method: str = "auto",
                          tol: float = 1e-9) -> bool:
    """Whether ``chi_{u_psi > t}`` minimizes ``J`` among characteristic functions
    with boundary trace ``chi_{psi > t}``."""
    u = np.asarray(u, dtype=float)
    boundary_in = problem.psi > t
    value = _characteristic_energy(problem, (u > t).astype(float), boundary_in.astype(float))
    best = minimal_characteristic_energy(problem, boundary_in, method)
    return value <= best + tol * max(1.0, best)
