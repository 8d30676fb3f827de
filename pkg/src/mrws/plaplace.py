"""Nonlocal p-Laplacian Dirichlet problems and the continuation p -> 1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse.linalg import spsolve

from .calculus import PairField
from .errors import InvalidExponent, NoConvergence
from .least_gradient import DomainProblem, relaxed_energy

P_MAX = 16.0
KINK = 1e-12
CLIP_LIMIT = 1e-3
DENSE_LIMIT = 400


def default_schedule(levels: int = 10) -> list[float]:
    return [1.0 + 2.0 ** (-k) for k in range(levels + 1)]


def _check_p(p: float) -> float:
    p = float(p)
    if not p > 1.0:
        raise InvalidExponent(f"exponent must exceed 1, got {p!r}")
    return p


def _phi(d: np.ndarray, p: float) -> np.ndarray:
    """``|d|^(p-2) d``, zero at ``d = 0``."""
    return np.sign(d) * np.abs(d) ** (p - 1.0)


class _System:
    """Pair energy in a set of free variables; pair endpoints are either a free
    variable (index >= 0) or a fixed value."""

    def __init__(self, c, vi, vj, fi, fj, nvar):
        self.c, self.vi, self.vj, self.fi, self.fj, self.k = c, vi, vj, fi, fj, nvar
        self.mi, self.mj = vi >= 0, vj >= 0

    def increments(self, v) -> np.ndarray:
        a = np.where(self.mi, v[np.maximum(self.vi, 0)], self.fi) if v.size else self.fi
        b = np.where(self.mj, v[np.maximum(self.vj, 0)], self.fj) if v.size else self.fj
        return b - a

    def energy(self, v, p) -> float:
        return float(np.sum(self.c * np.abs(self.increments(v)) ** p)) / p

    def gradient(self, v, p) -> np.ndarray:
        flux = self.c * _phi(self.increments(v), p)
        return (np.bincount(self.vi[self.mi], -flux[self.mi], self.k)
                + np.bincount(self.vj[self.mj], flux[self.mj], self.k))

    def hessian(self, v, p):
        """Dense for small systems, sparse otherwise."""
        d = np.abs(self.increments(v))
        h = (p - 1.0) * self.c * np.maximum(d, KINK) ** (p - 2.0)
        mi, mj = self.mi, self.mj
        both = mi & mj & (self.vi != self.vj)
        rows = np.concatenate([self.vi[mi], self.vj[mj], self.vi[both], self.vj[both]])
        cols = np.concatenate([self.vi[mi], self.vj[mj], self.vj[both], self.vi[both]])
        vals = np.concatenate([h[mi], h[mj], -h[both], -h[both]])
        if self.k <= DENSE_LIMIT:
            return np.bincount(rows * self.k + cols, vals, self.k * self.k).reshape(self.k, self.k)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.k, self.k))


def _sweep(system: _System, v, p, M) -> np.ndarray:
    """One Gauss-Seidel pass of exact minimization in each variable.

    Each one-dimensional derivative ``sum c phi(t - other)`` is monotone, so a
    bracketed root finder locates minimizers whose distance to a neighbour is
    far below what a local quadratic model can reach.
    """
    v = v.copy()
    for a in range(system.k):
        on_i = np.flatnonzero(system.vi == a)
        on_j = np.flatnonzero(system.vj == a)
        e = np.concatenate([on_i, on_j])
        if e.size == 0:
            continue
        other_var = np.concatenate([system.vj[on_i], system.vi[on_j]])
        other_fix = np.concatenate([system.fj[on_i], system.fi[on_j]])
        other = np.where(other_var >= 0, v[np.maximum(other_var, 0)], other_fix)
        c = system.c[e]
        lo, hi = max(float(other.min()), -M), min(float(other.max()), M)
        if hi <= lo:
            v[a] = lo
            continue
        h = lambda t: float(np.sum(c * _phi(t - other, p)))  # noqa: E731
        if h(lo) >= 0:
            v[a] = lo
        elif h(hi) <= 0:
            v[a] = hi
        else:
            v[a] = optimize.brentq(h, lo, hi, xtol=1e-15 * max(1.0, M), rtol=4 * np.finfo(float).eps)
    return v


def _full_system(problem: DomainProblem) -> _System:
    i, j, c, _, _ = problem.pairs
    m = problem.decomp.omega_m.size
    node = np.full(m, -1)
    node[problem.inner] = np.arange(problem.omega.size)
    fixed = np.zeros(m)
    fixed[problem.outer] = problem.psi
    return _System(c, node[i], node[j], fixed[i], fixed[j], problem.omega.size)


def _fused_system(problem: DomainProblem, u, delta):
    """Merge states joined by increments of at most ``delta``.

    Returns ``(system, expand, v0)`` where ``expand(v)`` gives domain values, or
    None when a merged group would tie two different boundary values.
    """
    i, j, c, _, _ = problem.pairs
    m = problem.decomp.omega_m.size
    full = problem.extend(u)
    parent = np.arange(m)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    close = np.abs(full[j] - full[i]) <= delta
    for a, b in zip(i[close], j[close]):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(m)])
    pinned = {}
    for b in problem.outer:
        r = roots[b]
        if r in pinned and pinned[r] != full[b]:
            return None
        pinned[r] = full[b]
    free_roots = sorted(set(roots[problem.inner].tolist()) - set(pinned))
    var_of = {r: n for n, r in enumerate(free_roots)}
    var = np.array([var_of.get(r, -1) for r in roots])
    value = np.array([pinned.get(r, 0.0) for r in roots])
    keep = roots[i] != roots[j]
    system = _System(c[keep], var[i[keep]], var[j[keep]], value[i[keep]], value[j[keep]], len(free_roots))
    inner_var = var[problem.inner]
    inner_val = value[problem.inner]
    v0 = np.zeros(len(free_roots))
    counts = np.zeros(len(free_roots))
    sel = inner_var >= 0
    np.add.at(v0, inner_var[sel], np.asarray(u)[sel])
    np.add.at(counts, inner_var[sel], 1.0)
    v0 /= np.maximum(counts, 1.0)

    def expand(v):
        return np.where(inner_var >= 0, v[np.maximum(inner_var, 0)] if v.size else 0.0, inner_val)

    return system, expand, v0


def energy_p(problem: DomainProblem, u, p: float) -> float:
    """``F_p(u) = 1/(2p) sum_{x,y in Omega_m} nu(x) m_x(y) |u_psi(y) - u_psi(x)|^p``."""
    p = _check_p(p)
    return _full_system(problem).energy(np.asarray(u, dtype=float), p)


def gradient_p(problem: DomainProblem, u, p: float) -> np.ndarray:
    """Exact gradient of ``energy_p`` in the domain values."""
    p = _check_p(p)
    return _full_system(problem).gradient(np.asarray(u, dtype=float), p)


def residual_p(problem: DomainProblem, u, p: float) -> np.ndarray:
    """``R(x) = -sum_y m_x(y) |u_psi(y) - u(x)|^(p-2) (u_psi(y) - u(x))`` for x in the domain."""
    p = _check_p(p)
    full = problem.extend(np.asarray(u, dtype=float))
    K = problem.local_kernel[problem.inner]
    rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
    d = full[K.indices] - full[problem.inner][rows]
    out = np.zeros(K.shape[0])
    np.add.at(out, rows, -K.data * _phi(d, p))
    return out


def linear_mean_value_solve(problem: DomainProblem) -> np.ndarray:
    """Direct solve of ``u(x) = sum_y u_psi(y) m_x(y)`` on the domain."""
    K = problem.local_kernel
    inner, outer = problem.inner, problem.outer
    A = sparse.identity(inner.size, format="csc") - K[inner][:, inner].tocsc()
    b = K[inner][:, outer] @ problem.psi
    u = spsolve(A, b) if inner.size > 1 else np.atleast_1d(b / A.toarray()[0, 0])
    return np.atleast_1d(np.asarray(u, dtype=float))


@dataclass
class PSolveResult:
    u: np.ndarray
    p: float
    energy: float
    gradient_norm: float
    iterations: int
    stalled: bool = False


def _advise(problem: DomainProblem, p: float) -> None:
    from .poincare import quick_upper_bound

    lam = quick_upper_bound(problem, p)
    if lam < 1e-12:
        warnings.warn(f"Poincare constant estimate {lam:.3g} is tiny; the problem may be ill-posed",
                      RuntimeWarning, stacklevel=3)


def _newton(system: _System, v, p, M, tol_abs, max_iter):
    """Projected damped Newton; returns ``(v, F, gnorm, iterations, status, trace)``."""
    F = system.energy(v, p)
    trace = []
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        g = system.gradient(v, p)
        gnorm = float(np.abs(g).max(initial=0.0))
        trace.append((it, F, gnorm))
        if gnorm <= tol_abs:
            return v, F, gnorm, it, "converged", trace
        H = system.hessian(v, p)
        diag = H.diagonal()
        ridge = 1e-14 * max(1.0, float(diag.max(initial=1.0)))
        try:
            if isinstance(H, np.ndarray):
                H[np.diag_indices(system.k)] += ridge
                step = linalg.solve(H, -g, assume_a="pos", check_finite=False)
            else:
                step = np.atleast_1d(spsolve((H + ridge * sparse.identity(system.k)).tocsc(), -g))
            ok = bool(np.all(np.isfinite(step)) and float(step @ g) < 0)
        except Exception:
            ok = False
        if not ok:
            step = -g / np.maximum(diag, 1e-300)
        # projected Armijo backtracking; clipping to the data range never raises F_p.
        # For p < 2 the step p - 1 is the reweighted least-squares step, which
        # majorizes F_p and contracts ties that the full Newton step overshoots.
        accepted = False
        best = None
        for t in ((1.0, p - 1.0) if p < 2 else (1.0,)):
            cand = np.clip(v + t * step, -M, M)
            Fc = system.energy(cand, p)
            if Fc <= F + 1e-4 * float(g @ (cand - v)) and (best is None or Fc < best[1]):
                best = (cand, Fc)
        if best is not None:
            cand, Fc = best
            accepted = True
        else:
            t = min(1.0, p - 1.0)
            for _ in range(60):
                t *= 0.5
                cand = np.clip(v + t * step, -M, M)
                Fc = system.energy(cand, p)
                if Fc <= F + 1e-4 * float(g @ (cand - v)):
                    accepted = True
                    break
        if not accepted or F - Fc <= 1e-15 * max(1.0, abs(F)):
            if accepted:
                v, F = cand, Fc
            return v, F, float(np.abs(system.gradient(v, p)).max(initial=0.0)), it, "stalled", trace
        v, F = cand, Fc
    return v, F, gnorm, max_iter, "max_iter", trace


FUSION_THRESHOLDS = (1e-11, 1e-9, 1e-7, 1e-5, 1e-3)
NEWTON_PHASE = 100
POLISH_ROUNDS = 50


def _solve(problem: DomainProblem, p: float, u0=None, *, tol: float = 1e-10,
           max_iter: int = 2000) -> PSolveResult:
    """Damped Newton on ``F_p`` with an active set of tied increments.

    For p < 2 the minimizer may tie neighbouring values exactly; there the
    flux ``|Du|^(p-1)`` is far from zero unless the tie is resolved to the last
    bit, so Newton stalls short of a small gradient.  States joined by tiny
    increments are then merged, the reduced problem is solved, and the merged
    point is accepted only if the full gradient vanishes there.
    """
    system = _full_system(problem)
    M = problem.psi_norm
    u = linear_mean_value_solve(problem) if u0 is None else np.asarray(u0, dtype=float).copy()
    u = np.clip(u, -M, M)
    rows = np.zeros(system.k)
    np.add.at(rows, system.vi[system.mi], system.c[system.mi])
    np.add.at(rows, system.vj[system.mj], system.c[system.mj])
    scale = max(1.0, float(rows.max(initial=0.0)) * max(M, 1e-300) ** (p - 1.0))
    tol_abs = tol * scale
    u, F, gnorm, its, status, trace = _newton(system, u, p, M, tol_abs, NEWTON_PHASE)
    rounds = 0
    while status != "converged" and rounds < POLISH_ROUNDS and its < max_iter:
        rounds += 1
        F_before = F
        u = _sweep(system, u, p, M)
        for delta in FUSION_THRESHOLDS:
            fused = _fused_system(problem, u, delta * max(M, 1.0))
            if fused is None:
                continue
            sub, expand, v0 = fused
            cand = expand(_sweep(sub, np.clip(v0, -M, M), p, M))
            if system.energy(cand, p) < system.energy(u, p):
                u = cand
        u, F, gnorm, more, status, tr = _newton(system, u, p, M, tol_abs, NEWTON_PHASE)
        its += more
        trace += tr
        if status != "converged" and F_before - F <= 1e-14 * max(1.0, abs(F)):
            status = "stalled"
            break
    if status == "converged":
        return PSolveResult(u, p, F, gnorm, its)
    for delta in FUSION_THRESHOLDS:
        fused = _fused_system(problem, u, delta * max(M, 1.0))
        if fused is None:
            continue
        sub, expand, v0 = fused
        v, _, _, sub_its, _, _ = _newton(sub, np.clip(v0, -M, M), p, M, tol_abs * 1e-2, 50)
        cand = expand(v)
        gc = float(np.abs(system.gradient(cand, p)).max(initial=0.0))
        if gc <= tol_abs:
            return PSolveResult(cand, p, system.energy(cand, p), gc, its + sub_its)
    if status == "stalled":
        # no representable descent is left: near-ties of size |flux|^(1/(p-1))
        # fall below the resolution of the values
        return PSolveResult(u, p, F, gnorm, its, stalled=True)
    raise NoConvergence(f"Newton did not converge at p={p} in {its} iterations", trace)


def solve_p(problem: DomainProblem, p: float, *, tol: float = 1e-10, max_iter: int = 2000,
            u0=None, advisory: bool = True) -> np.ndarray:
    """Minimize ``F_p`` with damped Newton and return the domain values."""
    p = _check_p(p)
    if p > P_MAX:
        raise InvalidExponent(f"exponent {p} exceeds {P_MAX}")
    if advisory:
        _advise(problem, p)
    res = _solve(problem, p, u0, tol=tol, max_iter=max_iter)
    if np.abs(res.u).max(initial=0.0) > problem.psi_norm + 1e-9:
        raise AssertionError("maximum principle violated")
    return res.u


@dataclass
class ContinuationResult:
    u: np.ndarray
    g: PairField
    p_trace: list = field(default_factory=list)
    converged: bool = False
    clip: float = 0.0


def flux_field(problem: DomainProblem, u, p: float):
    """``|Du|^(p-2) Du`` on the ordered pair support of ``omega_m``, clipped to [-1, 1].

    Returns ``(field, clip)`` with ``clip`` the largest amount removed.
    """
    full = problem.extend(u)
    A = problem.local_flux
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    raw = _phi(full[A.indices] - full[rows], p)
    clip = float(np.max(np.abs(raw) - 1.0, initial=0.0))
    om = problem.decomp.omega_m
    return PairField(om[rows], om[A.indices], np.clip(raw, -1.0, 1.0)), max(clip, 0.0)


def continuation_to_one(problem: DomainProblem, schedule=None, *, tol: float = 1e-4,
                        newton_tol: float = 1e-10, max_iter: int = 2000) -> ContinuationResult:
    schedule = default_schedule() if schedule is None else [float(p) for p in schedule]
    if not schedule:
        raise ValueError("empty schedule")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    if schedule[0] > 4 or schedule[-1] < 1 + 1e-4:
        raise InvalidExponent("schedule must start at or below 4 and stay at or above 1 + 1e-4")
    _advise(problem, schedule[0])
    u = None
    trace = []
    for p in schedule:
        try:
            res = _solve(problem, p, u, tol=newton_tol, max_iter=max_iter)
        except NoConvergence as exc:
            raise NoConvergence(str(exc), trace + [{"p": p, "newton": exc.trace}]) from None
        u = res.u
        trace.append({
            "p": p,
            "energy_p": res.energy,
            "J": relaxed_energy(problem, u),
            "residual": res.gradient_norm,
            "iterations": res.iterations,
            "stalled": res.stalled,
        })
    g, clip = flux_field(problem, u, schedule[-1])
    J = [t["J"] for t in trace]
    settled = len(J) < 2 or abs(J[-1] - J[-2]) <= tol * max(1.0, abs(J[-1]))
    return ContinuationResult(u, g, trace, bool(settled and clip <= CLIP_LIMIT), clip)
