"""Calibration fields for the 1-Laplacian and the median value property.

A calibration of ``u`` is an antisymmetric pair field ``g`` with values in the
sign of ``u_psi(y) - u_psi(x)`` and zero ``m_x``-mean at every domain state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse

from . import lp
from .calculus import PairField
from .errors import MedianViolated, ProblemTooLarge, SupportMismatch
from .least_gradient import DomainProblem
from .maxflow import FlowNetwork

MAX_CALIBRATION_PAIRS = 20_000
EXACT_FREE_PAIRS = 30
INFEASIBILITY_TOL = 1e-8
CONDITIONS = ("bound", "antisymmetry", "sign", "divergence")


@dataclass
class CalibrationCertificate:
    g: PairField
    residuals: dict
    verdict: dict
    tol: float
    method: str = "given"

    @property
    def passed(self) -> bool:
        return all(self.verdict.values())

    feasible = True

    def to_dict(self, labels) -> dict:
        return {
            "feasible": True,
            "passed": self.passed,
            "tol": self.tol,
            "method": self.method,
            "residuals": self.residuals,
            "verdict": self.verdict,
            "g": [[labels[x], labels[y], float(v)] for x, y, v in zip(self.g.rows, self.g.cols, self.g.values)],
        }


@dataclass
class Infeasible:
    """No calibration exists; ``deficit`` is the unroutable divergence mass."""

    deficit: float
    witness: list = field(default_factory=list)
    method: str = "flow"
    feasible = False
    passed = False

    def to_dict(self, labels) -> dict:
        return {"feasible": False, "passed": False, "deficit": self.deficit,
                "witness": [labels[x] for x in self.witness], "method": self.method}


def _ordered_support(problem: DomainProblem):
    """Ordered pairs ``(x, y)`` of ``omega_m`` with ``m_x(y) > 0``, in local positions."""
    A = problem.local_flux
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    return rows, A.indices.copy()


def _local_field(problem: DomainProblem, g: PairField) -> np.ndarray:
    om = problem.decomp.omega_m
    rows, cols = _ordered_support(problem)
    lookup = {(int(om[r]), int(om[c])): k for k, (r, c) in enumerate(zip(rows, cols))}
    values = np.full(rows.size, np.nan)
    extra = []
    for x, y, v in zip(g.rows, g.cols, g.values):
        k = lookup.get((int(x), int(y)))
        if k is None:
            extra.append((x, y))
        else:
            values[k] = v
    missing = [(int(om[r]), int(om[c])) for r, c, v in zip(rows, cols, values) if np.isnan(v)]
    if extra or missing:
        labels = problem.rws.labels
        raise SupportMismatch(
            f"field does not match the pair support: missing {[(labels[a], labels[b]) for a, b in missing[:5]]}, "
            f"extra {[(labels[a], labels[b]) for a, b in extra[:5]]}"
        )
    return values


def verify_calibration(problem: DomainProblem, u, g: PairField, tol: float = 1e-9) -> CalibrationCertificate:
    vals = _local_field(problem, g)
    rows, cols = _ordered_support(problem)
    full = problem.extend(np.asarray(u, dtype=float))
    A = problem.local_flux

    bound = float(np.max(np.abs(vals) - 1.0, initial=0.0))
    G = sparse.csr_matrix((vals, (rows, cols)), shape=A.shape)
    S = (G + G.T).tocoo()
    present = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=A.shape)
    both = present.multiply(present.T).tocoo()
    sym = {(r, c) for r, c in zip(both.row, both.col)}
    anti = max((abs(v) for r, c, v in zip(S.row, S.col, S.data) if (r, c) in sym), default=0.0)

    d = full[cols] - full[rows]
    strict = np.abs(d) > tol
    sign = float(np.max(np.abs(vals[strict] - np.sign(d[strict])), initial=0.0))

    K = problem.local_kernel
    mean = np.asarray(K.multiply(G).sum(axis=1)).ravel()[problem.inner]
    div = float(np.max(np.abs(mean), initial=0.0))

    residuals = {"bound": max(bound, 0.0), "antisymmetry": float(anti), "sign": sign, "divergence": div}
    verdict = {k: bool(residuals[k] <= tol) for k in CONDITIONS}
    return CalibrationCertificate(g, residuals, verdict, tol)


def _fixed_and_free(problem: DomainProblem, u, tol):
    i, j, c, _, _ = problem.pairs
    full = problem.extend(np.asarray(u, dtype=float))
    d = full[j] - full[i]
    fixed = np.abs(d) > tol
    return i, j, c, d, fixed


def _assemble(problem: DomainProblem, pair_values: dict) -> PairField:
    """Antisymmetric field on the ordered support from values on ``(i, j)``, ``i < j``."""
    om = problem.decomp.omega_m
    rows, cols = _ordered_support(problem)
    vals = np.zeros(rows.size)
    for k, (r, c) in enumerate(zip(rows, cols)):
        if r < c:
            vals[k] = pair_values.get((r, c), 0.0)
        elif r > c:
            vals[k] = -pair_values.get((c, r), 0.0)
    return PairField(om[rows], om[cols], vals)


def _flow_route(problem: DomainProblem, i, j, c, d, fixed, exact: bool):
    """Transshipment feasibility: free flows ``c * g`` must cancel the fixed divergence."""
    k = problem.omega.size
    m = problem.decomp.omega_m.size
    node = np.full(m, k)  # every boundary state collapses onto the ground node k
    node[problem.inner] = np.arange(k)
    conv = Fraction if exact else float
    zero = conv(0)
    weight = [conv(x) for x in c]
    b = [zero] * (k + 1)
    for e in np.flatnonzero(fixed):
        s = 1 if d[e] > 0 else -1
        # fixed g contributes s * w out of i and s * w into j
        b[node[i[e]]] -= s * weight[e]
        b[node[j[e]]] += s * weight[e]
    src, snk = k + 1, k + 2
    scale = max([abs(float(x)) for x in weight], default=1.0)
    net = FlowNetwork(k + 3, eps=0 if exact else 1e-14 * scale)
    net.zero = zero
    arcs = {}
    for e in np.flatnonzero(~fixed):
        a, bb = node[i[e]], node[j[e]]
        if a != bb:
            arcs[e] = net.add_undirected(int(a), int(bb), weight[e])
    # b[x] is the net outflow the free arcs must carry away from x
    supply = zero
    for x in range(k + 1):
        if b[x] > 0:
            net.add_edge(src, x, b[x])
            supply += b[x]
        elif b[x] < 0:
            net.add_edge(x, snk, -b[x])
    flow = net.max_flow(src, snk)
    deficit = float(supply - flow)
    if deficit > (0 if exact else INFEASIBILITY_TOL * max(1.0, float(supply))):
        cut = sorted(v for v in net.min_cut() if v < k)
        return None, deficit, [int(problem.omega[v]) for v in cut]
    values = {}
    for e in range(i.size):
        if fixed[e]:
            values[(int(i[e]), int(j[e]))] = float(np.sign(d[e]))
        elif e in arcs:
            values[(int(i[e]), int(j[e]))] = float(net.net_flow(arcs[e]) / weight[e])
        else:
            values[(int(i[e]), int(j[e]))] = 0.0
    return values, 0.0, []


def _lp_route(problem: DomainProblem, i, j, c, d, fixed, max_iter):
    k = problem.omega.size
    m = problem.decomp.omega_m.size
    node = np.full(m, -1)
    node[problem.inner] = np.arange(k)
    nu = problem.rws.nu[problem.omega]
    free = np.flatnonzero(~fixed)
    rhs = np.zeros(k)
    for e in np.flatnonzero(fixed):
        s = np.sign(d[e])
        if node[i[e]] >= 0:
            rhs[node[i[e]]] -= s * c[e]
        if node[j[e]] >= 0:
            rhs[node[j[e]]] += s * c[e]
    rows, cols, vals = [], [], []
    for col, e in enumerate(free):
        if node[i[e]] >= 0:
            rows.append(node[i[e]]); cols.append(col); vals.append(c[e])
        if node[j[e]] >= 0:
            rows.append(node[j[e]]); cols.append(col); vals.append(-c[e])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(k, free.size))
    # rows divided by nu give the m_x-means themselves
    Dinv = sparse.diags(1.0 / nu)
    res = lp.primal_dual_box_lp(np.zeros(free.size), -1.0, 1.0, Dinv @ A, rhs / nu,
                                max_iter=max_iter, tol=INFEASIBILITY_TOL)
    if res.violation > INFEASIBILITY_TOL:
        return None, res.violation, []
    values = {}
    for e in range(i.size):
        values[(int(i[e]), int(j[e]))] = float(np.sign(d[e])) if fixed[e] else 0.0
    for col, e in enumerate(free):
        values[(int(i[e]), int(j[e]))] = float(res.x[col])
    return values, 0.0, []


def find_calibration(problem: DomainProblem, u, tol: float = 1e-9, *, method: str = "auto",
                     verify_tol: float | None = None, max_iter: int = 200_000):
    """Search for a calibration of ``u``; returns a certificate or ``Infeasible``.

    ``method``: ``"flow"`` (max-flow feasibility, exact rationals for at most 30
    free pairs), ``"primal-dual"`` (first-order LP) or ``"auto"`` (flow).
    """
    problem.rws.require_reversible()
    i, j, c, d, fixed = _fixed_and_free(problem, u, tol)
    if i.size > MAX_CALIBRATION_PAIRS:
        raise ProblemTooLarge(f"{i.size} pairs exceed {MAX_CALIBRATION_PAIRS}")
    if method in ("auto", "flow"):
        exact = int((~fixed).sum()) <= EXACT_FREE_PAIRS
        values, deficit, witness = _flow_route(problem, i, j, c, d, fixed, exact)
        tag = "flow-exact" if exact else "flow"
    elif method == "primal-dual":
        values, deficit, witness = _lp_route(problem, i, j, c, d, fixed, max_iter)
        tag = "primal-dual"
    else:
        raise ValueError(f"unknown method {method!r}")
    if values is None:
        return Infeasible(deficit, witness, tag)
    g = _assemble(problem, values)
    cert = verify_calibration(problem, u, g, tol if verify_tol is None else verify_tol)
    cert.method = tag
    return cert


# ---------------------------------------------------------------- median property

@dataclass
class MedianReport:
    states: list
    plus: np.ndarray
    minus: np.ndarray
    zero: np.ndarray
    verdict: np.ndarray
    tau: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.verdict))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tau": self.tau,
            "states": [
                {"state": s, "plus": float(p), "minus": float(mi), "zero": float(z), "ok": bool(v)}
                for s, p, mi, z, v in zip(self.states, self.plus, self.minus, self.zero, self.verdict)
            ],
        }


def _partition_masses(problem: DomainProblem, u, tau):
    full = problem.extend(np.asarray(u, dtype=float))
    K = problem.local_kernel[problem.inner].tocsr()
    rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
    d = full[K.indices] - full[problem.inner][rows]
    cls = np.where(d > tau, 1, np.where(d < -tau, -1, 0))
    n = K.shape[0]
    plus = np.bincount(rows, K.data * (cls == 1), n)
    minus = np.bincount(rows, K.data * (cls == -1), n)
    zero = np.bincount(rows, K.data * (cls == 0), n)
    return K, rows, cls, plus, minus, zero


def median_value_check(problem: DomainProblem, u, tau: float = 1e-9) -> MedianReport:
    _, _, _, plus, minus, zero = _partition_masses(problem, u, tau)
    ok = (plus + zero >= 0.5 - tau) & (minus + zero >= 0.5 - tau)
    labels = problem.rws.labels
    return MedianReport([labels[x] for x in problem.omega], plus, minus, zero, ok, tau)


def median_pseudocalibration(problem: DomainProblem, u, tau: float = 1e-9) -> PairField:
    """Field with values +-1 off ties and the balancing constant on ties.

    Domain rows follow the three-part rule; boundary rows carry the negated
    partner value towards the domain and ``sign(Du)`` between boundary states.
    The result has zero ``m_x``-means but need not be antisymmetric.
    """
    report = median_value_check(problem, u, tau)
    if not report.passed:
        bad = [s for s, v in zip(report.states, report.verdict) if not v]
        raise MedianViolated(f"median value property fails at {bad[:5]}")
    K, rows, cls, plus, minus, zero = _partition_masses(problem, u, tau)
    tie = np.divide(minus - plus, zero, out=np.zeros_like(zero), where=zero > 0)
    vals = np.where(cls == 0, tie[rows], cls.astype(float))
    om = problem.decomp.omega_m
    inner_rows = problem.inner[rows]
    entries = {(int(om[r]), int(om[c])): float(v) for r, c, v in zip(inner_rows, K.indices, vals)}
    full = problem.extend(np.asarray(u, dtype=float))
    srows, scols = _ordered_support(problem)
    out = []
    is_inner = np.zeros(om.size, dtype=bool)
    is_inner[problem.inner] = True
    for r, c in zip(srows, scols):
        key = (int(om[r]), int(om[c]))
        if is_inner[r]:
            out.append(entries[key])
        elif is_inner[c]:
            out.append(-entries[(key[1], key[0])])
        else:
            d = full[c] - full[r]
            out.append(float(np.sign(d)) if abs(d) > tau else 0.0)
    return PairField(om[srows], om[scols], np.array(out))
