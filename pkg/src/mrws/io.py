"""JSON space, problem and report files.

Space file::

    {"format_version": 1,
     "states": [{"id": "a", "coords": [0.0], "nu": 1.0}, ...],
     "walk": {"kind": "graph", "edges": [["a", "b", 1.0], ...]}
           | {"kind": "rows", "rows": {"a": {"b": 1.0}, ...}},
     "metric": "coords-euclidean" | [[0.0, ...], ...]}

Problem file::

    {"format_version": 1, "space": "space.json" | {...inline space...},
     "omega": ["b"], "psi": {"a": 0.0, "c": 1.0}, "options": {...}}

Reals are written with ``repr`` (shortest round-trip decimal) and keys sorted,
so files are byte-stable.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import BoundaryMismatch, MRWSError, ParseError, SchemaVersionUnsupported, ValidationFailed
from .least_gradient import DomainProblem, make_problem
from .space import RandomWalkSpace, build_from_markov_kernel, build_from_symmetric_weights

FORMAT_VERSION = 1


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: {exc.msg}", exc.lineno, exc.colno) from None


def _read(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return _parse(text, str(path))


def _check_version(doc, source):
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaVersionUnsupported(f"{source}: format_version {version!r} is not supported")


def _require(doc, key, source):
    if key not in doc:
        raise ParseError(f"{source}: missing field {key!r}")
    return doc[key]


# ---------------------------------------------------------------- spaces

def space_from_dict(doc: dict, source: str = "<space>") -> RandomWalkSpace:
    _check_version(doc, source)
    states = _require(doc, "states", source)
    walk = _require(doc, "walk", source)
    try:
        labels = [s["id"] for s in states]
    except (TypeError, KeyError):
        raise ParseError(f"{source}: every state needs an 'id'") from None
    index = {lab: i for i, lab in enumerate(labels)}
    if len(index) != len(labels):
        raise ParseError(f"{source}: duplicate state ids")
    n = len(labels)

    def at(label):
        try:
            return index[label]
        except (KeyError, TypeError):
            raise ParseError(f"{source}: unknown state {label!r}") from None

    coords = None
    if any("coords" in s for s in states):
        if not all("coords" in s for s in states):
            raise ParseError(f"{source}: coords must be given for all states or none")
        coords = np.array([s["coords"] for s in states], dtype=float)
    metric = doc.get("metric")
    table = None
    if isinstance(metric, list):
        table = np.array(metric, dtype=float)
    elif metric not in (None, "coords-euclidean"):
        raise ParseError(f"{source}: unknown metric {metric!r}")

    kind = walk.get("kind") if isinstance(walk, dict) else None
    try:
        if kind == "graph":
            rows, cols, vals = [], [], []
            for e in _require(walk, "edges", source):
                if len(e) != 3:
                    raise ParseError(f"{source}: edges are [i, j, w] triples")
                i, j, w = at(e[0]), at(e[1]), float(e[2])
                rows += [i, j] if i != j else [i]
                cols += [j, i] if i != j else [i]
                vals += [w, w] if i != j else [w]
            W = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
            return build_from_symmetric_weights(W, labels, coords, table)
        if kind == "rows":
            rows, cols, vals = [], [], []
            for x, row in _require(walk, "rows", source).items():
                for y, v in row.items():
                    rows.append(_key(x, index, source))
                    cols.append(_key(y, index, source))
                    vals.append(float(v))
            K = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
            nu = None
            if all("nu" in s for s in states):
                nu = np.array([s["nu"] for s in states], dtype=float)
            return build_from_markov_kernel(K, nu, labels, coords, table)
    except ParseError:
        raise
    except (MRWSError, ValueError) as exc:
        raise ValidationFailed(f"{source}: {exc}", certificate=_failure_certificate(exc), cause=exc) from exc
    raise ParseError(f"{source}: walk kind must be 'graph' or 'rows'")


def _key(k, index, source):
    """JSON object keys are strings; match them against ids of any type."""
    if isinstance(k, (str, int, float)) and k in index:
        return index[k]
    for lab, i in index.items():
        if str(lab) == k:
            return i
    raise ParseError(f"{source}: unknown state {k!r}")


def _failure_certificate(exc) -> dict:
    cert = {"name": type(exc).__name__, "passed": False, "message": str(exc)}
    for attr in ("row", "row_sum", "state"):
        if getattr(exc, attr, None) is not None:
            cert[attr] = getattr(exc, attr)
    return cert


def space_to_dict(rws: RandomWalkSpace) -> dict:
    sp = rws.space
    states = []
    for i, lab in enumerate(sp.labels):
        s = {"id": lab, "nu": float(rws.nu[i])}
        if sp.coords is not None:
            s["coords"] = [float(c) for c in sp.coords[i]]
        states.append(s)
    K = rws.kernel
    rows = {}
    for i, lab in enumerate(sp.labels):
        lo, hi = K.indptr[i], K.indptr[i + 1]
        rows[str(lab)] = {str(sp.labels[j]): float(v) for j, v in zip(K.indices[lo:hi], K.data[lo:hi])}
    doc = {"format_version": FORMAT_VERSION, "states": states, "walk": {"kind": "rows", "rows": rows}}
    if sp.metric is not None:
        doc["metric"] = sp.metric.tolist()
    elif sp.coords is not None:
        doc["metric"] = "coords-euclidean"
    return doc


def load_space(path) -> RandomWalkSpace:
    return space_from_dict(_read(path), str(path))


def save_space(rws: RandomWalkSpace, path) -> None:
    atomic_write(path, dumps(space_to_dict(rws)))


# ---------------------------------------------------------------- problems

def problem_from_dict(doc: dict, base=".", source: str = "<problem>"):
    """Returns ``(problem, options)``."""
    _check_version(doc, source)
    ref = _require(doc, "space", source)
    if isinstance(ref, str):
        rws = load_space(Path(base) / ref)
    elif isinstance(ref, dict):
        rws = space_from_dict(ref, source + ":space")
    else:
        raise ParseError(f"{source}: 'space' must be a path or an object")
    index = {lab: i for i, lab in enumerate(rws.labels)}
    omega = [_key(x, index, source) for x in _require(doc, "omega", source)]
    psi_doc = _require(doc, "psi", source)
    if not isinstance(psi_doc, dict):
        raise ParseError(f"{source}: 'psi' must map state ids to values")
    psi = {}
    extra = []
    for k, v in psi_doc.items():
        try:
            psi[_key(k, index, source)] = float(v)
        except ParseError:
            extra.append(k)
    if extra:
        raise BoundaryMismatch([], extra)
    return make_problem(rws, omega, psi), dict(doc.get("options", {}))


def load_problem(path):
    path = Path(path)
    return problem_from_dict(_read(path), path.parent, str(path))


def problem_to_dict(problem: DomainProblem, space_ref=None, options=None) -> dict:
    labels = problem.rws.labels
    return {
        "format_version": FORMAT_VERSION,
        "space": space_to_dict(problem.rws) if space_ref is None else space_ref,
        "omega": [labels[x] for x in problem.omega],
        "psi": {str(labels[b]): float(v) for b, v in zip(problem.boundary, problem.psi)},
        "options": options or {},
    }


def save_problem(problem: DomainProblem, path, space_ref=None, options=None) -> None:
    atomic_write(path, dumps(problem_to_dict(problem, space_ref, options)))


def load_field(path, problem: DomainProblem, key: str = "u") -> np.ndarray:
    """Domain values from ``{"u": {id: value}}``."""
    doc = _read(path)
    table = doc.get(key) if isinstance(doc, dict) else None
    if not isinstance(table, dict):
        raise ParseError(f"{path}: expected an object under {key!r}")
    labels = problem.rws.labels
    out = np.empty(problem.omega.size)
    for n, x in enumerate(problem.omega):
        lab = labels[x]
        if lab in table:
            out[n] = float(table[lab])
        elif str(lab) in table:
            out[n] = float(table[str(lab)])
        else:
            raise ParseError(f"{path}: no value for state {lab!r}")
    return out


def load_pair_field(path, rws: RandomWalkSpace):
    from .calculus import PairField

    doc = _read(path)
    entries = doc.get("g") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise ParseError(f"{path}: expected a list of [x, y, value] under 'g'")
    index = {lab: i for i, lab in enumerate(rws.labels)}
    rows, cols, vals = [], [], []
    for e in entries:
        rows.append(_key(e[0], index, str(path)))
        cols.append(_key(e[1], index, str(path)))
        vals.append(float(e[2]))
    return PairField(rows, cols, vals)


# ---------------------------------------------------------------- reports

def write_report(path, doc: dict) -> None:
    atomic_write(path, dumps(doc))


def write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write(path, buf.getvalue())
