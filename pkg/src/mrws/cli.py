"""Command-line front end: ``mrws <command> ...``.

Exit status is 0 on success, 2 when a verification fails and 1 on usage or
input errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
# paths are recorded through their digests so reports do not depend on cwd
_PATH_ARGS = ("space", "problem", "outdir", "u_file", "g_file")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cap_threads() -> None:
    value = os.environ.get("MRWS_THREADS", "").strip()
    if value and value != "0":
        for var in _THREAD_VARS:
            os.environ.setdefault(var, value)


def _labels_table(problem, u):
    labels = problem.rws.labels
    full = problem.extend(u)
    return {str(labels[x]): float(v) for x, v in zip(problem.decomp.omega_m, full)}


def _u_rows(problem, u):
    labels = problem.rws.labels
    inside = set(problem.omega.tolist())
    full = problem.extend(u)
    return [(labels[x], "omega" if x in inside else "boundary", float(v))
            for x, v in zip(problem.decomp.omega_m, full)]


def _provenance(args, inputs):
    from . import __version__
    from .io import digest

    return {
        "command": args.command,
        "inputs": {Path(p).name: digest(p) for p in inputs if p},
        "options": {k: v for k, v in sorted(vars(args).items())
                    if k not in ("command", "func", "out", "csv") + _PATH_ARGS and not callable(v)},
        "version": __version__,
    }


def _emit(args, doc, inputs, table=None) -> None:
    from .io import write_csv, write_report

    doc = dict(doc, provenance=_provenance(args, inputs))
    if args.out:
        write_report(args.out, doc)
    if args.csv and table is not None:
        write_csv(args.csv, *table)


def _load(args):
    from .io import load_problem

    return load_problem(args.problem)


def _solution(problem, args):
    from .io import load_field
    from .least_gradient import solve_exact

    if getattr(args, "u_file", None):
        return load_field(args.u_file, problem)
    return solve_exact(problem, "minimal").u


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    from .errors import ValidationFailed
    from .io import load_space
    from .space import is_ergodic

    try:
        rws = load_space(args.space)
    except ValidationFailed as exc:
        print(f"FAIL {exc.certificate['name']}: {exc.certificate['message']}")
        _emit(args, {"certificates": [exc.certificate], "passed": False}, [args.space])
        return EXIT_FAILED
    ergodic, split = is_ergodic(rws)
    certs = [rws.invariance.to_dict(), rws.reversibility.to_dict(),
             {"name": "ergodicity", "passed": bool(ergodic),
              "details": {} if split is None else {"component": [rws.labels[i] for i in split[0]]}}]
    for c in certs:
        extra = f" residual={c['residual']!r}" if "residual" in c else ""
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}{extra}")
    passed = all(c["passed"] for c in certs)
    _emit(args, {"certificates": certs, "passed": passed}, [args.space],
          (["certificate", "passed", "residual"],
           [(c["name"], c["passed"], float(c.get("residual", 0.0))) for c in certs]))
    return EXIT_OK if passed else EXIT_FAILED


def cmd_solve(args) -> int:
    from .least_gradient import relaxed_energy, solve_exact

    problem, _ = _load(args)
    rep = solve_exact(problem, {"min": "minimal", "max": "maximal"}[args.tie_break])
    energy = relaxed_energy(problem, rep.u)
    print(f"energy {energy!r}")
    for lab, where, v in _u_rows(problem, rep.u):
        if where == "omega":
            print(f"  u({lab}) = {v!r}")
    _emit(args, {"u": _labels_table(problem, rep.u), "energy": energy, "method": rep.method,
                 "tie_break": rep.tie_break, "levels": rep.diagnostics},
          [args.problem], (["state", "role", "u"], _u_rows(problem, rep.u)))
    return EXIT_OK


def cmd_plap(args) -> int:
    from .least_gradient import relaxed_energy, solve_exact
    from .plaplace import continuation_to_one

    problem, _ = _load(args)
    schedule = None if args.schedule is None else [float(p) for p in args.schedule.split(",")]
    res = continuation_to_one(problem, schedule, tol=args.tol)
    J = relaxed_energy(problem, res.u)
    best = solve_exact(problem).energy
    print(f"J(u_p) {J!r}  exact optimum {best!r}  converged {res.converged}")
    _emit(args, {"u": _labels_table(problem, res.u), "energy": J, "exact_energy": best,
                 "p_trace": res.p_trace, "clip": res.clip, "converged": res.converged},
          [args.problem], (["state", "role", "u"], _u_rows(problem, res.u)))
    return EXIT_OK if res.converged else EXIT_FAILED


def cmd_calibrate(args) -> int:
    from .calibration import find_calibration, verify_calibration
    from .io import load_pair_field

    problem, _ = _load(args)
    u = _solution(problem, args)
    if args.g_file:
        cert = verify_calibration(problem, u, load_pair_field(args.g_file, problem.rws), args.tol)
    else:
        cert = find_calibration(problem, u, verify_tol=args.tol)
    labels = problem.rws.labels
    doc = cert.to_dict(labels)
    if cert.feasible:
        for k, v in cert.residuals.items():
            print(f"{'PASS' if cert.verdict[k] else 'FAIL'} {k} residual={v!r}")
        table = (["x", "y", "g"], [(labels[x], labels[y], float(v))
                                   for x, y, v in zip(cert.g.rows, cert.g.cols, cert.g.values)])
    else:
        print(f"FAIL infeasible deficit={cert.deficit!r}")
        table = None
    doc["u"] = _labels_table(problem, u)
    _emit(args, {"calibration": doc}, [args.problem, args.u_file, args.g_file], table)
    return EXIT_OK if cert.passed else EXIT_FAILED


def cmd_median(args) -> int:
    from .calibration import median_value_check

    problem, _ = _load(args)
    u = _solution(problem, args)
    rep = median_value_check(problem, u, args.tau)
    for s, p, m, z, ok in zip(rep.states, rep.plus, rep.minus, rep.zero, rep.verdict):
        print(f"{'PASS' if ok else 'FAIL'} {s}: plus={p!r} minus={m!r} zero={z!r}")
    doc = rep.to_dict()
    doc["u"] = _labels_table(problem, u)
    _emit(args, {"median": doc}, [args.problem, args.u_file],
          (["state", "plus", "minus", "zero", "ok"],
           list(zip(rep.states, rep.plus, rep.minus, rep.zero, rep.verdict.tolist()))))
    return EXIT_OK if rep.passed else EXIT_FAILED


def _poincare_doc(problem, q, shells):
    from .poincare import best_constant, layered_lower_bound

    up = best_constant(problem, q)
    low = layered_lower_bound(problem, q, shells)
    labels = problem.rws.labels
    return {
        "q": q,
        "lambda_upper": up.lambda_upper,
        "lambda_lower": low.lambda_lower,
        "witness_u": {str(labels[x]): float(v) for x, v in zip(problem.omega, up.witness_u)},
        "witness_psi": {str(labels[x]): float(v) for x, v in zip(problem.boundary, up.witness_psi)},
        "shells": low.shells.to_dict(labels),
        "notes": up.notes + low.notes,
        "sandwich": bool(low.lambda_lower <= up.lambda_upper + 1e-8),
    }


def cmd_poincare(args) -> int:
    problem, _ = _load(args)
    doc = _poincare_doc(problem, args.q, args.shells)
    print(f"lambda_upper {doc['lambda_upper']!r}")
    print(f"lambda_lower {doc['lambda_lower']!r}")
    _emit(args, {"poincare": doc}, [args.problem],
          (["shell", "alpha", "beta", "c"],
           [(j + 1, a, b, c) for j, (a, b, c) in enumerate(zip(doc["shells"]["alphas"], doc["shells"]["betas"],
                                                             doc["shells"]["coefficients"]))]))
    return EXIT_OK if doc["sandwich"] else EXIT_FAILED


def cmd_paper_examples(args) -> int:
    from .counterexamples import gen_markov_counterexample, gen_tworow_counterexample
    from .io import save_problem, save_space

    out = Path(args.outdir)
    doc = {"which": args.which, "N": args.n}
    if args.which == "markov":
        rws, problem, trunc = gen_markov_counterexample(args.n)
        doc["tail_policy"] = trunc.tail_policy
        doc["tail_bound"] = trunc.tail_bound
    else:
        rws, problem = gen_tworow_counterexample(args.n)
    space_path = out / f"{args.which}_space.json"
    problem_path = out / f"{args.which}_problem.json"
    save_space(rws, space_path)
    save_problem(problem, problem_path, space_ref=space_path.name)
    doc["invariance"] = rws.invariance.to_dict()
    doc["reversibility"] = rws.reversibility.to_dict()
    doc["ergodic"] = bool(rws.ergodic)
    doc["files"] = [space_path.name, problem_path.name]
    print(f"wrote {space_path} and {problem_path}")
    _emit(args, doc, [space_path, problem_path])
    passed = rws.reversibility.passed and bool(rws.ergodic)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_report(args) -> int:
    from .calibration import find_calibration, median_value_check
    from .least_gradient import relaxed_energy, solve_exact

    problem, _ = _load(args)
    rep = solve_exact(problem, "minimal")
    cert = find_calibration(problem, rep.u, verify_tol=1e-6)
    med = median_value_check(problem, rep.u)
    poin = _poincare_doc(problem, args.q, args.shells)
    labels = problem.rws.labels
    checks = {"calibration": bool(cert.passed), "median": med.passed, "poincare_sandwich": poin["sandwich"]}
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    _emit(args, {
        "u": _labels_table(problem, rep.u),
        "energy": relaxed_energy(problem, rep.u),
        "calibration": cert.to_dict(labels),
        "median": med.to_dict(),
        "poincare": poin,
        "checks": checks,
    }, [args.problem], (["state", "role", "u"], _u_rows(problem, rep.u)))
    return EXIT_OK if all(checks.values()) else EXIT_FAILED


# ---------------------------------------------------------------- parser

def _shells(text: str):
    if text == "hop":
        return "hop"
    if text.startswith("width="):
        try:
            w = float(text.split("=", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad width in {text!r}") from None
        if w <= 0:
            raise argparse.ArgumentTypeError("width must be positive")
        return text
    raise argparse.ArgumentTypeError("expected 'hop' or 'width=W'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrws", description="Least gradient problems on finite random walk spaces.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out", help="write a JSON report")
        p.add_argument("--csv", help="write a flat CSV table")
        return p

    p = command("validate", cmd_validate, "check invariance, reversibility and ergodicity of a space")
    p.add_argument("space")

    p = command("solve", cmd_solve, "exact least gradient solution by min cuts")
    p.add_argument("problem")
    p.add_argument("--tie-break", choices=("min", "max"), default="min")

    p = command("plap", cmd_plap, "p-Laplacian continuation towards p = 1")
    p.add_argument("problem")
    p.add_argument("--schedule", help="comma separated decreasing exponents")
    p.add_argument("--tol", type=float, default=1e-4)

    p = command("calibrate", cmd_calibrate, "find or verify a calibration field")
    p.add_argument("problem")
    p.add_argument("--u-file", help="JSON {'u': {state: value}} on the domain (default: exact solution)")
    p.add_argument("--g-file", help="JSON {'g': [[x, y, value], ...]} to verify instead of searching")
    p.add_argument("--tol", type=float, default=1e-6)

    p = command("median", cmd_median, "check the m-median value property")
    p.add_argument("problem")
    p.add_argument("--u-file")
    p.add_argument("--tau", type=float, default=1e-9)

    p = command("poincare", cmd_poincare, "two-sided Poincare constant estimates")
    p.add_argument("problem")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--shells", type=_shells, default="hop")

    p = command("paper-examples", cmd_paper_examples, "write truncated counterexample spaces")
    p.add_argument("outdir")
    p.add_argument("--which", choices=("markov", "tworow"), required=True)
    p.add_argument("--n", type=int, required=True)

    p = command("report", cmd_report, "solve, calibrate, check medians and Poincare bounds")
    p.add_argument("problem")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--shells", type=_shells, default="hop")
    return parser


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import (BoundaryMismatch, EmptyBoundary, MRWSError, ParseError,
                         SchemaVersionUnsupported, ValidationFailed)

    try:
        return args.func(args)
    except (ParseError, SchemaVersionUnsupported, BoundaryMismatch, EmptyBoundary) as exc:
        print(f"mrws: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationFailed as exc:
        print(f"mrws: validation failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except MRWSError as exc:
        print(f"mrws: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"mrws: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
