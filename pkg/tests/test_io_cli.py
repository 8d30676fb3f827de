import csv
import json
import os

import numpy as np
import pytest

import mrws.least_gradient as lg
import mrws.poincare as pc
from mrws.cli import main
from mrws.errors import ParseError, SchemaVersionUnsupported, ValidationFailed
from mrws.io import dumps, load_problem, load_space, save_space, space_from_dict
from mrws.least_gradient import relaxed_energy

P3_SPACE = {
    "format_version": 1,
    "states": [{"id": "a", "coords": [0.0]}, {"id": "b", "coords": [1.0]}, {"id": "c", "coords": [2.0]}],
    "walk": {"kind": "graph", "edges": [["a", "b", 1.0], ["b", "c", 1.0]]},
    "metric": "coords-euclidean",
}
BAD_SPACE = {
    "format_version": 1,
    "states": [{"id": "a", "nu": 1.0}, {"id": "b", "nu": 1.0}],
    "walk": {"kind": "rows", "rows": {"a": {"b": 0.9}, "b": {"a": 1.0}}},
}


def write(path, doc):
    path.write_text(dumps(doc))
    return path


@pytest.fixture
def p3_files(tmp_path):
    write(tmp_path / "space.json", P3_SPACE)
    prob = {"format_version": 1, "space": "space.json", "omega": ["b"], "psi": {"a": 0.0, "c": 1.0}}
    return write(tmp_path / "problem.json", prob)


def test_load_path_graph(tmp_path):
    rws = load_space(write(tmp_path / "s.json", P3_SPACE))
    assert rws.labels == ("a", "b", "c")
    assert rws.nu.tolist() == [1.0, 2.0, 1.0]
    assert rws.kernel.toarray().tolist() == [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]]
    assert rws.reversibility.passed and rws.invariance.passed


def test_row_sum_rejected(tmp_path):
    with pytest.raises(ValidationFailed) as info:
        load_space(write(tmp_path / "bad.json", BAD_SPACE))
    assert info.value.certificate["name"] == "NotStochastic"


def test_save_load_save_is_byte_stable(tmp_path):
    rws = load_space(write(tmp_path / "s.json", P3_SPACE))
    save_space(rws, tmp_path / "one.json")
    save_space(load_space(tmp_path / "one.json"), tmp_path / "two.json")
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()


def test_round_trip_preserves_floats(tmp_path):
    rng = np.random.default_rng(5)
    edges = [[i, j, float(rng.uniform(0.1, 3))] for i in range(6) for j in range(i + 1, 6) if rng.random() < 0.6]
    edges += [[i, i + 1, 1 / 3] for i in range(5)]
    doc = {"format_version": 1, "states": [{"id": i} for i in range(6)], "walk": {"kind": "graph", "edges": edges}}
    rws = space_from_dict(doc)
    save_space(rws, tmp_path / "r.json")
    back = load_space(tmp_path / "r.json")
    assert np.array_equal(back.nu, rws.nu)
    assert np.array_equal(back.kernel.toarray(), rws.kernel.toarray())


def test_parse_error_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "format_version": 1,\n  "states": [,]\n}\n')
    with pytest.raises(ParseError) as info:
        load_space(path)
    assert info.value.line == 3 and info.value.column is not None


def test_unsupported_version(tmp_path):
    with pytest.raises(SchemaVersionUnsupported):
        load_space(write(tmp_path / "v.json", dict(P3_SPACE, format_version=7)))


def test_problem_file(p3_files):
    pb, options = load_problem(p3_files)
    assert pb.psi.tolist() == [0.0, 1.0] and options == {}


def test_cli_solve(p3_files, tmp_path):
    out = tmp_path / "r.json"
    assert main(["solve", str(p3_files), "--tie-break", "min", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["u"]["b"] == 0.0 and doc["energy"] == 1.0
    assert main(["solve", str(p3_files), "--tie-break", "max", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["u"]["b"] == 1.0


def test_reported_energy_reevaluates(p3_files, tmp_path):
    out = tmp_path / "r.json"
    assert main(["plap", str(p3_files), "--schedule", "2,1.5,1.1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    pb, _ = load_problem(p3_files)
    assert abs(relaxed_energy(pb, [doc["u"]["b"]]) - doc["energy"]) <= 1e-10


def test_cli_poincare(p3_files, tmp_path, capsys):
    out = tmp_path / "p.json"
    assert main(["poincare", str(p3_files), "--q", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())["poincare"]
    assert doc["lambda_upper"] == pytest.approx(0.5, abs=1e-6)
    assert doc["lambda_lower"] == 0.25
    assert "lambda_upper" in capsys.readouterr().out


def test_cli_validate(tmp_path, capsys):
    good = write(tmp_path / "s.json", P3_SPACE)
    assert main(["validate", str(good)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == ["PASS", "PASS", "PASS"]
    bad = write(tmp_path / "bad.json", BAD_SPACE)
    out = tmp_path / "v.json"
    assert main(["validate", str(bad), "--out", str(out)]) == 2
    assert "NotStochastic" in capsys.readouterr().out
    assert json.loads(out.read_text())["certificates"][0]["name"] == "NotStochastic"


def test_cli_calibrate_and_median(p3_files, tmp_path):
    assert main(["calibrate", str(p3_files)]) == 0
    assert main(["median", str(p3_files)]) == 0
    wrong = write(tmp_path / "u.json", {"u": {"b": -1.0}})
    assert main(["median", str(p3_files), "--u-file", str(wrong)]) == 2
    assert main(["calibrate", str(p3_files), "--u-file", str(wrong)]) == 2
    g = write(tmp_path / "g.json", {"g": [["b", "c", 1.0], ["c", "b", -1.0], ["b", "a", -1.0], ["a", "b", 1.0]]})
    half = write(tmp_path / "h.json", {"u": {"b": 0.5}})
    assert main(["calibrate", str(p3_files), "--u-file", str(half), "--g-file", str(g)]) == 0


def test_cli_report_and_csv(p3_files, tmp_path):
    out, table = tmp_path / "r.json", tmp_path / "u.csv"
    assert main(["report", str(p3_files), "--out", str(out), "--csv", str(table)]) == 0
    assert all(json.loads(out.read_text())["checks"].values())
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["state", "role", "u"]
    assert ["b", "omega", "0.0"] in rows


def test_reports_are_deterministic(p3_files, tmp_path, monkeypatch):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["report", str(p3_files), "--out", str(a)]) == 0
    monkeypatch.chdir(tmp_path)
    assert main(["report", "problem.json", "--out", "b.json"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_exit_codes(p3_files, tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["solve"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert main(["solve", str(tmp_path / "missing.json")]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["solve", str(broken)]) == 1
    bad = {"format_version": 1, "space": "space.json", "omega": ["b"], "psi": {"a": 0.0}}
    assert main(["solve", str(write(tmp_path / "pb.json", bad))]) == 1


def test_paper_examples(tmp_path):
    out = tmp_path / "gen"
    rep = tmp_path / "m.json"
    assert main(["paper-examples", str(out), "--which", "markov", "--n", "6", "--out", str(rep)]) == 0
    rws = load_space(out / "markov_space.json")
    assert rws.reversibility.passed
    pb, _ = load_problem(out / "markov_problem.json")
    assert pb.boundary.tolist() == [0]
    assert main(["paper-examples", str(out), "--which", "tworow", "--n", "4"]) == 0
    pb, _ = load_problem(out / "tworow_problem.json")
    assert pb.omega.size == 13
    assert main(["validate", str(out / "tworow_space.json")]) == 0


def test_cli_is_thin_adapter(p3_files, tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    assert main(["solve", str(p3_files), "--out", str(out)]) == 0
    golden = json.loads(out.read_text())
    real = lg.solve_exact

    def stub(problem, tie_break="minimal", **kw):
        rep = real(problem, tie_break, **kw)
        rep.u = np.full_like(rep.u, 0.25)
        return rep

    monkeypatch.setattr(lg, "solve_exact", stub)
    assert main(["solve", str(p3_files), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["u"] != golden["u"]

    assert main(["poincare", str(p3_files), "--out", str(out)]) == 0
    before = json.loads(out.read_text())["poincare"]["lambda_upper"]
    fake = pc.best_constant(load_problem(p3_files)[0], 2.0)
    fake.lambda_upper = 123.0
    monkeypatch.setattr(pc, "best_constant", lambda *a, **k: fake)
    assert main(["poincare", str(p3_files), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["poincare"]["lambda_upper"] == 123.0 != before


def test_thread_cap(monkeypatch, p3_files):
    monkeypatch.setenv("MRWS_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    assert main(["solve", str(p3_files)]) == 0
    assert os.environ["OMP_NUM_THREADS"] == "1"
