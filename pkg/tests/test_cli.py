import glob
import json
import os

import pytest
import yaml

from fracobstacle.cli import (EXIT_DEGENERATE, EXIT_FAIL, EXIT_NO_GOLDEN, EXIT_PASS, EXIT_SCHEMA,
                              EXIT_SOLVER, compare_golden, main)
from fracobstacle.errors import ConfigurationError
from fracobstacle.manifest import load_manifest, validate

IDENTITIES = {
    "scenario": "verify-identities",
    "seed": 0,
    "output_dir": "out",
    "problem": {"n": 1, "s": 0.5, "k": 2, "grid": {"h": 1 / 128, "R": 1.0}},
    "fixture": {"kind": "reference", "lam": 2},
    "analysis": {"radii": [0.125, 0.25]},
    "checks": [
        {"metric": "identities.max_Hprime_residual", "op": "<=", "value": 0.01},
        {"metric": "identities.max_D_residual", "op": "<=", "value": 0.01},
        {"metric": "identities.L2_vs_H_all", "op": "==", "value": 1},
    ],
}


def write_manifest(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return str(path)


def with_changes(doc, **changes):
    out = json.loads(json.dumps(doc))
    out.update(changes)
    return out


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FRACOBSTACLE_OUTPUT_DIR", raising=False)
    return tmp_path


def test_identities_fixture_run(workdir, capsys):
    code = main(["run", write_manifest(workdir / "m.yaml", IDENTITIES)])
    assert code == EXIT_PASS
    report = json.loads((workdir / "out" / "report.json").read_text())
    assert report["exit_code"] == 0
    assert len(report["checks"]) == len(IDENTITIES["checks"])
    assert [c["metric"] for c in report["checks"]] == [c["metric"] for c in IDENTITIES["checks"]]
    header = (workdir / "out" / "identities.csv").read_text().splitlines()[0].split(",")
    assert {"H", "D", "G", "E", "D_residual"} <= set(header)
    assert capsys.readouterr().out.count("PASS") == 3


def test_failed_check_exits_one(workdir):
    doc = with_changes(IDENTITIES, checks=[{"metric": "identities.max_D_residual", "op": "<=",
                                            "value": 1e-12}])
    assert main(["run", write_manifest(workdir / "m.yaml", doc)]) == EXIT_FAIL


def test_unknown_metric_fails_its_check(workdir):
    doc = with_changes(IDENTITIES, checks=[{"metric": "identities.nope", "op": "<=", "value": 1}])
    assert main(["run", write_manifest(workdir / "m.yaml", doc)]) == EXIT_FAIL


@pytest.mark.parametrize("change", [
    {"scenario": "everything"},
    {"problem": {"n": 3, "s": 0.5, "grid": {"h": 0.1}}},
    {"problem": {"n": 1, "s": 1.2, "grid": {"h": 0.1}}},
    {"problem": {"n": 1, "s": 0.5, "grid": {"h": 0.1}, "colour": "red"}},
    {"analysis": {"theta": 1.5}},
    {"checks": [{"metric": "x", "op": "~", "value": 1}]},
])
def test_malformed_manifest_exits_two_without_outputs(workdir, change):
    code = main(["run", write_manifest(workdir / "m.yaml", with_changes(IDENTITIES, **change))])
    assert code == EXIT_SCHEMA
    assert not (workdir / "out").exists()


def test_unreadable_manifest(workdir):
    (workdir / "m.yaml").write_text("scenario: [unclosed", encoding="utf-8")
    assert main(["run", str(workdir / "m.yaml")]) == EXIT_SCHEMA
    assert main(["run", str(workdir / "missing.yaml")]) == EXIT_SCHEMA


def test_duplicate_checks_rejected():
    doc = with_changes(IDENTITIES, checks=IDENTITIES["checks"][:1] * 2)
    with pytest.raises(ConfigurationError):
        validate(doc)


def test_shipped_manifests_validate():
    root = os.path.join(os.path.dirname(__file__), "..", "manifests")
    paths = sorted(glob.glob(os.path.join(root, "*.yaml")))
    assert paths
    for path in paths:
        assert load_manifest(path).checks


def test_manifest_hash_recorded(workdir):
    man = load_manifest(write_manifest(workdir / "m.yaml", IDENTITIES))
    assert len(man.sha256) == 64
    assert man.scenario == "verify-identities"


def test_solver_limit_exits_three(workdir):
    doc = {"scenario": "solve", "output_dir": "out",
           "problem": {"n": 1, "s": 0.5, "grid": {"h": 1 / 64},
                       "obstacle": {"kind": "cap", "radius": 0.5, "height": 1.0},
                       "solver": {"max_sweeps": 2, "cascade": 0}}}
    assert main(["run", write_manifest(workdir / "m.yaml", doc)]) == EXIT_SOLVER


def test_no_contact_exits_four(workdir):
    doc = {"scenario": "verify-identities", "output_dir": "out",
           "problem": {"n": 1, "s": 0.5, "grid": {"h": 1 / 64},
                       "obstacle": {"kind": "constant", "value": -1.0}},
           "analysis": {"min_cells": 4}}
    assert main(["run", write_manifest(workdir / "m.yaml", doc)]) == EXIT_DEGENERATE
    report = json.loads((workdir / "out" / "report.json").read_text())
    assert report["error"]


def test_output_dir_override(workdir, monkeypatch):
    monkeypatch.setenv("FRACOBSTACLE_OUTPUT_DIR", str(workdir / "elsewhere"))
    assert main(["run", write_manifest(workdir / "m.yaml", IDENTITIES)]) == EXIT_PASS
    assert (workdir / "elsewhere" / "identities.csv").exists()
    assert not (workdir / "out").exists()


def test_runs_are_deterministic(workdir, monkeypatch):
    path = write_manifest(workdir / "m.yaml", IDENTITIES)
    for name in ("a", "b"):
        monkeypatch.setenv("FRACOBSTACLE_OUTPUT_DIR", str(workdir / name))
        assert main(["run", path]) == EXIT_PASS
    a = (workdir / "a" / "identities.csv").read_bytes()
    assert a == (workdir / "b" / "identities.csv").read_bytes()
    assert main(["compare", str(workdir / "a"), str(workdir / "b")]) == EXIT_PASS


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_PASS
    out = capsys.readouterr().out
    for name in ("solve", "verify-identities", "tube-content", "full"):
        assert name in out


# golden comparison


def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in row) for row in rows) + "\n", encoding="utf-8")
    return str(path)


def test_compare_identical(tmp_path):
    rows = [["r", "H"], [0.1, 1.5], [0.2, 2.5]]
    a, b = write_csv(tmp_path / "a.csv", rows), write_csv(tmp_path / "b.csv", rows)
    assert compare_golden(a, b) == (True, "identical within tolerance")
    assert main(["compare", a, b]) == EXIT_PASS


def test_compare_drift_reports_first_row(tmp_path, capsys):
    a = write_csv(tmp_path / "a.csv", [["r", "H"], [0.1, 1.5], [0.2, 2.6], [0.3, 9.0]])
    b = write_csv(tmp_path / "b.csv", [["r", "H"], [0.1, 1.5], [0.2, 2.5], [0.3, 3.0]])
    ok, msg = compare_golden(a, b)
    assert not ok and msg.startswith("row 2, column H")
    assert main(["compare", a, b]) == EXIT_FAIL
    assert "row 2" in capsys.readouterr().out
    assert main(["compare", a, b, "--column-tol", "H=10"]) == EXIT_PASS


def test_compare_extra_column_fails(tmp_path):
    a = write_csv(tmp_path / "a.csv", [["r", "H", "G"], [0.1, 1.5, 0.0]])
    b = write_csv(tmp_path / "b.csv", [["r", "H"], [0.1, 1.5]])
    ok, msg = compare_golden(a, b)
    assert not ok and "extra ['G']" in msg


def test_compare_json_ignores_timings(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps({"summary": {"x": 1.0}, "timings": {"total": 1.0}}))
    b.write_text(json.dumps({"summary": {"x": 1.0}, "timings": {"total": 7.0}}))
    assert compare_golden(str(a), str(b))[0]
    b.write_text(json.dumps({"summary": {"x": 2.0}, "timings": {}}))
    assert not compare_golden(str(a), str(b))[0]


def test_compare_missing_golden(tmp_path):
    a = write_csv(tmp_path / "a.csv", [["r"], [1]])
    assert main(["compare", a, str(tmp_path / "nope.csv")]) == EXIT_NO_GOLDEN
    assert EXIT_NO_GOLDEN not in (EXIT_PASS, EXIT_FAIL, EXIT_SCHEMA, EXIT_SOLVER, EXIT_DEGENERATE)
    assert os.path.exists(a)
