import json
import subprocess
import sys

import pytest

from hodgelab.cli import main


def run(*args):
    return main([str(a) for a in args])


def test_mesh_gen_and_validate(tmp_path):
    off = tmp_path / "s2.off"
    assert run("mesh", "gen", "--model", "icosphere", "--level", 2, "--out", off) == 0
    assert off.read_text().splitlines()[1].split()[0] == "162"
    assert run("mesh", "validate", off) == 0
    torus = tmp_path / "t.off"
    assert run("mesh", "gen", "--model", "torus", "--n", 6, "--m", 6, "--out", torus) == 0
    assert run("mesh", "validate", torus) == 0


def test_mesh_validate_findings(tmp_path):
    bad = tmp_path / "open.off"
    bad.write_text("OFF\n3 1 3\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert run("mesh", "validate", bad) == 2
    assert run("mesh", "gen", "--model", "torus", "--n", 3, "--m", 12, "--out", tmp_path / "e.off") == 0
    assert run("mesh", "validate", tmp_path / "e.off") == 2


@pytest.mark.parametrize("argv", [
    ["mesh", "gen", "--model", "icosphere", "--level", "2"],
    ["verify", "--model", "icosphere", "--level", "2", "--suite", "bogus"],
    ["verify", "--suite", "identities"],
    ["verify", "--model", "icosphere", "--level", "2", "--t-grid", "a,b"],
    ["study", "--check", "hsu", "--levels", "2..3"],
    ["study", "--check", "nope", "--levels", "1..3"],
    ["frobnicate"],
])
def test_usage_errors_exit_64(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        code = main(argv)
        raise SystemExit(code)
    assert exc.value.code == 64


def test_spectrum_outputs(tmp_path, capsys):
    prefix = tmp_path / "sp"
    assert run("spectrum", "--model", "icosphere", "--level", 3, "--degree", 0, "--count", 10,
               "--out", prefix) == 0
    rows = (tmp_path / "sp.csv").read_text().splitlines()
    assert rows[0] == "index,eigenvalue"
    assert abs(float(rows[1].split(",")[1])) <= 1e-10
    doc = json.loads((tmp_path / "sp.json").read_text())
    assert doc["count"] == 10 and not doc["complete"] or doc["count"] == 10

    assert run("spectrum", "--model", "torus", "--n", 8, "--m", 8, "--degree", 1, "--count", 10**6,
               "--out", prefix) == 0
    assert "clamped" in capsys.readouterr().err
    vals = [float(r.split(",")[1]) for r in (tmp_path / "sp.csv").read_text().splitlines()[1:]]
    assert abs(vals[0]) < 1e-10 and abs(vals[1]) < 1e-10 and vals[2] > 1.0


def test_spectrum_failure_exit_1(tmp_path):
    # elongated torus has zero or negative cotangent weights: no positive mass matrix
    off = tmp_path / "e.off"
    assert run("mesh", "gen", "--model", "torus", "--n", 3, "--m", 12, "--out", off) == 0
    assert run("spectrum", "--mesh", off, "--degree", 1, "--out", tmp_path / "x") == 1


def test_verify_identities_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["verify", "--model", "torus", "--n", 16, "--m", 16, "--suite", "kernel",
              "--t-grid", "0.1,0.5,1", "--seed", 7]
    assert run(*common, "--out", a) == 0
    assert run(*common, "--out", b) == 0
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert json.dumps(ra["records"]) == json.dumps(rb["records"])
    names = {r["name"] for r in ra["records"]}
    assert {"kernel_invariants", "chapman_kolmogorov"} <= names
    assert all(r["verdict"] != "fail" for r in ra["records"])
    lines = (a / "records.jsonl").read_text().splitlines()
    assert len(lines) >= len(ra["records"])
    assert (a / "summary.csv").read_text().startswith("name,params")
    assert ra["config"]["settings"].count("seed = 7") == 1


def test_verify_refuses_indefinite_mesh(tmp_path):
    off = tmp_path / "e.off"
    assert run("mesh", "gen", "--model", "torus", "--n", 3, "--m", 12, "--out", off) == 0
    assert run("verify", "--mesh", off, "--suite", "identities", "--out", tmp_path / "r") == 1


def test_verify_exit_3_on_failure(tmp_path):
    cfg = tmp_path / "strict.cfg"
    # an impossible tolerance constant makes the inequality suite fail honestly
    cfg.write_text("tol.bakry_ledoux = 1e-12\nn_random = 4\nn_eigenforms = 6\nn_eigenfunctions = 6\n")
    code = run("verify", "--model", "icosphere", "--level", 2, "--suite", "inequalities",
               "--t-grid", "0.3", "--config", cfg, "--out", tmp_path / "r")
    assert code == 3


def test_study_outputs(tmp_path):
    out = tmp_path / "st"
    assert run("study", "--check", "hsu,commutation", "--levels", "1..3", "--t-grid", "0.3",
               "--out", out) == 0
    rows = [l for l in (out / "hsu.dat").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 3 and all(len(r.split()) == 2 for r in rows)
    summary = json.loads((out / "study_summary.json").read_text())
    assert {s["check"] for s in summary["studies"]} == {"hsu", "commutation"}
    comm = next(s for s in summary["studies"] if s["check"] == "commutation")
    assert max(comm["violations"]) <= 1e-9


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hodgelab.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "hodgelab" in proc.stdout
