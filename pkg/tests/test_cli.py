import csv
import json
import subprocess
import sys

import pytest

from ccgeo import cli


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def test_distance_and_report(tmp_path):
    code, rep, out = _run(tmp_path, "distance", "--family", "euclid2in3", "--point=0,0,0", "--arg", "target=3,4,0")
    assert code == cli.EXIT_OK
    assert rep["verdict"] == "ok"
    assert rep["result"]["radius"] == pytest.approx(5.0, rel=0.02)
    assert rep["version"] == "0.1.0" and "integrator" in rep["constants"]


def test_maximal_tuple_off_singular_line(tmp_path):
    code, rep, _ = _run(tmp_path, "maximal-tuple", "--family", "grushin", "--point", "0.5,0")
    assert code == 0
    assert rep["result"]["maximal"]["tuple"] == [1, 2]


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["map-e"]) == cli.EXIT_ERROR  # --family missing
    assert cli.main(["map-e", "--family", "no-such-family"]) == cli.EXIT_ERROR
    assert cli.main(["map-e", "--family", "heisenberg", "--radius", "-1"]) == cli.EXIT_ERROR
    assert cli.main(["suite", "--only", "bogus"]) == cli.EXIT_ERROR
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"family": "heisenberg", "colour": "red"}))
    assert cli.main(["map-e", "--config", str(bad)]) == cli.EXIT_ERROR
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == cli.EXIT_ERROR


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"family": "heisenberg", "radius": 0.2, "options": {"h": [0.1, 0, 0]}}))
    code, rep, _ = _run(tmp_path, "map-e", "--config", str(cfg), "--radius", "0.1")
    assert code == 0
    assert rep["config"]["radius"] == 0.1
    assert rep["result"]["E"] == pytest.approx([0.01, 0.0, 0.0], abs=1e-9)


def test_falsified_exit(tmp_path):
    # paths far larger than the eps-box cannot lift inside it
    code, rep, out = _run(tmp_path, "lift", "--family", "heisenberg", "--samples", "5", "--arg", "radius_factor=5")
    assert code == cli.EXIT_FALSIFIED
    assert rep["verdict"] == "falsified"
    with open(out / "data.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["path", "digest"] and len(rows) == 6


def test_report_is_deterministic(tmp_path):
    argv = ["sample-ball", "--family", "heisenberg", "--samples", "20", "--seed", "3"]
    _, a, da = _run(tmp_path, *argv, name="a")
    _, b, db = _run(tmp_path, *argv, name="b")
    assert (da / "report.json").read_bytes() == (db / "report.json").read_bytes()
    assert (da / "data.csv").read_bytes() == (db / "data.csv").read_bytes()
    assert a["result"]["effective_rank"] == 3


def test_nonfinite_values_serialise():
    assert cli.jsonable({"x": float("inf"), "y": [float("nan")]}) == {"x": "inf", "y": ["nan"]}


def test_suite_subset(tmp_path):
    code, rep, _ = _run(tmp_path, "suite", "--only", "neumann", "--only", "orbit")
    assert code == 0
    assert [c["name"] for c in rep["criteria"]] == ["neumann", "orbit"]
    assert rep["failed"] == []


@pytest.mark.slow
def test_console_script_doubling(tmp_path):
    out = tmp_path / "d"
    proc = subprocess.run(
        [sys.executable, "-m", "ccgeo.cli", "doubling", "--family", "euclid2in3", "--samples", "200", "--out", str(out)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((out / "report.json").read_text())
    assert rep["result"]["estimate"] == pytest.approx(4.0, rel=0.1)
