import json
import subprocess
import sys

import pytest

from sitest.cli import EXIT_INPUT, EXIT_OK, EXIT_VIOLATION, main

CASES = ["departure", "departure_dog", "case_a", "case_b", "case_c", "case_d", "case_e", "ambiguous"]


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys, fixtures):
    code, out, _ = cli(capsys, "validate", fixtures / "parking.plan")
    assert code == EXIT_OK
    assert out.endswith("ok (13 activities, 6 plans)\n")


def test_validate_cycle(capsys, fixtures, monkeypatch):
    monkeypatch.setenv("SITEST_COLOR", "never")
    code, out, err = cli(capsys, "validate", fixtures / "cycle.plan")
    assert code == EXIT_VIOLATION
    assert "error: refines cycle" in err and out == ""


def test_color_always(capsys, fixtures, monkeypatch):
    monkeypatch.setenv("SITEST_COLOR", "always")
    _, _, err = cli(capsys, "validate", fixtures / "cycle.plan")
    assert "\x1b[1;31merror:\x1b[0m" in err


def test_missing_file(capsys, tmp_path):
    code, _, err = cli(capsys, "validate", tmp_path / "none.plan")
    assert code == EXIT_INPUT
    assert "cannot read" in err


def test_usage_errors(capsys):
    assert cli(capsys, "frobnicate")[0] == EXIT_INPUT
    assert cli(capsys, "run", "only-one-arg")[0] == EXIT_INPUT
    assert cli(capsys, "run", "a", "b", "--stale-after", "-3")[0] == EXIT_INPUT
    assert cli(capsys, "--help")[0] == EXIT_OK


@pytest.mark.parametrize("name", CASES)
def test_run_matches_golden(capsys, fixtures, tmp_path, name):
    trace = tmp_path / "trace.jsonl"
    code, out, _ = cli(
        capsys, "run", fixtures / "parking.plan", fixtures / f"{name}.obs", "--report", "structured", "--trace", trace
    )
    assert code == EXIT_OK
    golden = fixtures / "golden"
    assert out == (golden / f"{name}.report.jsonl").read_text()
    assert trace.read_text() == (golden / f"{name}.trace.jsonl").read_text()


def test_structured_report_summary(capsys, fixtures):
    _, out, _ = cli(capsys, "run", fixtures / "parking.plan", fixtures / "departure.obs", "--report", "structured")
    summary = json.loads(out.splitlines()[-1])["summary"]
    assert summary == {
        "steps": 8,
        "recognized": [{"id": "i1", "plan": "vehicle-departure", "marking": ["p4"], "terminal": True}],
        "unexplained_objects": 0,
    }


def test_text_report(capsys, fixtures):
    code, out, _ = cli(capsys, "run", fixtures / "parking.plan", fixtures / "departure.obs")
    assert code == EXIT_OK
    assert out.splitlines()[-1] == "recognized i1 vehicle-departure [p4] (terminal)"


def test_run_bad_scenario(capsys, fixtures, tmp_path):
    bad = tmp_path / "bad.obs"
    bad.write_text("t=1 obs (type P1)\n")
    code, _, err = cli(capsys, "run", fixtures / "parking.plan", bad)
    assert code == EXIT_INPUT
    assert "bad.obs:1:9: error: type expects 2 argument(s), got 1" in err


def test_run_bad_library(capsys, fixtures):
    assert cli(capsys, "run", fixtures / "cycle.plan", fixtures / "case_a.obs")[0] == EXIT_INPUT


def test_run_unexplained_object(capsys, tmp_path):
    lib = tmp_path / "tiny.plan"
    lib.write_text(
        "predicate type/2;\n"
        "activity walking { kernel: (type ?x pedestrian); }\n"
        "plan walk { places: walking; initial: [walking]; }\n"
    )
    obs = tmp_path / "dog.obs"
    obs.write_text("t=1 obs (type D1 dog)\n")
    code, out, _ = cli(capsys, "run", lib, obs)
    assert code == EXIT_VIOLATION
    assert "unexplained object D1" in out


def test_run_empty_scenario(capsys, fixtures, tmp_path):
    empty = tmp_path / "empty.obs"
    empty.write_text("")
    code, out, _ = cli(capsys, "run", fixtures / "parking.plan", empty)
    assert code == EXIT_OK
    assert out == "0 step(s); unexplained objects: 0\n"


def test_simulate_is_byte_stable(capsys, fixtures):
    _, first, _ = cli(capsys, "simulate", fixtures / "departure.sim")
    _, second, _ = cli(capsys, "simulate", fixtures / "departure.sim")
    assert first == second == (fixtures / "departure.obs").read_text()


def test_simulate_to_file(capsys, fixtures, tmp_path):
    out = tmp_path / "o.obs"
    code, stdout, _ = cli(capsys, "simulate", fixtures / "departure_dog.sim", "--out", out)
    assert code == EXIT_OK and stdout == ""
    assert out.read_bytes() == (fixtures / "departure_dog.obs").read_bytes()


def test_simulate_seeds(capsys, fixtures):
    script = fixtures / "departure_drop.sim"
    a = cli(capsys, "simulate", script, "--seed", "1")[1]
    assert cli(capsys, "simulate", script, "--seed", "1")[1] == a
    assert cli(capsys, "simulate", script, "--seed", "2")[1] != a


def test_simulate_bad_script(capsys, tmp_path):
    script = tmp_path / "bad.sim"
    script.write_text("horizon 3 to;\n")
    assert cli(capsys, "simulate", script)[0] == EXIT_INPUT


def test_module_entry_point(fixtures):
    proc = subprocess.run(
        [sys.executable, "-m", "sitest", "validate", str(fixtures / "parking.plan")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
