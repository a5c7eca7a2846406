import json
from pathlib import Path

import pytest

from gridstab import cli
from gridstab.cli import main
from gridstab.errors import NonConvergence
from gridstab.ingest import builtin_case_path
from gridstab.scenario import SCENARIO_DIR

DATA = Path(__file__).parent / "data"
CASE = str(builtin_case_path())
INVERTERS = str(SCENARIO_DIR / "inverters.json")


def test_validate_case85(capsys):
    assert main(["validate", CASE]) == 0
    assert "85 buses, 84 branches, radial: yes" in capsys.readouterr().out


def test_validate_failures(capsys):
    assert main(["validate", str(DATA / "malformed" / "loop.m")]) == 1
    assert "NonRadialCase" in capsys.readouterr().err
    assert main(["validate", str(DATA / "nope.m")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_usage_error_is_input_error():
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 1


def _analyze(capsys, *extra):
    assert main(["analyze", CASE, *extra]) == 0
    return json.loads(capsys.readouterr().out)


def test_analyze_table2(capsys):
    report = _analyze(capsys, "--inverters", INVERTERS)
    etas = {e["bus"]: e["eta"] for e in report["buses"]}
    assert min(etas, key=etas.get) == 30
    assert isinstance(report["verdict"], bool)


def test_analyze_without_inverters(capsys):
    assert _analyze(capsys)["verdict"] is True


def test_analyze_steep_curve(tmp_path, capsys):
    data = json.loads(Path(INVERTERS).read_text())
    data["inverters"] = [{"bus": 30, "s_rated": 0.01, "q_lim": 0.0001, "eps_p": 0.0001}]
    data["inverter_defaults"]["eps_p"] = 0.03
    path = tmp_path / "inv.json"
    path.write_text(json.dumps(data))
    report = _analyze(capsys, "--inverters", str(path), "--v-star", "flat")
    assert report["verdict"] is False and report["buses"][0]["margin"] < 0


def test_numerical_failure_exit_code(monkeypatch, capsys):
    def diverge(*args, **kwargs):
        raise NonConvergence("no fixed point")

    monkeypatch.setattr(cli, "find_fixed_point", diverge)
    assert main(["analyze", CASE, "--inverters", INVERTERS, "--v-star", "fixedpoint"]) == 2
    assert "NonConvergence" in capsys.readouterr().err


def test_analyze_fixedpoint(capsys):
    assert isinstance(_analyze(capsys, "--inverters", INVERTERS, "--v-star", "fixedpoint")["verdict"], bool)


def test_analyze_writes_file(tmp_path):
    out = tmp_path / "r" / "report.json"
    assert main(["analyze", CASE, "--inverters", INVERTERS, "--v-star", "loadflow", "--out", str(out)]) == 0
    assert "verdict" in json.loads(out.read_text())


def _simulate(tmp_path, *args):
    out = tmp_path / "out"
    code = main(["simulate", "--out", str(out), *args])
    return code, out


def test_simulate_case1_has_no_inverter_output(tmp_path):
    code, out = _simulate(tmp_path, "--config", "intermittency", "--case-mode", "1", "--horizon", "120")
    assert code == 0
    header = (out / "timeseries.csv").read_text().splitlines()[0]
    assert "p_inv" not in header and "q_inv" not in header
    assert (out / "envelope.csv").exists()


def test_simulate_intermittency_policy(tmp_path):
    code, out = _simulate(tmp_path, "--config", "intermittency", "--case-mode", "3")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert any(summary["firings"].values())
    assert all(v < 0.01 for v in summary["final_flicker"].values())


def test_simulate_attack_pair(tmp_path):
    code, out = _simulate(tmp_path, "--config", "attack", "--case-mode", "2", "--seed", "3")
    assert code == 0
    flags2 = json.loads((out / "summary.json").read_text())["sustained_oscillation"]
    code, out = _simulate(tmp_path, "--config", "attack", "--case-mode", "3", "--seed", "3")
    flags3 = json.loads((out / "summary.json").read_text())["sustained_oscillation"]
    assert any(flags2.values()) and not any(flags3.values())


def test_simulate_schema_violation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "epsilonp": 0.2}))
    code, _ = _simulate(tmp_path, "--config", str(bad))
    assert code == 1


def test_simulate_byte_identical(tmp_path):
    args = ("--config", "intermittency", "--seed", "4", "--horizon", "300")
    main(["simulate", "--out", str(tmp_path / "a"), *args])
    main(["simulate", "--out", str(tmp_path / "b"), *args])
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() == (tmp_path / "b" / "timeseries.csv").read_bytes()
