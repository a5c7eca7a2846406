import json

import numpy as np
import pytest

from gridstab.errors import ScenarioError, UnknownParameter
from gridstab.scenario import SCENARIO_DIR, load_inverters, load_scenario, read_scenario_file


def _write(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def _minimal(**extra):
    data = {
        "version": 1,
        "horizon": 60.0,
        "inverter_defaults": {"V_p": 1.035, "V_q_plus": 1.035, "V_q_minus": 0.965},
        "inverters": [{"bus": 30, "s_rated": 0.1, "q_lim": 0.01}],
        "profiles": {"window": [43000, 43060], "load": {"synthetic": {}}, "generation": {"synthetic": {}}},
    }
    data.update(extra)
    return data


def test_packaged_scenarios_load():
    for name in ("intermittency", "attack", "attack_literal"):
        sc, sfile = load_scenario(name)
        assert sc.steps == 3600 and len(sc.inverters) == 5
        assert all(len(v) == 3600 for v in sc.gen_profiles.values())


def test_absolute_voltages_become_deviations(tmp_path):
    sc, _ = load_scenario(_write(tmp_path, _minimal()))
    cfg = sc.inverters[0]
    assert cfg.V_p == pytest.approx(0.035) and cfg.V_q_minus == pytest.approx(-0.035)


def test_attack_event_is_converted():
    sc, _ = load_scenario("attack")
    ev = sc.events[0]
    assert ev.bus == 30 and ev.disable_policy
    assert ev.overrides["V_p"] == pytest.approx(0.02)


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, _minimal(epsilonp=0.1)))
    bad = _minimal()
    bad["inverters"][0]["epsilonp"] = 0.1
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, bad))
    bad = _minimal(events=[{"time": 1, "bus": 30, "overrides": {"epsilonp": 0.1}}])
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, bad))


def test_version_is_required(tmp_path):
    data = _minimal()
    del data["version"]
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, data))
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, _minimal(version=2)))


def test_bad_json_and_invalid_droop(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError):
        read_scenario_file(path)
    bad = _minimal()
    bad["inverters"][0]["eps_p"] = 0.2  # V_p - eps_p/2 < 0
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, bad))


def test_event_on_non_inverter_bus(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, _minimal(events=[{"time": 1, "bus": 31}])))


def test_overrides(tmp_path):
    path = _write(tmp_path, _minimal())
    sc, sfile = load_scenario(path, overrides={"horizon": 30.0, "T_d": 5.0, "v_T": 0.02})
    assert sc.steps == 30 and sc.inverters[0].T_d == 5.0 and sc.inverters[0].v_T == 0.02
    assert sfile.v_T == 0.02
    with pytest.raises(UnknownParameter):
        load_scenario(path, overrides={"bogus": 1})


def test_window_shorter_than_horizon(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, _minimal(horizon=120.0)))


def test_seed_controls_delays_not_profiles():
    a, _ = load_scenario("attack", overrides={"seed": 1})
    b, _ = load_scenario("attack", overrides={"seed": 2})
    assert [c.T_d for c in a.inverters] != [c.T_d for c in b.inverters]
    assert all(np.array_equal(a.gen_profiles[k], b.gen_profiles[k]) for k in a.gen_profiles)
    c, _ = load_scenario("attack", overrides={"seed": 1})
    assert [x.T_d for x in a.inverters] == [x.T_d for x in c.inverters]


def test_csv_profiles(tmp_path):
    (tmp_path / "sun.csv").write_text("t,value\n0,0\n30,2\n60,1\n")
    data = _minimal(profiles={"generation": {"csv": {"30": "sun.csv"}}})
    sc, _ = load_scenario(_write(tmp_path, data))
    g = sc.gen_profiles[30]
    assert g.max() == pytest.approx(1.0, abs=1e-3) and g[0] == 0.0
    assert sc.load_profiles == {}


def test_inverter_file():
    cfgs, availability = load_inverters(SCENARIO_DIR / "inverters.json")
    assert [c.bus for c in cfgs] == [30, 27, 29, 39, 25] and availability == 1.0
