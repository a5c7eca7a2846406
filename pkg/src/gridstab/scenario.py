"""Versioned JSON scenario files.

Voltage breakpoints (``V_p``, ``V_q_plus``, ``V_q_minus``) are written as
absolute per-unit settings, including inside event overrides; they are
converted to deviations from ``v_nom`` when the scenario is built.  Unknown
keys anywhere in the file are rejected.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ScenarioError, UnknownParameter
from .ingest import (
    Profile,
    ProfileSet,
    builtin_case_path,
    load_case,
    normalize_profiles,
    read_profile_csv,
    slice_window,
    spline_resample,
    synthetic_load_knots,
    synthetic_solar_knots,
)
from .inverter import VOLTAGE_SETTINGS, InverterConfig
from .netmodel import NetworkModel
from .simulator import OVERRIDABLE, Scenario, ScenarioEvent, sample_delays

SCHEMA_VERSION = 1
SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DroopSettings(_Strict):
    V_p: Optional[float] = None
    eps_p: Optional[float] = None
    V_q_plus: Optional[float] = None
    V_q_minus: Optional[float] = None
    eps_q_plus: Optional[float] = None
    eps_q_minus: Optional[float] = None
    T_p: Optional[float] = None
    T_q: Optional[float] = None
    v_nom: Optional[float] = None
    min_power_factor: Optional[float] = None
    mu: Optional[float] = None

    def given(self) -> dict:
        droop = DroopSettings.model_fields
        return {k: v for k, v in self.model_dump().items() if v is not None and k in droop}


class InverterSpec(DroopSettings):
    bus: int
    s_rated: float = Field(gt=0)
    q_lim: float = Field(gt=0)
    T_d: Optional[float] = None


class NormalDelays(_Strict):
    mean: float = 5.0
    std: float = 10.0
    min: float = 1.0
    max: float = 60.0


class PolicyPeriod(_Strict):
    normal: NormalDelays


class SyntheticLoad(_Strict):
    noise: float = Field(0.1, ge=0)
    common_noise: float = Field(0.0, ge=0)


class SyntheticSolar(_Strict):
    clouds: list[tuple[float, float, float]] = []
    variability: float = Field(0.0, ge=0)


class LoadProfiles(_Strict):
    synthetic: Optional[SyntheticLoad] = None
    csv: dict[str, str] = {}


class GenerationProfiles(_Strict):
    synthetic: Optional[SyntheticSolar] = None
    csv: dict[str, str] = {}


class Profiles(_Strict):
    # synthetic profiles are data, so they get their own seed; the scenario
    # seed then only drives run-time randomness such as policy periods
    seed: Optional[int] = None
    window: Optional[tuple[float, float]] = None
    load: LoadProfiles = LoadProfiles()
    generation: GenerationProfiles = GenerationProfiles()


class EventSpec(_Strict):
    time: float = Field(ge=0)
    bus: int
    overrides: dict[str, float] = {}
    disable_policy: bool = False

    @field_validator("overrides")
    @classmethod
    def _known(cls, value):
        unknown = set(value) - set(OVERRIDABLE)
        if unknown:
            raise ValueError(f"unknown override parameter(s) {sorted(unknown)}")
        return value


class ScenarioFile(_Strict):
    version: Literal[1]
    name: str = "scenario"
    description: str = ""
    case: str = "case85"
    v0: Optional[float] = Field(None, gt=0)
    dt: float = Field(1.0, gt=0)
    horizon: float = Field(3600.0, gt=0)
    seed: int = 0
    v_T: float = Field(0.01, gt=0)
    eps: float = Field(1e-6, gt=0)
    envelope_window: float = Field(50.0, gt=0)
    policy_period: Union[float, PolicyPeriod, None] = None
    inverter_defaults: DroopSettings = DroopSettings()
    inverters: list[InverterSpec] = []
    profiles: Profiles = Profiles()
    events: list[EventSpec] = []


class InverterFile(_Strict):
    """Stand-alone inverter list used by static stability analysis."""

    version: Literal[1]
    inverter_defaults: DroopSettings = DroopSettings()
    inverters: list[InverterSpec] = []
    availability: float = Field(1.0, ge=0)


def _validated(model, path: Path):
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def inverter_configs(defaults: DroopSettings, specs, periods=None, v_T: float = 0.01) -> list[InverterConfig]:
    periods = periods if periods is not None else [None] * len(specs)
    base = defaults.given()
    configs = []
    for inv, period in zip(specs, periods):
        settings = {**base, **inv.given()}
        settings = _to_deviation(settings, settings.get("v_nom", 1.0))
        t_d = inv.T_d if inv.T_d is not None else period
        cfg = InverterConfig(bus=inv.bus, s_rated=inv.s_rated, q_lim=inv.q_lim, T_d=t_d, v_T=v_T, **settings)
        try:
            configs.append(cfg.validate())
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
    return configs


def load_inverters(path: str | Path) -> tuple[list[InverterConfig], float]:
    """Read an inverter file; returns the configs and the availability to analyze at."""
    sfile = _validated(InverterFile, Path(path))
    return inverter_configs(sfile.inverter_defaults, sfile.inverters), sfile.availability


def read_scenario_file(path: str | Path) -> tuple[ScenarioFile, Path]:
    path = Path(path)
    if not path.exists() and (SCENARIO_DIR / f"{path}.json").exists():
        path = SCENARIO_DIR / f"{path}.json"
    return _validated(ScenarioFile, path), path.parent


def _to_deviation(settings: dict, v_nom: float) -> dict:
    return {k: (v - v_nom if k in VOLTAGE_SETTINGS else v) for k, v in settings.items()}


def _resolve_case(sfile: ScenarioFile, base: Path) -> NetworkModel:
    candidate = base / sfile.case
    if candidate.exists():
        return load_case(candidate)
    path = builtin_case_path(sfile.case)
    if not path.exists():
        raise ScenarioError(f"case {sfile.case!r} is neither a file nor a packaged case")
    return load_case(path)


def _knots(sfile: ScenarioFile, network: NetworkModel, buses: list[int], base: Path) -> ProfileSet:
    seed = sfile.profiles.seed if sfile.profiles.seed is not None else sfile.seed
    loads: dict[int, Profile] = {}
    gens: dict[int, Profile] = {}
    lp, gp = sfile.profiles.load, sfile.profiles.generation
    if lp.synthetic is not None:
        for b in network.bus_ids[1:]:
            loads[b] = synthetic_load_knots([seed, 0, b], noise=lp.synthetic.noise)
        if lp.synthetic.common_noise > 0 and loads:
            # feeder-wide fluctuation shared by every load
            n = next(iter(loads.values())).t.size
            common = 1.0 + lp.synthetic.common_noise * np.random.default_rng([seed, 2]).standard_normal(n)
            loads = {b: Profile(p.t, np.clip(p.values * common, 0.0, None)) for b, p in loads.items()}
    for key, file in lp.csv.items():
        prof = read_profile_csv(base / file)
        targets = network.bus_ids[1:] if key == "all" else [int(key)]
        for b in targets:
            loads[b] = prof
    if gp.synthetic is not None:
        for b in buses:
            gens[b] = synthetic_solar_knots(
                [seed, 1, b], clouds=[tuple(c) for c in gp.synthetic.clouds], variability=gp.synthetic.variability
            )
    for key, file in gp.csv.items():
        prof = read_profile_csv(base / file)
        for b in buses if key == "all" else [int(key)]:
            gens[b] = prof
    return ProfileSet(loads, gens, sfile.dt)


def apply_overrides(sfile: ScenarioFile, overrides: dict | None) -> ScenarioFile:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    bad = set(overrides) - {"case", "dt", "horizon", "seed", "v_T", "eps", "T_d", "envelope_window"}
    if bad:
        raise UnknownParameter(f"cannot override {sorted(bad)}")
    if "T_d" in overrides:
        overrides["policy_period"] = overrides.pop("T_d")
    return sfile.model_copy(update=overrides)


def build_scenario(
    sfile: ScenarioFile,
    base: Path = Path("."),
    case_mode: int = 3,
    overrides: dict | None = None,
) -> Scenario:
    """Turn a parsed scenario file into a runnable :class:`Scenario`.

    ``overrides`` may replace ``case``, ``dt``, ``horizon``, ``seed``,
    ``v_T``, ``eps``, ``envelope_window`` and ``T_d`` (a uniform policy
    period).
    """
    sfile = apply_overrides(sfile, overrides)
    network = _resolve_case(sfile, base)
    if sfile.v0 is not None:
        network = replace(network, v0=sfile.v0)

    inv_specs = sfile.inverters
    if isinstance(sfile.policy_period, PolicyPeriod):
        nd = sfile.policy_period.normal
        periods = sample_delays(np.random.default_rng([sfile.seed, 3]), len(inv_specs), nd.mean, nd.std, nd.min, nd.max, sfile.dt)
    else:
        periods = [sfile.policy_period] * len(inv_specs)

    configs = inverter_configs(sfile.inverter_defaults, inv_specs, periods, sfile.v_T)

    events = []
    by_bus = {c.bus: c for c in configs}
    for ev in sfile.events:
        v_nom = by_bus[ev.bus].v_nom if ev.bus in by_bus else 1.0
        events.append(ScenarioEvent(ev.time, ev.bus, _to_deviation(dict(ev.overrides), v_nom), ev.disable_policy))

    steps = int(round(sfile.horizon / sfile.dt))
    knots = _knots(sfile, network, [c.bus for c in configs], base)
    resampled = ProfileSet(
        {b: spline_resample(p, sfile.dt) for b, p in knots.loads.items()},
        {b: spline_resample(p, sfile.dt) for b, p in knots.generation.items()},
        sfile.dt,
    )
    start, end = sfile.profiles.window or (0.0, sfile.horizon)
    if end - start < sfile.horizon - 1e-9:
        raise ScenarioError(f"profile window [{start}, {end}] is shorter than the horizon {sfile.horizon}")
    window = slice_window(normalize_profiles(resampled), start, start + sfile.horizon - sfile.dt)

    scenario = Scenario(
        network=network,
        inverters=tuple(configs),
        load_profiles={b: p.values[:steps] for b, p in window.loads.items()},
        gen_profiles={b: p.values[:steps] for b, p in window.generation.items()},
        horizon=sfile.horizon,
        dt=sfile.dt,
        events=tuple(events),
        seed=sfile.seed,
        case_mode=case_mode,
        eps=sfile.eps,
        name=sfile.name,
    )
    try:
        return scenario.validate()
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def load_scenario(path: str | Path, case_mode: int = 3, overrides: dict | None = None) -> tuple[Scenario, ScenarioFile]:
    """Read, override and build; returns the scenario and the effective file contents."""
    sfile, base = read_scenario_file(path)
    sfile = apply_overrides(sfile, overrides)
    return build_scenario(sfile, base, case_mode), sfile
