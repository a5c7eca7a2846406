"""Quasi-static closed-loop simulation of droop-controlled inverters.

Each step solves the linear flow with the current injections, lets every
inverter measure its own bus voltage, optionally re-tunes it (local policy),
and moves the injections toward the droop targets through a first-order
low-pass filter::

    s <- s + alpha * (target(v) - s),     alpha = 1 - exp(-dt / T)

Per-step order: scenario events, measurement, policy evaluation, record,
actuation.  A record therefore pairs voltages with the injections that
produced them.
"""

from __future__ import annotations

import io
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CannotStabilize, NonConvergence, NotAnInverterBus, UnknownParameter
from .inverter import InverterConfig, OperatingPoint, power_factor_cap, volt_var, volt_watt
from .netmodel import NetworkModel, SensitivityMatrices, build_sensitivity
from .powerflow import InjectionVector, solve_linear
from .stability import (
    DEFAULT_MARGIN,
    PolicyAdjustment,
    eta_local,
    estimate_v_star,
    flicker,
    partial_flicker,
    stabilize,
)

log = logging.getLogger(__name__)

DEFAULT_ENVELOPE_WINDOW = 50.0
OSCILLATION_WINDOW = 100.0

# parameters an event may override (everything that shapes the droop response)
OVERRIDABLE = (
    "V_p", "eps_p", "V_q_plus", "V_q_minus", "eps_q_plus", "eps_q_minus",
    "q_lim", "s_rated", "T_p", "T_q", "T_d", "v_T", "min_power_factor", "mu",
)


@dataclass(frozen=True)
class ScenarioEvent:
    """Parameter overrides (deviation-domain voltages) applied at ``time``."""

    time: float
    bus: int
    overrides: dict = field(default_factory=dict)
    disable_policy: bool = False


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs.

    ``load_profiles`` maps bus id -> multiplier per step (length ``steps``);
    buses without an entry keep their case load.  ``gen_profiles`` maps
    inverter bus -> availability multiplier of ``s_rated``.
    """

    network: NetworkModel
    inverters: tuple[InverterConfig, ...]
    load_profiles: dict
    gen_profiles: dict
    horizon: float
    dt: float = 1.0
    events: tuple[ScenarioEvent, ...] = ()
    seed: int = 0
    case_mode: int = 3
    eps: float = DEFAULT_MARGIN
    name: str = "scenario"

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def validate(self) -> "Scenario":
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.case_mode not in (1, 2, 3):
            raise ValueError("case_mode must be 1, 2 or 3")
        ids = set(self.network.bus_ids)
        seen = set()
        for cfg in self.inverters:
            if cfg.bus not in ids or cfg.bus == self.network.substation_id:
                raise NotAnInverterBus(f"inverter bus {cfg.bus} is not a non-substation bus of the case")
            if cfg.bus in seen:
                raise ValueError(f"two inverters at bus {cfg.bus}")
            seen.add(cfg.bus)
            cfg.validate()
        for label, profiles in (("load", self.load_profiles), ("generation", self.gen_profiles)):
            for bus, series in profiles.items():
                if len(series) < self.steps:
                    raise ValueError(f"{label} profile for bus {bus} covers {len(series)} of {self.steps} steps")
        for ev in self.events:
            if not 0 <= ev.time <= self.horizon:
                raise ValueError(f"event at t = {ev.time} outside the horizon")
            if ev.bus not in seen:
                raise NotAnInverterBus(f"event targets bus {ev.bus}, which hosts no inverter")
        return self

    def with_case_mode(self, mode: int) -> "Scenario":
        return replace(self, case_mode=mode)


@dataclass
class InverterState:
    cfg: InverterConfig
    pos: int
    history: deque
    policy_enabled: bool = True
    p: float = 0.0
    q: float = 0.0
    adjustments: list = field(default_factory=list)


@dataclass
class SimulationState:
    t: float
    k: int
    s_g: np.ndarray
    v: np.ndarray
    inverters: dict
    valid: bool = True


@dataclass
class TimeSeries:
    bus_ids: tuple
    inverter_buses: tuple
    t: np.ndarray
    v: np.ndarray  # steps x buses (non-substation)
    p: np.ndarray  # steps x inverters
    q: np.ndarray
    eps_p: np.ndarray
    eps_q_plus: np.ndarray
    flicker: np.ndarray
    fired: np.ndarray
    P_sub: np.ndarray
    Q_sub: np.ndarray
    valid: np.ndarray
    adjustments: list = field(default_factory=list)

    def bus_column(self, bus: int) -> np.ndarray:
        return self.v[:, self.bus_ids.index(bus)]

    def inverter_column(self, name: str, bus: int) -> np.ndarray:
        return getattr(self, name)[:, self.inverter_buses.index(bus)]

    def firing_times(self) -> dict:
        return {
            b: [float(x) for x in self.t[self.fired[:, j]]] for j, b in enumerate(self.inverter_buses)
        }

    def to_csv(self) -> str:
        """One row per step; fixed 10-significant-digit formatting for byte-stable output."""
        head = ["t"]
        head += [f"v_bus_{b}" for b in self.bus_ids]
        for prefix in ("p_inv", "q_inv", "epsp_inv", "flicker_inv", "policy_inv"):
            head += [f"{prefix}_{b}" for b in self.inverter_buses]
        head += ["P_sub", "Q_sub"]
        out = io.StringIO()
        out.write(",".join(head) + "\n")
        fmt = "{:.10g}".format
        for k in range(len(self.t)):
            row = [fmt(self.t[k])]
            row += [fmt(x) for x in self.v[k]]
            for arr in (self.p, self.q, self.eps_p, self.flicker):
                row += [fmt(x) for x in arr[k]]
            row += ["1" if f else "0" for f in self.fired[k]]
            row += [fmt(self.P_sub[k]), fmt(self.Q_sub[k])]
            out.write(",".join(row) + "\n")
        return out.getvalue()


# --------------------------------------------------------------------------
# droop evaluation shared by the fixed point and the time stepper
# --------------------------------------------------------------------------

def operating_point(cfg: InverterConfig, availability: float) -> OperatingPoint:
    return OperatingPoint.from_rating(cfg, availability)


def droop_targets(cfg: InverterConfig, op: OperatingPoint, dv: float) -> tuple[float, float]:
    p = float(volt_watt(cfg, op, dv))
    q = float(volt_var(cfg, op, dv))
    return p, float(power_factor_cap(p, q, cfg.min_power_factor))


def _alpha(dt: float, T: float) -> float:
    return 1.0 - math.exp(-dt / T) if math.isfinite(T) else 0.0


def find_fixed_point(
    network: NetworkModel,
    mat: SensitivityMatrices,
    inverters,
    inj: InjectionVector,
    v0: float,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    gamma: float = 0.2,
    availability: dict | None = None,
):
    """Damped iteration ``s <- (1-g) s + g f(sqrt(vbar^2 - Z s) - v_nom)``.

    Returns ``(s_star, v_star)`` with ``s_star`` stacked ``[p_g; q_g]``.
    Failure to converge usually means the closed loop itself is unstable.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    n = mat.size
    inverters = list(inverters)
    availability = availability or {}
    ops = [operating_point(cfg, availability.get(cfg.bus, 1.0)) for cfg in inverters]
    pos = [mat.position(cfg.bus) for cfg in inverters]
    vbar2 = v0**2 + mat.Z @ inj.s_c
    s = np.concatenate([inj.p_g, inj.q_g]).astype(float)

    def voltages(s_vec):
        v2 = vbar2 - mat.Z @ s_vec
        if np.any(v2 <= 0):
            raise NonConvergence("squared voltage became non-positive during fixed-point iteration")
        return np.sqrt(v2)

    for it in range(1, max_iter + 1):
        v = voltages(s)
        target = s.copy()
        for cfg, op, k in zip(inverters, ops, pos):
            target[k], target[n + k] = droop_targets(cfg, op, v[k] - cfg.v_nom)
        new = (1.0 - gamma) * s + gamma * target
        change = np.max(np.abs(new - s)) if new.size else 0.0
        s = new
        if change <= tol:
            return s, voltages(s)
    raise NonConvergence(f"fixed point not reached in {max_iter} iterations (last change {change:.3g})")


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------

class Simulation:
    """Mutable run of one :class:`Scenario`; use :func:`run` for the common case."""

    def __init__(self, scenario: Scenario, mat: SensitivityMatrices | None = None):
        scenario.validate()
        self.scenario = scenario
        self.network = scenario.network
        self.mat = mat if mat is not None else build_sensitivity(self.network)
        self.dt = scenario.dt
        self.steps = scenario.steps
        n = self.mat.size
        p_base, q_base = self.network.load_vectors()
        self._p_base, self._q_base = p_base, q_base
        self._load = np.ones((self.steps, n))
        for bus, series in scenario.load_profiles.items():
            self._load[:, self.mat.position(bus)] = np.asarray(series, dtype=float)[: self.steps]
        cfgs = () if scenario.case_mode == 1 else scenario.inverters
        self._gen = {
            cfg.bus: np.asarray(scenario.gen_profiles.get(cfg.bus, np.ones(self.steps)), dtype=float)
            for cfg in cfgs
        }
        capacity = 1 + max(
            [int(round(OSCILLATION_WINDOW / self.dt))]
            + [int(round(cfg.policy_period / self.dt)) for cfg in cfgs]
        )
        invs = {
            cfg.bus: InverterState(
                cfg=cfg,
                pos=self.mat.position(cfg.bus),
                history=deque(maxlen=capacity),
                policy_enabled=scenario.case_mode == 3,
            )
            for cfg in cfgs
        }
        self._pending = sorted(
            (ev for ev in scenario.events if ev.bus in invs), key=lambda ev: ev.time
        )
        self.state = SimulationState(0.0, 0, np.zeros(2 * n), np.full(n, self.network.v0), invs)
        self._init_outputs()

    def injections(self, k: int) -> InjectionVector:
        k = min(k, self.steps - 1)
        p_c = self._p_base * self._load[k]
        q_c = self._q_base * self._load[k]
        n = self.mat.size
        return InjectionVector(p_c, q_c, self.state.s_g[:n], self.state.s_g[n:])

    def _op(self, inv: InverterState, k: int) -> OperatingPoint:
        return operating_point(inv.cfg, self._gen[inv.cfg.bus][min(k, self.steps - 1)])

    def _init_outputs(self):
        # start from the closed-loop equilibrium when one exists; otherwise from
        # the open-loop droop response at the load-only voltages
        n = self.mat.size
        invs = list(self.state.inverters.values())
        if not invs:
            return
        inj = self.injections(0)
        try:
            s, _ = find_fixed_point(
                self.network, self.mat, [inv.cfg for inv in invs], inj, self.network.v0,
                tol=1e-9, max_iter=20_000,
                availability={inv.cfg.bus: self._gen[inv.cfg.bus][0] for inv in invs},
            )
        except NonConvergence:
            log.info("no equilibrium at t=0; starting from the open-loop droop response")
            sol = solve_linear(self.mat, inj, self.network.v0)
            s = self.state.s_g.copy()
            for inv in invs:
                s[inv.pos], s[n + inv.pos] = droop_targets(
                    inv.cfg, self._op(inv, 0), sol.v[inv.pos] - inv.cfg.v_nom
                )
        for inv in invs:
            inv.p, inv.q = float(s[inv.pos]), float(s[n + inv.pos])
            self.state.s_g[inv.pos] = inv.p
            self.state.s_g[n + inv.pos] = inv.q

    def apply_event(self, event: ScenarioEvent) -> None:
        inv = self.state.inverters.get(event.bus)
        if inv is None:
            raise NotAnInverterBus(f"bus {event.bus} hosts no inverter")
        unknown = set(event.overrides) - set(OVERRIDABLE)
        if unknown:
            raise UnknownParameter(f"cannot override {sorted(unknown)}; allowed: {', '.join(OVERRIDABLE)}")
        if event.overrides:
            inv.cfg = inv.cfg.with_params(**event.overrides)
            need = 1 + int(round(inv.cfg.policy_period / self.dt))
            if need > inv.history.maxlen:
                inv.history = deque(inv.history, maxlen=need)
        if event.disable_policy:
            inv.policy_enabled = False
        log.info("t=%g: event at bus %d %s%s", self.state.t, event.bus, event.overrides,
                 " (policy disabled)" if event.disable_policy else "")

    def _policy(self, inv: InverterState, k: int) -> PolicyAdjustment | None:
        cfg = inv.cfg
        period = int(round(cfg.policy_period / self.dt))
        if not inv.policy_enabled or k == 0 or k % period or len(inv.history) < period + 1:
            return None
        if flicker(inv.history, cfg.policy_period, self.dt) <= cfg.v_T:
            return None
        v_star = estimate_v_star(inv.history, cfg.policy_period, self.dt)
        eta_i = eta_local(self.mat.rowsum_zzt[inv.pos], v_star)
        try:
            adj = stabilize(cfg, self._op(inv, k), eta_i, self.scenario.eps, v_star)
        except CannotStabilize as exc:
            log.warning("t=%g bus %d: %s; applying the widest tried ramp", self.state.t, cfg.bus, exc)
            adj = exc.adjustment
            if adj is None:
                return None
        inv.cfg = cfg.with_params(eps_p=adj.eps_p_new, eps_q_plus=adj.eps_q_plus_new)
        inv.adjustments.append((self.state.t, adj))
        log.info("t=%g: policy fired at bus %d, eps_p -> %.4g", self.state.t, cfg.bus, adj.eps_p_new)
        return adj

    def run(self) -> TimeSeries:
        st = self.state
        n = self.mat.size
        buses = tuple(st.inverters)
        m = len(buses)
        K = self.steps
        rec = {
            "v": np.empty((K, n)),
            "p": np.empty((K, m)), "q": np.empty((K, m)),
            "eps_p": np.empty((K, m)), "eps_q_plus": np.empty((K, m)),
            "flicker": np.empty((K, m)), "fired": np.zeros((K, m), dtype=bool),
            "P_sub": np.empty(K), "Q_sub": np.empty(K), "valid": np.empty(K, dtype=bool),
        }
        adjustments = []
        for k in range(K):
            st.k, st.t = k, k * self.dt
            while self._pending and self._pending[0].time <= st.t + 1e-9:
                self.apply_event(self._pending.pop(0))

            inj = self.injections(k)
            sol = solve_linear(self.mat, inj, self.network.v0)
            st.v, st.valid = sol.v, sol.valid
            for j, bus in enumerate(buses):
                inv = st.inverters[bus]
                inv.history.append(float(sol.v[inv.pos]))
                adj = self._policy(inv, k)
                if adj is not None:
                    rec["fired"][k, j] = True
                    adjustments.append({"t": st.t, **adj.to_dict()})
                period = inv.cfg.policy_period
                rec["flicker"][k, j] = (
                    flicker(inv.history, period, self.dt)
                    if len(inv.history) > round(period / self.dt)
                    else partial_flicker(inv.history, period, self.dt)
                )
                rec["p"][k, j], rec["q"][k, j] = inv.p, inv.q
                rec["eps_p"][k, j], rec["eps_q_plus"][k, j] = inv.cfg.eps_p, inv.cfg.eps_q_plus
            rec["v"][k] = sol.v
            rec["valid"][k] = sol.valid
            rec["P_sub"][k] = float(inj.p_net.sum())
            rec["Q_sub"][k] = float(inj.q_net.sum())

            for inv in st.inverters.values():
                cfg = inv.cfg
                p_t, q_t = droop_targets(cfg, self._op(inv, k + 1), sol.v[inv.pos] - cfg.v_nom)
                inv.p += _alpha(self.dt, cfg.T_p) * (p_t - inv.p)
                inv.q += _alpha(self.dt, cfg.T_q) * (q_t - inv.q)
                st.s_g[inv.pos] = inv.p
                st.s_g[n + inv.pos] = inv.q

        return TimeSeries(
            bus_ids=tuple(self.network.bus_ids[1:]),
            inverter_buses=buses,
            t=np.arange(K) * self.dt,
            adjustments=adjustments,
            **rec,
        )


def run(scenario: Scenario, mat: SensitivityMatrices | None = None) -> TimeSeries:
    return Simulation(scenario, mat).run()


def step_response(s: float, target: float, dt: float, T: float) -> float:
    """One filter update; exposed for checking the discretization."""
    return s + _alpha(dt, T) * (target - s)


# --------------------------------------------------------------------------
# post-processing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeStats:
    window: float
    upper: np.ndarray  # steps x buses, trailing-window max
    lower: np.ndarray
    spread_mean: np.ndarray  # per bus, time-averaged upper - lower
    variance: np.ndarray  # per bus, mean of the temporal variances of upper and lower
    mean_upper: np.ndarray  # per step, averaged over buses
    mean_lower: np.ndarray
    var_upper: np.ndarray  # per step, variance across buses
    var_lower: np.ndarray

    def summary(self) -> dict:
        return {
            "window": self.window,
            "mean_spread": float(self.spread_mean.mean()),
            "max_spread": float(self.spread_mean.max()),
            "mean_envelope_variance": float(self.variance.mean()),
        }


def _trailing(values: np.ndarray, w: int, reducer) -> np.ndarray:
    padded = np.concatenate([np.repeat(values[:1], w - 1, axis=0), values], axis=0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, w, axis=0)
    return reducer(windows, axis=-1)


def envelope_stats(series: TimeSeries, window: float = DEFAULT_ENVELOPE_WINDOW, dt: float | None = None) -> EnvelopeStats:
    """Trailing-window max/min of every bus voltage and their summaries.

    The first ``window`` seconds use whatever samples exist so far.
    """
    if dt is None:
        dt = float(series.t[1] - series.t[0]) if len(series.t) > 1 else 1.0
    w = int(round(window / dt))
    if w < 1 or w > len(series.t):
        raise ValueError(f"window {window} s must be between one step and the horizon")
    upper = _trailing(series.v, w, np.max)
    lower = _trailing(series.v, w, np.min)
    return EnvelopeStats(
        window=window,
        upper=upper,
        lower=lower,
        spread_mean=(upper - lower).mean(axis=0),
        variance=0.5 * (upper.var(axis=0) + lower.var(axis=0)),
        mean_upper=upper.mean(axis=1),
        mean_lower=lower.mean(axis=1),
        var_upper=upper.var(axis=1),
        var_lower=lower.var(axis=1),
    )


def sustained_oscillation(series: TimeSeries, bus: int, v_T: float = 0.01, window: float = OSCILLATION_WINDOW) -> bool:
    """Mean step-to-step voltage change over the final ``window`` seconds exceeds ``v_T``."""
    v = series.bus_column(bus)
    dt = float(series.t[1] - series.t[0]) if len(series.t) > 1 else 1.0
    k = min(int(round(window / dt)), len(v) - 1)
    return bool(np.abs(np.diff(v[-(k + 1):])).sum() / (k * dt) > v_T)


def sample_delays(rng: np.random.Generator, count: int, mean=5.0, std=10.0, low=1.0, high=60.0, dt=1.0):
    """Heterogeneous policy periods: normal draws clamped to ``[low, high]``, whole steps."""
    raw = rng.normal(mean, std, size=count)
    return [float(max(1, round(x / dt)) * dt) for x in np.clip(raw, low, high)]
