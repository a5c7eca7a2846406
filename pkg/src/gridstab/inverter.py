"""Volt-Watt / Volt-Var droop curves with hardware-limited reactive capability.

All curve breakpoints live in the voltage-*deviation* domain
(``dv = v - v_nom``).  Scenario files state them as absolute voltages the way
equipment settings are usually written (``V_p = 1.035``); see
:meth:`InverterConfig.from_absolute`.

The curve functions accept scalars or numpy arrays for ``dv``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import MuSaturated

MU_MAX = 0.999

# settings that are voltages (absolute in scenario files, deviations internally)
VOLTAGE_SETTINGS = ("V_p", "V_q_plus", "V_q_minus")


@dataclass(frozen=True)
class InverterConfig:
    bus: int
    s_rated: float
    q_lim: float
    V_p: float = 0.035
    eps_p: float = 0.03
    V_q_plus: float = 0.035
    V_q_minus: float = -0.035
    eps_q_plus: float = 0.03
    eps_q_minus: float = 0.03
    T_p: float = 1.0
    T_q: float = 1.0
    T_d: float | None = None
    v_T: float = 0.01
    v_nom: float = 1.0
    min_power_factor: float = 0.2
    mu: float = 0.9

    @property
    def policy_period(self) -> float:
        """Policy evaluation period; defaults to ``min(T_p, T_q)``."""
        return self.T_d if self.T_d is not None else min(self.T_p, self.T_q)

    @property
    def deadband_half_width(self) -> float:
        return self.V_q_plus - self.eps_q_plus / 2

    @classmethod
    def from_absolute(cls, **settings) -> "InverterConfig":
        """Build from settings whose voltage breakpoints are absolute (pu)."""
        v_nom = settings.get("v_nom", 1.0)
        for key in VOLTAGE_SETTINGS:
            if key in settings:
                settings[key] = settings[key] - v_nom
        return cls(**settings)

    def with_params(self, **changes) -> "InverterConfig":
        names = {f.name for f in fields(self)}
        unknown = set(changes) - names
        if unknown:
            raise KeyError(f"unknown inverter parameter(s): {sorted(unknown)}")
        return replace(self, **changes)

    def validate(self) -> "InverterConfig":
        """Check the droop-curve constraints; returns self for chaining."""
        problems = []
        if self.s_rated <= 0:
            problems.append("s_rated must be positive")
        if not 0 < self.q_lim <= self.s_rated:
            problems.append("need 0 < q_lim <= s_rated")
        if min(self.eps_p, self.eps_q_plus, self.eps_q_minus) <= 0:
            problems.append("ramp widths must be positive")
        if self.V_p - self.eps_p / 2 <= 0:
            problems.append("V_p - eps_p/2 must be > 0")
        if self.V_q_plus <= 0 or self.V_q_minus >= 0:
            problems.append("need V_q_plus > 0 > V_q_minus")
        # a zero-width dead-band (eps_q = 2|V_q|) is allowed
        if self.eps_q_plus > 2 * self.V_q_plus + 1e-12:
            problems.append("eps_q_plus must be <= 2 V_q_plus")
        if self.eps_q_minus > -2 * self.V_q_minus + 1e-12:
            problems.append("eps_q_minus must be <= -2 V_q_minus")
        if min(self.T_p, self.T_q) <= 0 or (self.T_d is not None and self.T_d <= 0):
            problems.append("time constants must be positive")
        if not 0 < self.mu <= 1:
            problems.append("mu must lie in (0, 1]")
        if not 0 < self.min_power_factor <= 1:
            problems.append("min_power_factor must lie in (0, 1]")
        if problems:
            raise ValueError(f"inverter at bus {self.bus}: " + "; ".join(problems))
        return self


@dataclass(frozen=True)
class OperatingPoint:
    """Available real power ``p_bar`` and its ratio ``mu`` to apparent capability.

    The apparent capability at this instant is ``s = p_bar / mu``.
    """

    p_bar: float
    mu: float

    def __post_init__(self):
        if not 0 < self.mu <= 1:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if self.p_bar < 0:
            raise ValueError("p_bar must be non-negative")

    @property
    def s(self) -> float:
        return self.p_bar / self.mu

    @classmethod
    def from_rating(cls, cfg: InverterConfig, availability: float = 1.0) -> "OperatingPoint":
        """Capability ``s = s_rated * availability`` with real share ``cfg.mu``."""
        return cls(p_bar=cfg.mu * cfg.s_rated * max(availability, 0.0), mu=cfg.mu)


def clamp_mu(mu: float) -> float:
    return min(mu, MU_MAX)


def volt_watt(cfg: InverterConfig, op: OperatingPoint, dv):
    dv = np.asarray(dv, dtype=float)
    lo = cfg.V_p - cfg.eps_p / 2
    hi = cfg.V_p + cfg.eps_p / 2
    ramp = op.p_bar * (hi - dv) / cfg.eps_p
    out = np.where(dv <= lo, op.p_bar, np.where(dv > hi, 0.0, ramp))
    return out[()] if out.ndim == 0 else out


def q_bar(cfg: InverterConfig, op: OperatingPoint, dv):
    """Reactive capability: hardware limit or apparent-power headroom."""
    p = volt_watt(cfg, op, dv)
    headroom = np.sqrt(np.clip(op.s**2 - np.square(p), 0.0, None))
    out = np.minimum(cfg.q_lim, headroom)
    return out[()] if np.ndim(out) == 0 else out


def volt_var(cfg: InverterConfig, op: OperatingPoint, dv):
    """Five-piece Volt-Var curve; positive output is injection.

    The negative-voltage side saturates at the constant capability (real
    output at its maximum there); the positive side uses the voltage-dependent
    capability, which grows as Volt-Watt curtails real power.
    """
    dv = np.asarray(dv, dtype=float)
    qb_const = min(cfg.q_lim, math.sqrt(max(op.s**2 - op.p_bar**2, 0.0)))
    qb = np.asarray(q_bar(cfg, op, dv))

    neg_lo = cfg.V_q_minus - cfg.eps_q_minus / 2
    neg_hi = cfg.V_q_minus + cfg.eps_q_minus / 2
    pos_lo = cfg.V_q_plus - cfg.eps_q_plus / 2
    pos_hi = cfg.V_q_plus + cfg.eps_q_plus / 2

    neg_ramp = qb_const * (neg_hi - dv) / cfg.eps_q_minus
    pos_ramp = -qb * (dv - pos_lo) / cfg.eps_q_plus
    out = np.select(
        [dv < neg_lo, dv < neg_hi, dv <= pos_lo, dv <= pos_hi],
        [qb_const, neg_ramp, 0.0, pos_ramp],
        default=-qb,
    )
    return out[()] if out.ndim == 0 else out


def power_factor_cap(p, q, min_power_factor: float):
    """Limit |q| to ``p * tan(acos(pf_min))`` while real output is positive."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k = math.tan(math.acos(min_power_factor))
    cap = p * k
    out = np.where(p > 0, np.clip(q, -cap, cap), q)
    return out[()] if out.ndim == 0 else out


def lipschitz_constants(cfg: InverterConfig, op: OperatingPoint) -> tuple[float, float]:
    """Slope bounds ``(C_p, C_q)`` of the Volt-Watt and Volt-Var curves.

    ``C_q`` bounds the positive-voltage Volt-Var ramp.  The negative ramp has
    slope at most ``q_lim / eps_q_minus`` and is covered only when that does
    not exceed ``C_q`` (e.g. symmetric ramp widths).
    """
    if op.mu > MU_MAX:
        raise MuSaturated(f"mu = {op.mu} exceeds {MU_MAX}; clamp it before computing C_q")
    c_p = op.p_bar / cfg.eps_p
    # p_bar / (eps_p sqrt(1/mu^2 - 1)), written to stay finite as mu -> 0
    c_q = op.p_bar * op.mu / (cfg.eps_p * math.sqrt(1.0 - op.mu**2)) + cfg.q_lim / cfg.eps_q_plus
    return c_p, c_q


def droop_derivative(cfg: InverterConfig, op: OperatingPoint, dv: float) -> tuple[float, float]:
    """Analytic ``(dp/dv, dq/dv)``; one-sided (left-open interval) at breakpoints."""
    dv = float(dv)
    dp = -op.p_bar / cfg.eps_p if -cfg.eps_p / 2 < dv - cfg.V_p <= cfg.eps_p / 2 else 0.0

    if -cfg.eps_q_minus / 2 <= dv - cfg.V_q_minus < cfg.eps_q_minus / 2:
        qb = min(cfg.q_lim, math.sqrt(max(op.s**2 - op.p_bar**2, 0.0)))
        return dp, -qb / cfg.eps_q_minus
    if -cfg.eps_q_plus / 2 < dv - cfg.V_q_plus <= cfg.eps_q_plus / 2:
        f_p = float(volt_watt(cfg, op, dv))
        headroom = math.sqrt(max(op.s**2 - f_p**2, 0.0))
        qb = min(cfg.q_lim, headroom)
        # step function: capability tracks the headroom only below the hardware limit
        dqb = (-f_p * dp / headroom) if (cfg.q_lim > headroom and headroom > 0) else 0.0
        offset = dv - (cfg.V_q_plus - cfg.eps_q_plus / 2)
        return dp, -(dqb * offset + qb) / cfg.eps_q_plus
    if dv > cfg.V_q_plus + cfg.eps_q_plus / 2:
        f_p = float(volt_watt(cfg, op, dv))
        headroom = math.sqrt(max(op.s**2 - f_p**2, 0.0))
        dqb = (-f_p * dp / headroom) if (cfg.q_lim > headroom and headroom > 0) else 0.0
        return dp, -dqb
    return dp, 0.0
