"""Per-inverter stability budget, criterion check and local re-tuning policy.

An inverter at bus ``i`` keeps the closed loop stable when

    C_p^2 + C_q^2 < eta_i,      eta_i = 2 v_i*^2 / rowsum_i(Z Z^T)

Everything an inverter needs to re-tune itself is local: its own voltage
history and the single precomputed number ``rowsum_i(Z Z^T)``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CannotStabilize, InsufficientHistory
from .inverter import InverterConfig, OperatingPoint, clamp_mu, lipschitz_constants
from .netmodel import SensitivityMatrices

DEFAULT_MARGIN = 1e-6
WIDEN_FACTOR = 1.5
MAX_WIDENINGS = 60


@dataclass(frozen=True)
class BusMargin:
    bus: int
    C_p: float
    C_q: float
    lhs: float
    eta: float
    margin: float
    satisfied: bool


@dataclass(frozen=True)
class StabilityReport:
    entries: tuple[BusMargin, ...]

    @property
    def verdict(self) -> bool:
        return all(e.satisfied for e in self.entries)

    def worst(self) -> BusMargin | None:
        return min(self.entries, key=lambda e: e.margin, default=None)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "buses": [asdict(e) for e in self.entries]}


@dataclass(frozen=True)
class PolicyAdjustment:
    bus: int
    eps_p_new: float
    eps_q_plus_new: float
    eta_used: float
    v_star_estimate: float | None
    post_check_passed: bool
    widen_iterations: int

    def to_dict(self) -> dict:
        return asdict(self)


def eta_local(rowsum_i: float, v_star_i: float) -> float:
    return 2.0 * v_star_i**2 / rowsum_i


def eta(mat: SensitivityMatrices, v_star) -> np.ndarray:
    v_star = np.asarray(v_star, dtype=float)
    if np.any(v_star <= 0):
        raise ValueError("v_star must be positive")
    return 2.0 * v_star**2 / mat.rowsum_zzt


def _clamped(op: OperatingPoint) -> OperatingPoint:
    return op if op.mu <= clamp_mu(op.mu) else OperatingPoint(op.p_bar, clamp_mu(op.mu))


def criterion_lhs(cfg: InverterConfig, op: OperatingPoint) -> tuple[float, float, float]:
    c_p, c_q = lipschitz_constants(cfg, _clamped(op))
    return c_p, c_q, c_p**2 + c_q**2


def check_criterion(
    inverters: Sequence[tuple[InverterConfig, OperatingPoint]],
    eta_by_bus: Mapping[int, float],
) -> StabilityReport:
    entries = []
    for cfg, op in inverters:
        c_p, c_q, lhs = criterion_lhs(cfg, op)
        e = float(eta_by_bus[cfg.bus])
        margin = e - lhs
        entries.append(BusMargin(cfg.bus, c_p, c_q, lhs, e, margin, margin > 0))
    return StabilityReport(tuple(entries))


def _window_steps(T_d: float, dt: float) -> int:
    k = int(round(T_d / dt))
    if k < 1:
        raise ValueError(f"T_d = {T_d} is shorter than one step of {dt}")
    return k


def flicker(history: Sequence[float], T_d: float, dt: float = 1.0) -> float:
    """Mean absolute step-to-step voltage change over the last ``T_d`` seconds."""
    k = _window_steps(T_d, dt)
    if len(history) < k + 1:
        raise InsufficientHistory(f"flicker over {T_d} s needs {k + 1} samples, have {len(history)}")
    tail = np.asarray(list(history)[-(k + 1):], dtype=float)
    return float(np.abs(np.diff(tail)).sum() / T_d)


def partial_flicker(history: Sequence[float], T_d: float, dt: float = 1.0) -> float:
    """Like :func:`flicker` but sums whatever changes are available (a lower bound)."""
    k = _window_steps(T_d, dt)
    tail = np.asarray(list(history)[-(k + 1):], dtype=float)
    if tail.size < 2:
        return 0.0
    return float(np.abs(np.diff(tail)).sum() / T_d)


def estimate_v_star(history: Sequence[float], T_d: float, dt: float = 1.0) -> float:
    """Moving average of the last ``T_d`` seconds of voltage samples."""
    if len(history) == 0:
        raise InsufficientHistory("no voltage samples")
    k = _window_steps(T_d, dt)
    return float(np.mean(list(history)[-k:]))


def stabilize(
    cfg: InverterConfig,
    op: OperatingPoint,
    eta_i: float,
    eps: float = DEFAULT_MARGIN,
    v_star: float | None = None,
) -> PolicyAdjustment:
    """New ``(eps_p, eps_q_plus)`` meeting ``C_p^2 + C_q^2 <= eta_i - eps``.

    Starts from the closed form that zeroes the dead-band and sizes the
    Volt-Watt ramp to the stability budget, then widens the ramp by 1.5x until
    the constraint actually holds: the closed form ignores the ``q_lim``
    contribution to ``C_q`` and so always lands slightly outside.
    """
    if not eta_i > eps > 0:
        raise CannotStabilize(f"bus {cfg.bus}: budget eta = {eta_i:.4g} does not exceed margin {eps:.3g}")
    op = _clamped(op)
    budget = eta_i - eps
    eps_q_new = 2.0 * cfg.V_q_plus
    if op.p_bar > 0:
        eps_p_new = op.p_bar / math.sqrt((1.0 - op.mu**2) * budget)
    else:
        eps_p_new = cfg.eps_p  # no real power: the Volt-Watt slope is zero anyway

    def lhs(width: float) -> float:
        return criterion_lhs(cfg.with_params(eps_p=width, eps_q_plus=eps_q_new), op)[2]

    widenings = 0
    while lhs(eps_p_new) > budget:
        if widenings == MAX_WIDENINGS:
            adj = PolicyAdjustment(cfg.bus, eps_p_new, eps_q_new, eta_i, v_star, False, widenings)
            raise CannotStabilize(
                f"bus {cfg.bus}: eta - eps = {budget:.4g} too small even with a flat Volt-Watt curve "
                f"(q_lim / eps_q+ = {cfg.q_lim / eps_q_new:.4g})",
                adjustment=adj,
            )
        eps_p_new *= WIDEN_FACTOR
        widenings += 1
    return PolicyAdjustment(cfg.bus, eps_p_new, eps_q_new, eta_i, v_star, True, widenings)
