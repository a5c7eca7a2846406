"""Linearized and exact DistFlow solvers for radial feeders.

The linear solver is the closed form ``v2 = v0^2 + Z s_c - Z s_g``.  The
nonlinear backward/forward sweep solves the full branch-flow equations
(including the ``r c^2`` / ``x c^2`` loss terms) by walking the tree directly;
it does not use the sensitivity matrices, so it serves as an independent
oracle for them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NegativeSquaredVoltage, NonConvergence
from .netmodel import NetworkModel, SensitivityMatrices

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class InjectionVector:
    """Per-unit demand (``p_c``, ``q_c``) and generation (``p_g``, ``q_g``).

    All four vectors have one entry per non-substation bus, normalized order.
    """

    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray

    def __post_init__(self):
        for name in ("p_c", "q_c", "p_g", "q_g"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, a)
        if not (len(self.p_c) == len(self.q_c) == len(self.p_g) == len(self.q_g)):
            raise ValueError("injection vectors differ in length")

    @classmethod
    def loads_only(cls, p_c, q_c) -> "InjectionVector":
        p_c = np.asarray(p_c, dtype=float)
        return cls(p_c, q_c, np.zeros_like(p_c), np.zeros_like(p_c))

    @classmethod
    def from_network(cls, network: NetworkModel, scale: float = 1.0) -> "InjectionVector":
        p, q = network.load_vectors()
        return cls.loads_only(p * scale, q * scale)

    @property
    def s_c(self) -> np.ndarray:
        return np.concatenate([self.p_c, self.q_c])

    @property
    def s_g(self) -> np.ndarray:
        return np.concatenate([self.p_g, self.q_g])

    @property
    def p_net(self) -> np.ndarray:
        return self.p_c - self.p_g

    @property
    def q_net(self) -> np.ndarray:
        return self.q_c - self.q_g


@dataclass(frozen=True)
class FlowSolution:
    """Squared voltages ``v2`` (non-substation buses) and branch flows.

    ``valid`` is False when some ``v2 <= 0``; ``v`` is then clipped at zero
    rather than NaN so callers can keep stepping through a collapse.
    """

    v2: np.ndarray
    v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    c2: np.ndarray | None = None
    valid: bool = True
    iterations: int = 0

    def raise_if_invalid(self) -> "FlowSolution":
        if not self.valid:
            k = int(np.argmin(self.v2))
            raise NegativeSquaredVoltage(
                f"squared voltage {self.v2[k]:.4g} <= 0 at position {k}; "
                "operating point is outside the linearization's validity"
            )
        return self


def solve_linear(mat: SensitivityMatrices, inj: InjectionVector, v0: float) -> FlowSolution:
    n = mat.size
    if len(inj.p_c) != n:
        raise ValueError(f"injection length {len(inj.p_c)} does not match network size {n}")
    v2 = v0**2 + mat.Z @ inj.s_c - mat.Z @ inj.s_g
    valid = bool(np.all(v2 > 0))
    if not valid:
        log.debug("linear solve produced non-positive v2 (min %.4g)", v2.min())
    P = mat.subtree @ inj.p_net
    Q = mat.subtree @ inj.q_net
    return FlowSolution(v2=v2, v=np.sqrt(np.clip(v2, 0.0, None)), P=P, Q=Q, valid=valid)


def loss_term(mat: SensitivityMatrices, c2: np.ndarray) -> np.ndarray:
    """``L @ c2``: the voltage correction the linearization drops."""
    return mat.L @ np.asarray(c2, dtype=float)


def solve_nonlinear_sweep(
    network: NetworkModel,
    inj: InjectionVector,
    v0: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FlowSolution:
    """Backward/forward sweep on the exact DistFlow equations.

    Each iteration accumulates branch flows leaf-to-root using the current
    squared currents, then propagates squared voltages root-to-leaf, then
    refreshes ``c2 = (P^2 + Q^2) / v_from^2``.  The returned ``P``, ``Q`` and
    ``c2`` are the ones used in the final voltage pass, so the branch voltage
    equation holds to rounding and the current equation to ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    parent = network.parents()
    n = network.n
    m = n - 1
    r = np.array([br.r for br in network.branches])
    x = np.array([br.x for br in network.branches])
    p = inj.p_net
    q = inj.q_net

    # branch e feeds bus e+1; its parent branch is parent[e+1]-1 (or none)
    parent_branch = parent[1:] - 1

    vo2 = np.full(n, v0**2)
    c2 = np.zeros(m)
    P = np.zeros(m)
    Q = np.zeros(m)
    for it in range(1, max_iter + 1):
        P = p + r * c2
        Q = q + x * c2
        for e in range(m - 1, -1, -1):  # children have larger indices
            pb = parent_branch[e]
            if pb >= 0:
                P[pb] += P[e]
                Q[pb] += Q[e]
        new = np.empty(n)
        new[0] = v0**2
        for e in range(m):
            new[e + 1] = new[parent[e + 1]] - 2.0 * (r[e] * P[e] + x[e] * Q[e]) + (r[e] ** 2 + x[e] ** 2) * c2[e]
        if np.any(new <= 0):
            raise NonConvergence(f"voltage collapse in sweep iteration {it}")
        delta = np.max(np.abs(new - vo2))
        vo2 = new
        c2_next = (P**2 + Q**2) / vo2[parent[1:]]
        if delta <= tol and np.max(np.abs(c2_next - c2)) <= tol:
            v2 = vo2[1:]
            return FlowSolution(v2=v2, v=np.sqrt(v2), P=P, Q=Q, c2=c2, valid=True, iterations=it)
        c2 = c2_next
    raise NonConvergence(f"sweep did not converge within {max_iter} iterations (last change {delta:.3g})")
