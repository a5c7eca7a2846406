"""Radial feeder model and linearized DistFlow sensitivity matrices.

A :class:`NetworkModel` holds buses and branches in per-unit on the case base.
After :func:`normalize_orientation` the substation sits at internal index 0,
buses follow breadth-first order and branch ``k`` feeds internal bus ``k + 1``.

The sensitivity matrices map net bus injections (load minus generation, all
non-substation buses) onto squared voltage magnitudes::

    v2 = v0**2 + R @ p + X @ q            (losses dropped)
    v2 = v0**2 + R @ p + X @ q + L @ c2   (exact DistFlow)

with ``R = 2 M^-1 diag(r) (I - T F^T)^-1 T``.  ``T`` here is the branch x bus
"to" matrix with the substation column removed; the full matrix does not
conform with the other factors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoSubstation, NotConnected, NotRadial, SingularMatrix, UnknownBus


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class NetworkModel:
    """Balanced radial feeder, per-unit on ``base_mva``.

    ``buses`` and ``branches`` are tuples so instances can be shared between
    concurrent scenario runs.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 1.0
    substation_id: int = 0
    v0: float = 1.0
    _index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        index: dict[int, int] = {}
        for k, bus in enumerate(self.buses):
            if bus.id in index:
                raise ValueError(f"duplicate bus id {bus.id}")
            index[bus.id] = k
        object.__setattr__(self, "_index", index)
        if self.v0 <= 0:
            raise ValueError("v0 must be positive")
        for br in self.branches:
            if br.r < 0 or br.x < 0:
                raise ValueError(f"branch {br.from_bus}->{br.to_bus} has negative impedance")

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise UnknownBus(f"unknown bus id {bus_id}") from None

    def load_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-unit (p, q) loads of the non-substation buses, internal order."""
        self._require_normalized()
        p = np.array([b.p_load for b in self.buses[1:]], dtype=float)
        q = np.array([b.q_load for b in self.buses[1:]], dtype=float)
        return p, q

    def parents(self) -> np.ndarray:
        """Internal parent index of every bus (-1 for the substation)."""
        self._require_normalized()
        parent = np.full(self.n, -1, dtype=int)
        for br in self.branches:
            parent[self.index(br.to_bus)] = self.index(br.from_bus)
        return parent

    def is_normalized(self) -> bool:
        if not self.buses or self.buses[0].id != self.substation_id:
            return False
        if len(self.branches) != self.n - 1:
            return False
        for k, br in enumerate(self.branches):
            if self.index(br.to_bus) != k + 1 or self.index(br.from_bus) >= k + 1:
                return False
        return True

    def _require_normalized(self):
        if not self.is_normalized():
            raise ValueError("network must be normalized first (normalize_orientation)")


def normalize_orientation(network: NetworkModel) -> NetworkModel:
    """Orient every branch away from the substation and re-index buses.

    Buses are reordered breadth-first from the substation (ties broken by the
    order branches were listed) and branches are sorted by their to-bus, so
    that branch ``k`` feeds internal bus ``k + 1``.  Idempotent.
    """
    ids = [b.id for b in network.buses]
    if network.substation_id not in ids:
        raise NoSubstation(f"substation bus {network.substation_id} not in bus list")
    n = len(ids)
    if len(network.branches) != n - 1:
        raise NotRadial(f"{len(network.branches)} branches for {n} buses; a radial feeder needs {n - 1}")

    adjacency: dict[int, list[tuple[int, Branch]]] = {i: [] for i in ids}
    for br in network.branches:
        if br.from_bus not in adjacency or br.to_bus not in adjacency:
            raise UnknownBus(f"branch {br.from_bus}->{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise NotRadial(f"self-loop at bus {br.from_bus}")
        adjacency[br.from_bus].append((br.to_bus, br))
        adjacency[br.to_bus].append((br.from_bus, br))

    order = [network.substation_id]
    seen = {network.substation_id}
    oriented: dict[int, Branch] = {}
    queue = deque(order)
    while queue:
        u = queue.popleft()
        for v, br in adjacency[u]:
            if v in seen:
                continue
            seen.add(v)
            order.append(v)
            oriented[v] = Branch(u, v, br.r, br.x)
            queue.append(v)
    if len(seen) != n:
        # With n-1 branches, a disconnected graph necessarily contains a cycle;
        # report the missing buses, which is the more useful diagnostic.
        missing = sorted(set(ids) - seen)
        raise NotConnected(f"buses not reachable from the substation: {missing[:10]}")

    by_id = {b.id: b for b in network.buses}
    return NetworkModel(
        buses=tuple(by_id[i] for i in order),
        branches=tuple(oriented[i] for i in order[1:]),
        base_mva=network.base_mva,
        substation_id=network.substation_id,
        v0=network.v0,
    )


@dataclass(frozen=True)
class SensitivityMatrices:
    """Dense network matrices; rows/columns follow the normalized bus order.

    ``subtree[e, i]`` is 1 when non-substation bus ``i`` is fed through branch
    ``e``; it equals ``(I - T F^T)^-1 T`` and maps bus injections onto
    lossless branch flows.
    """

    T: np.ndarray
    F: np.ndarray
    M0: np.ndarray
    M: np.ndarray
    R: np.ndarray
    X: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    rowsum_zzt: np.ndarray
    subtree: np.ndarray
    bus_ids: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.R.shape[0]

    def position(self, bus_id: int) -> int:
        """Row of ``bus_id`` in the (n-1)-sized vectors."""
        try:
            k = self.bus_ids.index(bus_id)
        except ValueError:
            raise UnknownBus(f"unknown bus id {bus_id}") from None
        if k == 0:
            raise UnknownBus(f"bus {bus_id} is the substation")
        return k - 1


def build_incidence(network: NetworkModel) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(T, F, M0, M)``; T and F are branch x bus, M drops the substation column."""
    network._require_normalized()
    n = network.n
    T = np.zeros((n - 1, n))
    F = np.zeros((n - 1, n))
    for e, br in enumerate(network.branches):
        T[e, network.index(br.to_bus)] = 1.0
        F[e, network.index(br.from_bus)] = 1.0
    M0 = F - T
    return T, F, M0, M0[:, 1:].copy()


def build_sensitivity(network: NetworkModel) -> SensitivityMatrices:
    T, F, M0, M = build_incidence(network)
    m = T.shape[0]
    r = np.array([br.r for br in network.branches])
    x = np.array([br.x for br in network.branches])
    T_red = T[:, 1:]
    eye = np.eye(m)
    try:
        # (I - T F^T)^-1 by factorization; T F^T is the branch->child-branch map
        down = np.linalg.solve(eye - T @ F.T, eye)
        M_inv = np.linalg.solve(M, eye)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"incidence system is singular ({exc}); network is not radial") from exc
    if not np.all(np.isfinite(M_inv)):
        raise SingularMatrix("incidence inverse is not finite")

    subtree = down @ T_red
    R = 2.0 * M_inv @ (r[:, None] * subtree)
    X = 2.0 * M_inv @ (x[:, None] * subtree)
    L = M_inv @ (
        2.0 * (r[:, None] * down * r[None, :])
        + 2.0 * (x[:, None] * down * x[None, :])
        - np.diag(r**2 + x**2)
    )
    Z = np.hstack([R, X])
    rowsum = Z @ Z.sum(axis=0)  # row sums of Z Z^T without forming it

    arrays = dict(T=T, F=F, M0=M0, M=M, R=R, X=X, L=L, Z=Z, rowsum_zzt=rowsum, subtree=subtree)
    for a in arrays.values():
        a.setflags(write=False)
    return SensitivityMatrices(**arrays, bus_ids=tuple(network.bus_ids))


def _root_path(network: NetworkModel, bus_id: int) -> list[Branch]:
    network._require_normalized()
    k = network.index(bus_id)
    if k == 0:
        raise UnknownBus(f"bus {bus_id} is the substation")
    path = []
    while k != 0:
        br = network.branches[k - 1]
        path.append(br)
        k = network.index(br.from_bus)
    return path


def common_path_impedance(network: NetworkModel, i: int, j: int) -> tuple[float, float]:
    """Sum of r and x over branches shared by the root->i and root->j paths."""
    pi = {(b.from_bus, b.to_bus): b for b in _root_path(network, i)}
    shared = [b for b in _root_path(network, j) if (b.from_bus, b.to_bus) in pi]
    return sum(b.r for b in shared), sum(b.x for b in shared)


def with_loads(network: NetworkModel, scale: float) -> NetworkModel:
    """Copy of ``network`` with every bus load multiplied by ``scale``."""
    return replace(
        network,
        buses=tuple(Bus(b.id, b.p_load * scale, b.q_load * scale) for b in network.buses),
    )
