import numpy as np
import pytest

from gridstab.ingest import builtin_case_path, parse_matpower
from gridstab.netmodel import Branch, Bus, NetworkModel, build_sensitivity, normalize_orientation


def feeder(parents, r=None, x=None, p=None, q=None, v0=1.0):
    """Radial test feeder from a parent list; bus 0 is the substation."""
    n = len(parents) + 1
    r = r if r is not None else [0.01] * (n - 1)
    x = x if x is not None else [0.02] * (n - 1)
    p = p if p is not None else [0.0] * n
    q = q if q is not None else [0.0] * n
    buses = [Bus(k, p[k], q[k]) for k in range(n)]
    branches = [Branch(parents[k - 1], k, r[k - 1], x[k - 1]) for k in range(1, n)]
    return normalize_orientation(NetworkModel(buses, branches, v0=v0))


def two_bus(r=0.1, x=0.2, p=0.0, q=0.0):
    return feeder([0], r=[r], x=[x], p=[0.0, p], q=[0.0, q])


def random_feeder(rng, n):
    parents = [int(rng.integers(0, k)) for k in range(1, n)]
    r = list(rng.uniform(0.001, 0.05, n - 1))
    x = list(rng.uniform(0.001, 0.05, n - 1))
    p = [0.0] + list(rng.uniform(0.0, 0.02, n - 1))
    q = [0.0] + list(rng.uniform(0.0, 0.02, n - 1))
    return feeder(parents, r, x, p, q)


@pytest.fixture(scope="session")
def case85():
    return parse_matpower(builtin_case_path("case85").read_text())


@pytest.fixture(scope="session")
def mat85(case85):
    return build_sensitivity(case85)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
