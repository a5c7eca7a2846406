import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import feeder, random_feeder, two_bus
from gridstab.errors import NotConnected, NotRadial, NoSubstation, UnknownBus
from gridstab.netmodel import (
    Branch,
    Bus,
    NetworkModel,
    build_incidence,
    build_sensitivity,
    common_path_impedance,
    normalize_orientation,
)


def test_two_bus_reversed_branch_is_reoriented():
    net = NetworkModel([Bus(0), Bus(1)], [Branch(1, 0, 0.1, 0.2)])
    out = normalize_orientation(net)
    assert (out.branches[0].from_bus, out.branches[0].to_bus) == (0, 1)


def test_substation_moves_to_index_zero():
    net = NetworkModel([Bus(5), Bus(7), Bus(9)], [Branch(9, 5, 0.1, 0.1), Branch(7, 9, 0.1, 0.1)], substation_id=7)
    out = normalize_orientation(net)
    assert out.bus_ids == [7, 9, 5]
    assert out.is_normalized()


def test_triangle_is_not_radial():
    net = NetworkModel([Bus(0), Bus(1), Bus(2)], [Branch(0, 1, 1, 1), Branch(1, 2, 1, 1), Branch(2, 0, 1, 1)])
    with pytest.raises(NotRadial):
        normalize_orientation(net)


def test_disconnected_network():
    # right branch count but one bus unreachable because of a duplicate edge
    net = NetworkModel([Bus(0), Bus(1), Bus(2)], [Branch(0, 1, 1, 1), Branch(1, 0, 1, 1)])
    with pytest.raises((NotConnected, NotRadial)):
        normalize_orientation(net)


def test_missing_substation():
    net = NetworkModel([Bus(1), Bus(2)], [Branch(1, 2, 1, 1)], substation_id=0)
    with pytest.raises(NoSubstation):
        normalize_orientation(net)


def test_negative_impedance_rejected():
    with pytest.raises(ValueError):
        NetworkModel([Bus(0), Bus(1)], [Branch(0, 1, -0.1, 0.1)])


def test_case85_branches_point_away_from_root(case85):
    assert case85.n == 85 and len(case85.branches) == 84
    depth = {case85.substation_id: 0}
    for br in case85.branches:
        depth[br.to_bus] = depth[br.from_bus] + 1  # KeyError if a parent came later
    assert normalize_orientation(case85) == case85


def test_two_bus_incidence():
    T, F, M0, M = build_incidence(two_bus())
    assert F.tolist() == [[1, 0]]
    assert T.tolist() == [[0, 1]]
    assert M0.tolist() == [[1, -1]]
    assert M.tolist() == [[-1]]


def test_case85_incidence(case85):
    T, F, M0, M = build_incidence(case85)
    assert np.all(M0.sum(axis=1) == 0)
    assert abs(np.linalg.det(M)) > 0


def test_two_bus_sensitivity():
    mat = build_sensitivity(two_bus(0.1, 0.2))
    assert mat.R == pytest.approx(np.array([[-0.2]]))
    assert mat.X == pytest.approx(np.array([[-0.4]]))
    assert mat.Z == pytest.approx(np.array([[-0.2, -0.4]]))
    assert mat.rowsum_zzt == pytest.approx([0.2])


def test_zero_impedance_branch_duplicates_rows():
    net = feeder([0, 1, 1], r=[0.02, 0.0, 0.01], x=[0.03, 0.0, 0.02])
    mat = build_sensitivity(net)
    a, b = mat.position(1), mat.position(2)
    assert np.allclose(mat.R[a], mat.R[b]) and np.allclose(mat.R[:, a], mat.R[:, b])
    assert np.allclose(mat.X[a], mat.X[b])


def test_common_path_examples(case85):
    r, x = common_path_impedance(case85, 30, 30)
    path_r = 0.0
    k = case85.index(30)
    while k:
        br = case85.branches[k - 1]
        path_r += br.r
        k = case85.index(br.from_bus)
    assert r == pytest.approx(path_r)
    net = feeder([0, 0])
    assert common_path_impedance(net, 1, 2) == (0, 0)
    with pytest.raises(UnknownBus):
        common_path_impedance(net, 1, 99)


def test_case85_path_oracle(case85, mat85):
    ids = case85.bus_ids[1:]
    for i in ids:
        for j in ids:
            r, x = common_path_impedance(case85, i, j)
            a, b = mat85.position(i), mat85.position(j)
            assert abs(mat85.R[a, b] + 2 * r) <= 1e-10
            assert abs(mat85.X[a, b] + 2 * x) <= 1e-10


def test_rowsum_grows_along_paths(case85, mat85):
    assert np.all(mat85.rowsum_zzt > 0)
    for br in case85.branches:
        if br.from_bus == case85.substation_id:
            continue
        assert mat85.rowsum_zzt[mat85.position(br.to_bus)] >= mat85.rowsum_zzt[mat85.position(br.from_bus)] - 1e-15


def test_matrices_are_read_only(mat85):
    with pytest.raises(ValueError):
        mat85.R[0, 0] = 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 25))
def test_random_radial_invariants(seed, n):
    net = random_feeder(np.random.default_rng(seed), n)
    T, F, M0, M = build_incidence(net)
    assert np.all(M0 @ np.ones(n) == 0)
    mat = build_sensitivity(net)
    for i in net.bus_ids[1:]:
        for j in net.bus_ids[1:]:
            r, x = common_path_impedance(net, i, j)
            assert abs(mat.R[mat.position(i), mat.position(j)] + 2 * r) <= 1e-10
            assert abs(mat.X[mat.position(i), mat.position(j)] + 2 * x) <= 1e-10
    assert np.all(mat.rowsum_zzt > 0)
    assert normalize_orientation(net) == net
