import math

import pytest
import torch

from ldplab.dirichlet import energy_density
from ldplab.metric import (
    ball,
    edge_lengths,
    enlarge_set,
    intrinsic_distance,
    resolve_region,
    set_distance,
    shrink_set,
)
from ldplab.space import Region, build_explicit, build_lattice_1d, region_from_spec


def test_two_state_distance(two_state):
    bracket = intrinsic_distance(two_state, 0, 1)
    assert bracket.lower == pytest.approx(1.0, abs=1e-9)
    assert bracket.upper == pytest.approx(1.0, abs=1e-9)
    assert bracket.gap == pytest.approx(0.0, abs=1e-9)


def test_lattice_distance_is_euclidean(lattice64):
    bracket = intrinsic_distance(lattice64, 16, 48)
    assert bracket.lower == pytest.approx(0.5, rel=1e-2)
    assert bracket.lower <= bracket.upper
    # the witness certifies the lower bound
    assert bracket.witness_max_gamma <= 1 + 1e-9
    assert (bracket.witness[16] - bracket.witness[48]).item() == pytest.approx(bracket.lower, rel=1e-9)


def test_lattice_distance_converges_with_the_mesh():
    errors = []
    for cells in (16, 32, 64):
        space = build_lattice_1d(cells)
        bracket = intrinsic_distance(space, cells // 4, 3 * cells // 4)
        assert bracket.lower <= bracket.upper
        errors.append(abs(bracket.lower - 0.5))
    assert errors[0] + 1e-9 >= errors[1]
    assert errors[1] + 1e-9 >= errors[2]
    assert errors[2] <= 5e-3


def test_edge_lengths(two_state, lattice64):
    # one edge of unit measure and conductance: |f(v1) - f(v2)| <= 1
    assert edge_lengths(two_state)[0, 1] == pytest.approx(1.0)
    lengths = edge_lengths(lattice64)
    m, w = lattice64.measure, lattice64.conductances
    assert lengths[31, 32] == pytest.approx(math.sqrt(min(m[31].item(), m[32].item()) / w[31, 32].item()))


def test_witness_is_feasible(lattice64_table, lattice64):
    bracket = lattice64_table.bracket(5, 40)
    assert energy_density(lattice64, bracket.witness).max().item() <= 1 + 1e-9
    assert (bracket.witness[5] - bracket.witness[40]).item() == pytest.approx(bracket.lower, rel=1e-9)


def test_table_is_a_metric(lattice64_table):
    lower = lattice64_table.lower
    assert torch.allclose(lower, lower.T)
    assert torch.all(lower.diagonal() == 0)
    # d(x, z) <= d(x, y) + d(y, z)
    slack = lower[:, None, :] - (lower[:, :, None] + lower[None, :, :])
    assert slack.max().item() <= 1e-9
    assert torch.all(lattice64_table.lower <= lattice64_table.upper + 1e-12)


def test_disconnected_pair_is_infinite():
    space = build_explicit([1.0, 1.0, 1.0], [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    bracket = intrinsic_distance(space, 0, 2)
    assert math.isinf(bracket.lower)
    assert bracket.gap == 0.0


def test_ball(lattice64, lattice64_table):
    assert ball(lattice64, 32, 2.5 / 64, lattice64_table).vertices == tuple(range(30, 35))
    assert ball(lattice64, 0, 0.0, lattice64_table).vertices == (0,)


def test_shrink_and_enlarge(lattice64, lattice64_table):
    region = region_from_spec(lattice64, {"interval": [0.2, 0.8]})
    assert shrink_set(lattice64, region, 0.1, lattice64_table).vertices == tuple(range(19, 46))
    assert enlarge_set(lattice64, region, 0.1, lattice64_table).vertices == tuple(range(7, 58))
    assert enlarge_set(lattice64, region, 0.0, lattice64_table).vertices == region.vertices
    assert shrink_set(lattice64, region, 1.0, lattice64_table).is_empty
    everything = Region.everything(lattice64)
    assert shrink_set(lattice64, everything, 1.0, lattice64_table) == everything


def test_set_distance(lattice64, lattice64_table):
    region = region_from_spec(lattice64, {"interval": [0.0, 0.25]})
    assert set_distance(lattice64, region, 48, lattice64_table) == pytest.approx(0.5, rel=1e-9)
    assert set_distance(lattice64, region, 3, lattice64_table) == 0.0


def test_ball_region_spec(lattice64, lattice64_table):
    region = resolve_region(lattice64, {"ball": {"center": [0.5], "radius": 0.05}}, lattice64_table)
    assert region.vertices == tuple(range(29, 36))
