import math

import numpy as np
import pytest

from ldplab.energy import (
    Curve,
    EuclideanContext,
    GraphContext,
    ac2_energy,
    build_curve,
    chain_energy,
    chord_length,
    discrete_energy,
    energy_sup,
    identification_gap,
    metric_derivative,
    project_chain,
)
from ldplab.fdd import TimePartition

plane = EuclideanContext(2)
line = EuclideanContext(1)


@pytest.fixture(scope="module")
def diagonal():
    return build_curve(plane, {"type": "line", "start": [0, 0], "end": [1, 1]})


@pytest.fixture(scope="module")
def half_circle():
    return build_curve(plane, {"type": "circle"})


@pytest.fixture(scope="module")
def graph_line(lattice256, lattice256_table):
    return build_curve(GraphContext(lattice256, lattice256_table), {"type": "line", "start": 0.25, "end": 0.75})


def test_curve_validation():
    with pytest.raises(ValueError):
        Curve(line, np.array([0.0, 0.5]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        Curve(line, np.array([0.0, 1.0]), np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        build_curve(line, {"type": "spiral"})


def test_discrete_energy_of_a_line(diagonal):
    partition = TimePartition.uniform(8)
    assert discrete_energy(diagonal, partition) == pytest.approx(1.0)
    assert chord_length(diagonal, partition) == pytest.approx(math.sqrt(2))


def test_chain_energy_and_projection():
    fine = TimePartition.uniform(4)
    coarse = TimePartition.uniform(2)
    chain = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    assert chain_energy(line, chain, fine) == pytest.approx(0.5 * 4 * 1 / 0.25)
    projected = project_chain(chain, fine, coarse)
    assert projected[:, 0].tolist() == [0.0, 2.0, 4.0]
    # refining never lowers the discrete energy
    assert chain_energy(line, projected, coarse) <= chain_energy(line, chain, fine)
    with pytest.raises(ValueError):
        project_chain(chain, coarse, fine)


@pytest.mark.parametrize(
    "descriptor,context,expected",
    [
        ({"type": "line", "start": [0, 0], "end": [1, 1]}, plane, 1.0),
        ({"type": "circle"}, plane, math.pi**2 / 2),
        ({"type": "poly", "coefficients": [[0, 0, 1]]}, line, 2 / 3),
    ],
)
def test_energy_identification(descriptor, context, expected):
    curve = build_curve(context, descriptor)
    sup = energy_sup(curve)
    assert sup.converged
    assert sup.value == pytest.approx(expected, rel=1e-3)
    assert ac2_energy(curve).value == pytest.approx(expected, rel=1e-3)
    gap = identification_gap(curve)
    assert abs(gap.gap) <= 1e-3 * expected


def test_metric_derivative(half_circle, diagonal):
    assert metric_derivative(half_circle, 0.5).value == pytest.approx(math.pi, rel=1e-4)
    assert metric_derivative(diagonal, 0.3).value == pytest.approx(math.sqrt(2), rel=1e-6)
    with pytest.raises(ValueError):
        metric_derivative(diagonal, 1.0)
    with pytest.raises(ValueError):
        metric_derivative(diagonal, 0.5, [0.01, 0.1])


def test_jump_diverges():
    curve = build_curve(line, {"type": "jump", "start": 0.0, "end": 1.0, "at": 0.5})
    sup = energy_sup(curve)
    assert not sup.converged
    assert "lower bound only" in sup.flags
    assert ac2_energy(curve, sup=sup).value == math.inf
    gap = identification_gap(curve)
    assert math.isnan(gap.gap)
    assert "H infinite" in gap.flags
    assert "H~ infinite" in gap.flags


def test_graph_curve(graph_line):
    assert graph_line(np.array([0.0, 0.5, 1.0])).tolist() == [64, 128, 192]
    sup = energy_sup(graph_line)
    assert sup.value == pytest.approx(0.125, rel=1e-6)
    assert any(f.startswith("level capped") for f in sup.flags)
    assert ac2_energy(graph_line).value == pytest.approx(0.125, rel=0.05)


def test_graph_curve_from_vertices(lattice64, lattice64_table):
    context = GraphContext(lattice64, lattice64_table)
    curve = build_curve(context, {"type": "samples", "t": [0.0, 0.5, 1.0], "vertices": [0, 32, 32]})
    assert curve.jump_times()[0].tolist() == [0.25]
    assert discrete_energy(curve, TimePartition.uniform(2)) == pytest.approx(0.5 * 0.5**2 / 0.5)


# Settings
seed = 0
npairs = 100


def random_refinements(curves):
    """`npairs` (curve, coarse, fine) triples with fine a refinement of coarse."""
    rng = np.random.default_rng(seed)
    for k in range(npairs):
        coarse = np.unique(rng.uniform(0.0, 1.0, rng.integers(1, 6)))
        fine = np.union1d(coarse, rng.uniform(0.0, 1.0, rng.integers(1, 6)))
        yield (
            curves[k % len(curves)],
            TimePartition((0.0, *coarse.tolist(), 1.0)),
            TimePartition((0.0, *fine.tolist(), 1.0)),
        )


@pytest.fixture(scope="module")
def curves(diagonal, half_circle, graph_line):
    return [diagonal, half_circle, build_curve(line, {"type": "poly", "coefficients": [[0, 0, 1]]}), graph_line]


def test_refinement_never_lowers_the_energy(curves):
    for curve, coarse, fine in random_refinements(curves):
        assert fine.refines(coarse)
        h_fine = discrete_energy(curve, fine)
        assert discrete_energy(curve, coarse) <= h_fine * (1 + 1e-7) + 1e-12


def test_projection_is_consistent(curves):
    for curve, coarse, fine in random_refinements(curves):
        chain = curve(np.asarray(fine.times))
        projected = project_chain(chain, fine, coarse)
        assert np.array_equal(projected, curve(np.asarray(coarse.times)))
        assert chain_energy(curve.context, projected, coarse) == pytest.approx(discrete_energy(curve, coarse))


def test_chord_bound(curves):
    for curve, coarse, fine in random_refinements(curves):
        for partition in (coarse, fine):
            assert chord_length(curve, partition) <= math.sqrt(2 * discrete_energy(curve, partition)) * (1 + 1e-12)
