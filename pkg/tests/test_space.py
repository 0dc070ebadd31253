import json

import numpy as np
import pytest
import torch

from ldplab.config import SpaceSpec
from ldplab.dirichlet import generator_apply
from ldplab.space import (
    Region,
    build_explicit,
    build_lattice_1d,
    build_two_state,
    region_from_spec,
    save_space,
    validate_space,
)


def test_two_state_generator(two_state):
    assert two_state.n == 2
    assert torch.allclose(two_state.generator, torch.tensor([[-1.0, 1.0], [1.0, -1.0]], dtype=torch.float64))
    assert validate_space(two_state).passed


@pytest.mark.parametrize("cells", [2, 16, 64])
def test_lattice_measure_and_conductance(cells):
    space = build_lattice_1d(cells)
    h = 1.0 / cells
    assert space.total_measure == pytest.approx(1.0, rel=1e-12)
    assert space.conductances[0, 1].item() == pytest.approx(1 / (2 * h))
    assert space.measure[0].item() == pytest.approx(h / 2)
    assert space.mesh == pytest.approx(h)
    assert validate_space(space).passed


def test_lattice_generator_reproduces_half_laplacian():
    space = build_lattice_1d(2)
    u = space.positions[:, 0] ** 2
    # (1/2) d^2/dx^2 x^2 = 1
    assert generator_apply(space, u)[1].item() == pytest.approx(1.0)


def test_grid_volume(grid32):
    assert grid32.n == 33 * 33
    assert grid32.total_measure == pytest.approx(1.0, rel=1e-12)
    assert grid32.nearest_vertex([0.5, 0.5]) == 16 * 33 + 16
    assert validate_space(grid32).passed


def test_two_state_rejects_nonpositive():
    with pytest.raises(ValueError):
        build_two_state(1.0, 0.0, 1.0)


def test_validate_reports_asymmetry_and_components():
    w = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    report = validate_space(build_explicit([1.0, 1.0, 1.0], w))
    assert not report.passed
    assert report.symmetry_violations == [(0, 1)]
    assert report.components == 2
    assert any("disconnected" in issue for issue in report.issues)


def test_regions(lattice64):
    interval = region_from_spec(lattice64, {"interval": [0.2, 0.8]})
    assert interval.vertices == tuple(range(13, 52))
    assert region_from_spec(lattice64, [3, 1, 3]).vertices == (1, 3)
    assert region_from_spec(lattice64, {"points": [0.5]}).vertices == (32,)
    assert len(region_from_spec(lattice64, "all")) == 65
    with pytest.raises(ValueError):
        region_from_spec(lattice64, [70])
    with pytest.raises(ValueError):
        region_from_spec(lattice64, {"box": [[0, 1], [0, 1]]})


def test_region_measure(lattice64):
    region = Region.of([0, 1, 2])
    assert region.measure(lattice64) == pytest.approx(1 / 128 + 2 / 64)
    assert Region.of([]).measure(lattice64) == 0.0


def test_saved_space_reloads(tmp_path, lattice64):
    path = tmp_path / "space.json"
    save_space(lattice64, path)
    spec = json.loads(path.read_text())
    assert spec["kind"] == "explicit"
    space = SpaceSpec.load(path).build()
    assert torch.equal(space.conductances, lattice64.conductances)
    assert space.mesh == lattice64.mesh
    assert validate_space(space).passed
