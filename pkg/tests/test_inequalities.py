import math

import pytest

from ldplab.inequalities import (
    doubling_exponent,
    gaussian_lower_constant,
    harnack_constant,
    poincare_constant,
    poincare_energy,
    poincare_variance,
    volume_scaling_curve,
)
from ldplab.space import Region, region_from_spec

# Neumann interval of length 2r: kappa = 4 / pi^2
kappa_1d = 4 / math.pi**2


def test_doubling_1d(lattice256, lattice256_table):
    region = region_from_spec(lattice256, {"interval": [0.25, 0.75]})
    report = doubling_exponent(lattice256, region, [0.02, 0.05], table=lattice256_table)
    assert 0.9 <= report.best <= 1.2
    assert report.kind == "VD"
    assert all(s["vol_2r"] >= s["vol_r"] for s in report.samples)


def test_doubling_2d(grid32, grid32_table):
    region = region_from_spec(grid32, {"box": [[0.25, 0.75], [0.25, 0.75]]})
    center = grid32.nearest_vertex([0.5, 0.5])
    report = doubling_exponent(grid32, region, [0.05, 0.1], centers=[center], table=grid32_table)
    assert 1.8 <= report.best <= 2.3


def test_doubling_needs_admissible_balls(lattice64, lattice64_table):
    region = region_from_spec(lattice64, [30, 31, 32])
    with pytest.raises(ValueError):
        doubling_exponent(lattice64, region, [0.1], table=lattice64_table)


@pytest.mark.parametrize("r", [0.05, 0.1])
def test_poincare_constant(lattice256, lattice256_table, r):
    result = poincare_constant(lattice256, 128, r, lattice256_table)
    assert result.kappa == pytest.approx(kappa_1d, rel=0.1)
    # the eigenfunction attains the constant
    assert poincare_energy(lattice256, result) == pytest.approx(
        result.eigenvalue * poincare_variance(lattice256, result), rel=1e-6
    )


def test_poincare_is_scale_stable(lattice256, lattice256_table):
    coarse = poincare_constant(lattice256, 128, 0.1, lattice256_table).kappa
    fine = poincare_constant(lattice256, 128, 0.05, lattice256_table).kappa
    assert 0.9 <= fine / coarse <= 1.1


def test_poincare_small_ball_is_undefined(lattice64, lattice64_table):
    result = poincare_constant(lattice64, 32, 1e-3, lattice64_table)
    assert math.isnan(result.kappa)
    assert result.flags


def test_harnack(lattice256_cache, lattice256, lattice256_table):
    region = region_from_spec(lattice256, {"interval": [0.2, 0.8]})
    ratios = []
    for r in [0.05, 0.1]:
        report = harnack_constant(lattice256_cache, region, [r], centers=[128], table=lattice256_table)
        assert report.best >= 1.0
        assert math.isfinite(report.best)
        ratios.append(report.best)
    assert 0.25 <= ratios[0] / ratios[1] <= 4


def test_harnack_two_state(two_state_cache):
    r = 0.25
    report = harnack_constant(two_state_cache, Region.of([0, 1]), [r], centers=[0])
    # p_s(0, 0) = (1 + e^{-2s}) / 2 decreases, so the sup sits at the first early sample and the inf at t = 8r^2
    first = 8 * r * r - 3 * r * r + r * r / report.parameters["time_samples"]
    expected = (1 + math.exp(-2 * first)) / (1 + math.exp(-16 * r * r))
    assert report.best == pytest.approx(expected, rel=1e-9)
    assert report.best > 1.0


def test_volume_scaling(lattice256, lattice256_table):
    report = volume_scaling_curve(lattice256, 128, 1.0, [0.1, 0.01, 0.001], table=lattice256_table)
    sample = next(s for s in report.samples if s["t"] == 0.01)
    # B_0.1 holds 51 vertices of mass 1/256
    assert sample["t_log_vol"] == pytest.approx(0.01 * math.log(51 / 256), rel=1e-9)
    assert all(s["holds"] for s in report.samples)
    assert not any(f.startswith("bound fails") for f in report.flags)


def test_gaussian_lower(lattice256_cache, lattice256_table):
    report = gaussian_lower_constant(lattice256_cache, [(128, 115), (128, 141)], [1e-3, 3e-3, 1e-2], lattice256_table)
    assert report.best >= 1.0
    assert math.isfinite(report.best)
    assert len(report.samples) == 6
