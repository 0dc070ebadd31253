import math

import numpy as np
import pytest

from ldplab.asymptotics import (
    fit_probe,
    gaussian_bound_threshold,
    validity_window,
    varadhan_indicator,
    varadhan_integrated,
    varadhan_kernel,
)
from ldplab.dirichlet import build_spectral_cache
from ldplab.metric import distance_matrix
from ldplab.space import Region, build_lattice_1d, region_from_spec
from ldplab.utils import fit_short_time_limit, time_grid

t_grid = time_grid(2e-3, 2e-2, 12)


def test_fit_recovers_gaussian_model():
    t = time_grid(1e-3, 1e-1, 10)
    y = -0.125 - 0.5 * t * np.log(t) + 0.3 * t
    limit, coef, residual = fit_short_time_limit(t, y)
    assert limit == pytest.approx(-0.125, abs=1e-10)
    assert coef[1] == pytest.approx(-0.5, abs=1e-8)
    assert residual < 1e-12


def test_validity_window(lattice256, two_state):
    t_min, t_max = validity_window(lattice256, 0.5)
    assert t_min == pytest.approx(0.5 / 256 / 1.6)
    assert math.isinf(t_max)
    assert validity_window(two_state, 1.0) is None


def test_kernel_limit(lattice256_cache, lattice256_table):
    probe = varadhan_kernel(lattice256_cache, 64, 192, t_grid, lattice256_table)
    assert probe.target == pytest.approx(-0.125)
    assert probe.limit == pytest.approx(-0.125, rel=0.05)
    assert probe.in_window.all()


def test_kernel_on_diagonal(lattice256_cache, lattice256_table):
    probe = varadhan_kernel(lattice256_cache, 128, 128, t_grid, lattice256_table)
    assert abs(probe.limit) < 1e-3


def test_two_state_is_outside_the_window(two_state_cache):
    probe = varadhan_kernel(two_state_cache, 0, 1, t_grid)
    assert "outside continuum validity window" in probe.flags
    # p_t(0, 1) ~ t: the jump chain does not follow -d^2/2
    assert abs(probe.limit) < 1e-3
    assert probe.deviation > 0.4


def test_indicator_limit(lattice256_cache, lattice256, lattice256_table):
    region = region_from_spec(lattice256, {"interval": [0.0, 0.1]})
    probe = varadhan_indicator(lattice256_cache, region, 128, t_grid, lattice256_table)
    assert probe.target == pytest.approx(-0.5 * (103 / 256) ** 2)
    assert probe.limit == pytest.approx(-0.08, rel=0.07)


def test_integrated_limit(lattice256_cache, lattice256, lattice256_table):
    a = region_from_spec(lattice256, {"interval": [0.0, 0.1]})
    b = region_from_spec(lattice256, {"interval": [0.5, 0.6]})
    probe = varadhan_integrated(lattice256_cache, a, b, t_grid, lattice256_table)
    assert probe.limit == pytest.approx(probe.target, rel=0.1)


def test_fit_drops_underflowed_points(lattice256):
    t = time_grid(2e-3, 2e-2, 6)
    log_q = -0.125 / t
    log_q[-1] = -math.inf
    probe = fit_probe(lattice256, "test", t, log_q, 0.5)
    assert "dropped:1" in probe.flags
    assert probe.limit == pytest.approx(-0.125, abs=1e-8)


def test_two_state_threshold(two_state_cache):
    result = gaussian_bound_threshold(two_state_cache, Region.of([0]), Region.of([1]))
    assert result.distance == pytest.approx(1.0)
    assert result.t_star == pytest.approx(0.372, abs=0.01)
    assert not result.flags


def test_fit_model_is_recorded(lattice256, two_state):
    t = time_grid(2e-3, 2e-2, 6)
    log_q = -0.125 / t
    assert fit_probe(lattice256, "test", t, log_q, 0.5).fit_model == "lattice"
    plain = fit_probe(lattice256, "test", t, log_q, 0.5, model="gaussian")
    assert plain.fit_model == "gaussian"
    assert len(plain.coefficients) == 3
    assert plain.limit == pytest.approx(-0.125, abs=1e-8)
    assert fit_probe(two_state, "test", t, log_q, 1.0).fit_model == "gaussian"
    with pytest.raises(ValueError):
        fit_probe(lattice256, "test", t, log_q, 0.5, model="cubic")
    with pytest.raises(ValueError):
        fit_short_time_limit(t, log_q * t, model="cubic")


def test_lattice_threshold_shrinks_with_the_mesh(lattice64_cache, lattice64_table, lattice256_cache, lattice256_table):
    lattice128 = build_lattice_1d(128)
    fixtures = [
        (lattice64_cache, lattice64_table),
        (build_spectral_cache(lattice128), distance_matrix(lattice128, progress_bar=False)),
        (lattice256_cache, lattice256_table),
    ]
    t_stars = []
    for cache, table in fixtures:
        a = region_from_spec(cache.space, {"interval": [0.0, 0.1]})
        b = region_from_spec(cache.space, {"interval": [0.5, 0.6]})
        result = gaussian_bound_threshold(cache, a, b, table=table)
        assert not result.flags
        t_stars.append(result.t_star)
    assert t_stars[0] >= t_stars[1] >= t_stars[2] > 0
