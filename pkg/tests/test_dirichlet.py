import math

import numpy as np
import pytest
import torch

from ldplab.dirichlet import (
    SpectralError,
    build_spectral_cache,
    chapman_kolmogorov_residual,
    dirichlet_energy,
    energy_density,
    generator_apply,
    heat_kernel,
    log_heat_kernel,
    log_semigroup_apply,
    mass_conservation_defect,
    semigroup_apply,
)
from ldplab.space import build_explicit

# kernel checks
ck_tol = 1e-8
times = [1e-3, 1e-2, 0.1, 1.0]


def test_two_state_spectrum(two_state_cache):
    assert np.allclose(two_state_cache.eigenvalues.numpy(), [0.0, 2.0], atol=1e-12)


def test_two_state_kernel(two_state_cache):
    kernel = heat_kernel(two_state_cache, 0.5, 0, 1)
    assert kernel.value == pytest.approx(0.5 * (1 - math.exp(-1)), rel=1e-10)
    assert kernel.log_value == pytest.approx(math.log(kernel.value))
    assert heat_kernel(two_state_cache, 0.5, 0, 0).value == pytest.approx(0.5 * (1 + math.exp(-1)), rel=1e-10)


def test_kernel_symmetry(lattice64_cache):
    a = heat_kernel(lattice64_cache, 0.01, 10, 20).value
    b = heat_kernel(lattice64_cache, 0.01, 20, 10).value
    assert a == pytest.approx(b, rel=1e-10)


caches = ["two_state_cache", "lattice256_cache", "grid32_cache"]


@pytest.mark.parametrize("name", caches)
@pytest.mark.parametrize("t", times)
def test_mass_conservation(request, name, t):
    assert mass_conservation_defect(request.getfixturevalue(name), t) < ck_tol


@pytest.mark.parametrize("name", caches)
@pytest.mark.parametrize("t", times)
def test_chapman_kolmogorov(request, name, t):
    assert chapman_kolmogorov_residual(request.getfixturevalue(name), t, 0.4 * t) < ck_tol


def test_first_eigenvalue(lattice64_cache):
    # Neumann interval: lambda_1 = pi^2 / 2 in the continuum
    assert lattice64_cache.eigenvalues[1].item() == pytest.approx(math.pi**2 / 2, rel=1e-3)


def test_energy_of_identity(lattice64):
    u = lattice64.positions[:, 0]
    assert dirichlet_energy(lattice64, u) == pytest.approx(0.5, rel=1e-12)
    assert torch.allclose(energy_density(lattice64, u), torch.ones(65, dtype=torch.float64))


def test_energy_forms_agree(lattice64):
    rng = np.random.default_rng(0)
    m = lattice64.measure
    for _ in range(100):
        u = torch.as_tensor(rng.standard_normal(65))
        energy = dirichlet_energy(lattice64, u)
        assert energy > 0
        assert energy == pytest.approx(-(u * generator_apply(lattice64, u) * m).sum().item(), rel=1e-10)
        assert energy == pytest.approx(0.5 * (energy_density(lattice64, u) * m).sum().item(), rel=1e-10)


def test_semigroup_contracts(lattice64_cache):
    f = torch.as_tensor(np.random.default_rng(1).standard_normal(65))
    m = lattice64_cache.space.measure
    norms = [(semigroup_apply(lattice64_cache, t, f) ** 2 * m).sum().item() for t in [0.0, *times]]
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < norms[0]


def test_semigroup_of_constant(lattice64_cache):
    ones = torch.ones(65, dtype=torch.float64)
    assert torch.allclose(semigroup_apply(lattice64_cache, 0.1, ones), ones, atol=1e-10)
    assert torch.equal(semigroup_apply(lattice64_cache, 0.0, ones), ones)


def test_log_space_agrees_with_spectral(lattice64_cache):
    log_f = torch.full((65,), -math.inf, dtype=torch.float64)
    log_f[20:30] = 0.0
    spectral, _ = log_semigroup_apply(lattice64_cache, 0.05, log_f, method="spectral")
    uniform, _ = log_semigroup_apply(lattice64_cache, 0.05, log_f, method="uniformization")
    assert torch.allclose(spectral, uniform, rtol=1e-8)


def test_deep_tail_switches_to_log_space(lattice256_cache):
    kernel = heat_kernel(lattice256_cache, 1e-3, 64, 192)
    assert "log-space" in kernel.flags
    assert math.isfinite(kernel.log_value)
    assert kernel.log_value < -50
    log_value, _ = log_heat_kernel(lattice256_cache, 1e-3, 64, 192)
    assert log_value == pytest.approx(kernel.log_value)


def test_zero_measure_is_rejected():
    space = build_explicit([1.0, 0.0], [[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SpectralError):
        build_spectral_cache(space)


def test_rejects_negative_time(two_state_cache):
    with pytest.raises(ValueError):
        heat_kernel(two_state_cache, -1.0, 0, 1)
