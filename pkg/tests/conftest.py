import pytest

from ldplab.dirichlet import build_spectral_cache
from ldplab.lab import Lab
from ldplab.metric import distance_matrix
from ldplab.space import build_grid_2d, build_lattice_1d, build_two_state


@pytest.fixture(scope="session")
def two_state():
    return build_two_state(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def two_state_cache(two_state):
    return build_spectral_cache(two_state)


@pytest.fixture(scope="session")
def lattice64():
    return build_lattice_1d(64)


@pytest.fixture(scope="session")
def lattice64_table(lattice64):
    return distance_matrix(lattice64, progress_bar=False)


@pytest.fixture(scope="session")
def lattice64_cache(lattice64):
    return build_spectral_cache(lattice64)


@pytest.fixture(scope="session")
def lattice256():
    return build_lattice_1d(256)


@pytest.fixture(scope="session")
def lattice256_table(lattice256):
    return distance_matrix(lattice256, progress_bar=False)


@pytest.fixture(scope="session")
def lattice256_cache(lattice256):
    return build_spectral_cache(lattice256)


@pytest.fixture(scope="session")
def grid32():
    return build_grid_2d(32, 32)


@pytest.fixture(scope="session")
def grid32_table(grid32):
    return distance_matrix(grid32, progress_bar=False)


@pytest.fixture(scope="session")
def grid32_cache(grid32):
    return build_spectral_cache(grid32)


@pytest.fixture(scope="session")
def lab64(lattice64, lattice64_table, lattice64_cache):
    lab = Lab(lattice64)
    # share the session tables instead of rebuilding them
    lab.__dict__["table"] = lattice64_table
    lab.__dict__["cache"] = lattice64_cache
    return lab


@pytest.fixture(scope="session")
def lab256(lattice256, lattice256_table, lattice256_cache):
    lab = Lab(lattice256)
    lab.__dict__["table"] = lattice256_table
    lab.__dict__["cache"] = lattice256_cache
    return lab
