from ldplab.dirichlet import SpectralCache, SpectralError, build_spectral_cache, heat_kernel, semigroup_apply
from ldplab.lab import Lab
from ldplab.metric import DistanceBracket, distance_matrix, intrinsic_distance
from ldplab.space import Region, StateSpace, build_explicit, build_grid_2d, build_lattice_1d, build_two_state

__all__ = [
    "DistanceBracket",
    "Lab",
    "Region",
    "SpectralCache",
    "SpectralError",
    "StateSpace",
    "build_explicit",
    "build_grid_2d",
    "build_lattice_1d",
    "build_spectral_cache",
    "build_two_state",
    "distance_matrix",
    "heat_kernel",
    "intrinsic_distance",
    "semigroup_apply",
]
