import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ldplab.dirichlet import SpectralCache, log_heat_kernel, log_semigroup_apply
from ldplab.metric import DistanceTable, distance_matrix, set_distance, set_pair_distance
from ldplab.space import Region, StateSpace, check_region, check_vertex
from ldplab.utils import DTYPE, FIT_MODELS, evaluate_fit, fit_short_time_limit, logsumexp, time_grid

logger = logging.getLogger(__name__)

# below MESH_FACTOR * h^2 / sigma^2 the chain has not entered the diffusive regime
MESH_FACTOR = 25.0
# d^2 / (2t) <= HOP_FACTOR * d / h keeps the Gaussian tail within reach of the Poisson hop count
HOP_FACTOR = 0.8


@dataclass
class AsymptoticProbe:
    """Short-time probe of t log q(t) against its Gaussian target -d^2/2."""

    quantity: str
    t: np.ndarray
    log_q: np.ndarray
    values: np.ndarray
    distance: float
    target: float
    limit: float = math.nan
    coefficients: np.ndarray | None = None
    residual: float = math.nan
    deviation: float = math.nan
    window: tuple[float, float] | None = None
    in_window: np.ndarray | None = None
    model_fit: np.ndarray | None = None
    fit_model: str = "gaussian"
    flags: list[str] = field(default_factory=list)


def validity_window(space: StateSpace, distance: float, min_step: float = 1.0) -> tuple[float, float] | None:
    """Time range where a lattice is trusted to follow its continuum limit; None for spaces without a mesh.

    `min_step` is the shortest fraction of the horizon spent on one transition (1 for a single kernel).
    """
    if not space.is_continuum or space.mesh is None:
        return None
    h = space.mesh / space.sigma
    t_min = max(MESH_FACTOR * h * h / min_step, distance * h / (2 * HOP_FACTOR))
    return t_min, math.inf


def _check_grid(t_grid: Sequence[float]) -> np.ndarray:
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("t_grid needs at least two times")
    if np.any(t <= 0):
        raise ValueError("t_grid must be positive")
    t = np.sort(t)[::-1]
    if np.any(np.diff(t) == 0):
        raise ValueError("t_grid has repeated times")
    return t.copy()


def fit_probe(
    space: StateSpace,
    quantity: str,
    t: np.ndarray,
    log_q: np.ndarray,
    distance: float,
    min_step: float = 1.0,
    model: str | None = None,
) -> AsymptoticProbe:
    """Fit L + a t log t + b t to t log q over the in-window grid points.

    `model` names the fit (see FIT_MODELS); by default spaces with a validity window and a positive distance get the
    "lattice" model with its extra c / t^2 column and everything else the plain "gaussian" one. The choice is kept
    on the probe as `fit_model`.
    """
    if model is not None and model not in FIT_MODELS:
        raise ValueError(f"unknown fit model {model!r}, expected one of {sorted(FIT_MODELS)}")
    target = -distance * distance / 2 if math.isfinite(distance) else -math.inf
    values = t * log_q
    probe = AsymptoticProbe(quantity, t, log_q, values, distance, target)

    finite = np.isfinite(values)
    if not finite.all():
        dropped = int((~finite).sum())
        logger.warning("%s: %d grid point(s) dropped after underflow", quantity, dropped)
        probe.flags.append(f"dropped:{dropped}")

    probe.window = validity_window(space, distance if math.isfinite(distance) else 0.0, min_step)
    if probe.window is None:
        probe.in_window = np.zeros_like(t, dtype=bool)
        probe.flags.append("outside continuum validity window")
        use = finite
    else:
        probe.in_window = t >= probe.window[0]
        use = finite & probe.in_window
        if not probe.in_window.all():
            probe.flags.append(f"{int(len(t) - probe.in_window.sum())} grid point(s) below the validity window")

    if model is None:
        model = "lattice" if probe.window is not None and distance > 0 else "gaussian"
    probe.fit_model = model
    needed = 4 if FIT_MODELS[model] else 3
    if use.sum() < needed:
        if probe.window is not None and finite.sum() >= needed:
            probe.flags.append("fit uses points outside the validity window")
            use = finite
        else:
            probe.flags.append("too few points to fit")
            return probe

    limit, coef, residual = fit_short_time_limit(t[use], values[use], model)
    probe.limit = limit
    probe.coefficients = coef
    probe.residual = residual
    probe.model_fit = evaluate_fit(t, coef)
    if target == 0 or not math.isfinite(target):
        probe.deviation = abs(limit)
    else:
        probe.deviation = abs(limit - target) / abs(target)
    return probe


def _table(space: StateSpace, table: DistanceTable | None) -> DistanceTable:
    return distance_matrix(space, progress_bar=False) if table is None else table


def varadhan_kernel(
    cache: SpectralCache,
    x: int,
    y: int,
    t_grid: Sequence[float],
    table: DistanceTable | None = None,
) -> AsymptoticProbe:
    """t log p_t(x, y) against -d(x, y)^2 / 2."""
    space = cache.space
    x, y = check_vertex(space, x, "x"), check_vertex(space, y, "y")
    t = _check_grid(t_grid)
    distance = _table(space, table).lower[x, y].item()
    log_p = []
    flags = set()
    for s in t:
        value, kflags = log_heat_kernel(cache, float(s), x, y)
        log_p.append(value)
        flags.update(kflags)
    probe = fit_probe(space, f"p_t({x},{y})", t, np.asarray(log_p), distance)
    probe.flags.extend(sorted(flags))
    return probe


def _log_indicator(space: StateSpace, region: Region) -> torch.Tensor:
    out = torch.full((space.n,), -math.inf, dtype=DTYPE)
    out[region.index()] = 0.0
    return out


def varadhan_indicator(
    cache: SpectralCache,
    region: Region,
    x: int,
    t_grid: Sequence[float],
    table: DistanceTable | None = None,
) -> AsymptoticProbe:
    """t log T_t 1_A(x) against -d(A, x)^2 / 2."""
    space = cache.space
    check_region(space, region, "A")
    x = check_vertex(space, x)
    t = _check_grid(t_grid)
    distance = set_distance(space, region, x, _table(space, table))
    log_f = _log_indicator(space, region)
    log_q = []
    flags = set()
    for s in t:
        values, uflags = log_semigroup_apply(cache, float(s), log_f)
        log_q.append(values[x].item())
        flags.update(uflags)
    probe = fit_probe(space, f"T_t1_A({x})", t, np.asarray(log_q), distance)
    probe.flags.extend(sorted(flags))
    return probe


def log_integrated(cache: SpectralCache, a: Region, b: Region, t: float) -> tuple[float, tuple[str, ...]]:
    """log (1_A, T_t 1_B) in L^2(m)."""
    space = cache.space
    values, flags = log_semigroup_apply(cache, t, _log_indicator(space, b))
    idx = a.index()
    return logsumexp(values[idx] + torch.log(space.measure[idx])), flags


def varadhan_integrated(
    cache: SpectralCache,
    a: Region,
    b: Region,
    t_grid: Sequence[float],
    table: DistanceTable | None = None,
) -> AsymptoticProbe:
    """t log (1_A, T_t 1_B) against -d(A, B)^2 / 2."""
    space = cache.space
    check_region(space, a, "A")
    check_region(space, b, "B")
    t = _check_grid(t_grid)
    distance = set_pair_distance(space, a, b, _table(space, table))
    log_q = []
    flags = set()
    for s in t:
        value, uflags = log_integrated(cache, a, b, float(s))
        log_q.append(value)
        flags.update(uflags)
    probe = fit_probe(space, "(1_A, T_t 1_B)", t, np.asarray(log_q), distance)
    probe.flags.extend(sorted(flags))
    return probe


@dataclass
class GaussianThreshold:
    """Smallest t* above which (1_A, T_t 1_B) <= sqrt(m(A) m(B)) exp(-d(A,B)^2 / 2t) holds on the whole grid."""

    t_star: float
    distance: float
    t: np.ndarray
    log_ratio: np.ndarray
    flags: list[str] = field(default_factory=list)


def gaussian_bound_threshold(
    cache: SpectralCache,
    a: Region,
    b: Region,
    t_min: float = 1e-4,
    t_max: float = 10.0,
    points: int = 60,
    table: DistanceTable | None = None,
    bisection_steps: int = 40,
) -> GaussianThreshold:
    space = cache.space
    check_region(space, a, "A")
    check_region(space, b, "B")
    distance = set_pair_distance(space, a, b, _table(space, table))
    log_scale = 0.5 * (math.log(a.measure(space)) + math.log(b.measure(space)))

    def log_ratio(t: float) -> float:
        lhs, _ = log_integrated(cache, a, b, t)
        return lhs - (log_scale - distance * distance / (2 * t))

    t = time_grid(t_min, t_max, points)[::-1].copy()
    ratios = np.array([log_ratio(float(s)) for s in t])
    violated = np.nonzero(ratios > 1e-12)[0]
    result = GaussianThreshold(float(t[0]), distance, t, ratios)
    if len(violated) == 0:
        result.flags.append("no violation found")
        return result
    last = violated[-1]
    if last == len(t) - 1:
        result.t_star = float(t[-1])
        result.flags.append("violated at the grid maximum")
        return result

    lo, hi = float(t[last]), float(t[last + 1])
    for _ in range(bisection_steps):
        mid = math.sqrt(lo * hi)
        if log_ratio(mid) > 1e-12:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * hi:
            break
    result.t_star = hi
    return result
