import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial

from ldplab.fdd import TimePartition
from ldplab.metric import DistanceTable, distance_matrix
from ldplab.space import StateSpace

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 2**12
DEFAULT_H_GRID = tuple(2.0**-k for k in range(4, 11))
DEFAULT_TOL = 1e-4
DEFAULT_MAX_LEVEL = 12
RANDOM_PARTITIONS = 16
# ac2_energy gives up when more than this fraction of nodes has no speed
MAX_FAILED_NODES = 0.1


class MetricContext:
    """Where a curve lives: how its samples are interpolated and how far apart two points are."""

    def prepare(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def interpolate(self, times: np.ndarray, points: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def distance(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError()


class EuclideanContext(MetricContext):
    """R^k with dense samples joined by straight segments."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim

    def prepare(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[1] != self.dim:
            raise ValueError(f"points have dimension {points.shape[1]}, context has {self.dim}")
        return points

    def interpolate(self, times, points, t):
        t = np.asarray(t, dtype=np.float64)
        return np.stack([np.interp(t, times, points[:, k]) for k in range(self.dim)], axis=-1)

    def distance(self, p, q):
        return np.linalg.norm(np.asarray(p) - np.asarray(q), axis=-1)


class GraphContext(MetricContext):
    """A state space under its intrinsic metric (certified lower bound); samples are vertices, held until the next."""

    def __init__(self, space: StateSpace, table: DistanceTable | None = None):
        self.space = space
        self.table = distance_matrix(space, progress_bar=False) if table is None else table
        self._lower = self.table.lower.cpu().numpy()

    def prepare(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        if points.ndim == 1 and np.issubdtype(points.dtype, np.integer):
            vertices = points.astype(np.int64)
        else:
            coords = points[:, None] if points.ndim == 1 else points
            vertices = np.array([self.space.nearest_vertex(p) for p in coords], dtype=np.int64)
        if vertices.size and (vertices.min() < 0 or vertices.max() >= self.space.n):
            raise ValueError(f"curve leaves the vertex range 0..{self.space.n - 1}")
        return vertices

    def interpolate(self, times, points, t):
        t = np.asarray(t, dtype=np.float64)
        right = np.clip(np.searchsorted(times, t), 1, len(times) - 1)
        left = right - 1
        nearest = np.where(t - times[left] <= times[right] - t, left, right)
        return points[nearest]

    def distance(self, p, q):
        return self._lower[np.asarray(p), np.asarray(q)]


@dataclass(frozen=True, eq=False)
class Curve:
    """A map [0, 1] -> context given by samples at increasing times from 0 to 1.

    `smooth` marks curves built from a closed-form descriptor that is known to be absolutely continuous.
    """

    context: MetricContext
    times: np.ndarray
    points: np.ndarray
    description: str = ""
    smooth: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("a curve needs at least two samples")
        if times[0] != 0.0 or times[-1] != 1.0 or np.any(np.diff(times) <= 0):
            raise ValueError("sample times must increase from 0 to 1")
        points = self.context.prepare(self.points)
        if len(points) != len(times):
            raise ValueError(f"{len(times)} sample times but {len(points)} points")
        steps = self.context.distance(points[:-1], points[1:])
        if not np.all(np.isfinite(steps)):
            raise ValueError("consecutive samples are at infinite distance")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)

    def __call__(self, t) -> np.ndarray:
        return self.context.interpolate(self.times, self.points, t)

    @property
    def resolution(self) -> int:
        return len(self.times) - 1

    @property
    def spacing(self) -> float:
        """Coarsest time step the evaluator resolves."""
        if isinstance(self.context, GraphContext):
            jumps = self.jump_times()[0]
            if len(jumps) == 0:
                return 1.0
            return float(np.diff(np.concatenate([[0.0], jumps, [1.0]])).max())
        return float(np.diff(self.times).max())

    def jump_times(self) -> tuple[np.ndarray, np.ndarray]:
        """Times where the held sample changes (midway between samples) and the sample held afterwards."""
        changed = np.nonzero(self.context.distance(self.points[:-1], self.points[1:]) > 0)[0]
        return (self.times[changed] + self.times[changed + 1]) / 2, self.points[changed + 1]


def curve_from_function(
    context: MetricContext,
    fn: Callable[[np.ndarray], np.ndarray],
    resolution: int = DEFAULT_RESOLUTION,
    description: str = "",
    smooth: bool = False,
) -> Curve:
    if resolution < 1:
        raise ValueError(f"resolution must be positive, got {resolution}")
    times = np.linspace(0.0, 1.0, resolution + 1)
    return Curve(context, times, fn(times), description, smooth)


def _as_point(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=np.float64))


def _line(start, end, **_) -> tuple[Callable, bool]:
    a, b = _as_point(start), _as_point(end)
    return (lambda t: a + np.asarray(t)[:, None] * (b - a)), True


def _circle(center=(0.0, 0.0), radius=1.0, angles=(0.0, math.pi), **_) -> tuple[Callable, bool]:
    c = _as_point(center)
    lo, hi = angles

    def fn(t):
        theta = lo + np.asarray(t) * (hi - lo)
        return c + radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    return fn, True


def _poly(coefficients, **_) -> tuple[Callable, bool]:
    """One coefficient list per coordinate, lowest degree first."""
    coefs = [np.asarray(c, dtype=np.float64) for c in coefficients]
    return (lambda t: np.stack([polynomial.polyval(np.asarray(t), c) for c in coefs], axis=-1)), True


def _jump(start, end, at=0.5, **_) -> tuple[Callable, bool]:
    a, b = _as_point(start), _as_point(end)
    return (lambda t: np.where((np.asarray(t) >= at)[:, None], b, a)), False


_curve_builders = {
    "line": _line,
    "circle": _circle,
    "poly": _poly,
    "jump": _jump,
}


def build_curve(context: MetricContext, descriptor: dict, resolution: int = DEFAULT_RESOLUTION) -> Curve:
    """Curve from a descriptor {"type": line | circle | poly | jump | samples, ...}.

    Sample tables give {"t": [...], "points": [...]} or, in graph contexts, {"t": [...], "vertices": [...]}.
    """
    descriptor = dict(descriptor)
    kind = descriptor.pop("type", None)
    description = descriptor.pop("description", kind or "")
    if kind == "samples":
        points = descriptor.get("vertices")
        points = np.asarray(points, dtype=np.int64) if points is not None else descriptor["points"]
        return Curve(context, np.asarray(descriptor["t"], dtype=np.float64), points, description)
    if kind not in _curve_builders:
        raise ValueError(f"unknown curve type {kind!r}, expected one of {sorted(_curve_builders) + ['samples']}")
    fn, smooth = _curve_builders[kind](**descriptor)
    return curve_from_function(context, fn, resolution, description, smooth)


def chain_energy(context: MetricContext, chain, partition: TimePartition) -> float:
    """H_Delta of a point chain: 1/2 sum d(x_i, x_{i+1})^2 / (t_{i+1} - t_i)."""
    if len(chain) != len(partition.times):
        raise ValueError(f"chain has {len(chain)} points for {len(partition.times)} times")
    if partition.intervals == 0:
        return 0.0
    d = context.distance(chain[:-1], chain[1:])
    return float(0.5 * np.sum(d**2 / np.asarray(partition.steps())))


def discrete_energy(curve: Curve, partition: TimePartition) -> float:
    return chain_energy(curve.context, curve(np.asarray(partition.times)), partition)


def chord_length(curve: Curve, partition: TimePartition) -> float:
    points = curve(np.asarray(partition.times))
    return float(np.sum(curve.context.distance(points[:-1], points[1:])))


def project_chain(chain, fine: TimePartition, coarse: TimePartition):
    """Restrict a chain indexed by `fine` to the times of `coarse`."""
    if not fine.refines(coarse):
        raise ValueError("the coarse partition is not contained in the fine one")
    position = {t: i for i, t in enumerate(fine.times)}
    return chain[[position[t] for t in coarse.times]]


@dataclass
class EnergyEstimate:
    value: float
    level: int
    increment: float
    converged: bool
    values: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def _random_partition(rng: np.random.Generator, intervals: int) -> TimePartition:
    while True:
        inner = np.sort(rng.uniform(0.0, 1.0, intervals - 1))
        if intervals == 1 or (np.all(np.diff(inner) > 0) and inner[0] > 0 and inner[-1] < 1):
            return TimePartition((0.0, *inner.tolist(), 1.0))


def energy_sup(
    curve: Curve,
    tol: float = DEFAULT_TOL,
    max_level: int = DEFAULT_MAX_LEVEL,
    random_partitions: int = RANDOM_PARTITIONS,
    seed: int = 0,
) -> EnergyEstimate:
    """H = sup over partitions of H_Delta, approached along the dyadic partitions of 2^k intervals.

    Stops once a refinement adds less than `tol`. Graph curves stop at the level their samples resolve.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_level < 1:
        raise ValueError(f"max_level must be at least 1, got {max_level}")
    flags = []
    graph = isinstance(curve.context, GraphContext)
    if graph:
        cap = max(1, int(math.floor(-math.log2(curve.spacing))))
        if cap < max_level:
            max_level = cap
            flags.append(f"level capped at {cap} by the curve resolution")

    values = [discrete_energy(curve, TimePartition.dyadic(0))]
    level, increment, converged = 0, math.inf, False
    for level in range(1, max_level + 1):
        values.append(discrete_energy(curve, TimePartition.dyadic(level)))
        increment = values[-1] - values[-2]
        if increment < tol:
            converged = True
            break

    value = values[-1]
    if random_partitions and not graph:
        rng = np.random.default_rng(seed)
        probes = [discrete_energy(curve, _random_partition(rng, 2**level)) for _ in range(random_partitions)]
        value = max(value, *probes)
    if not converged:
        logger.warning("energy of %s did not converge by level %d (increment %.3g)", curve.description, level, increment)
        flags.append("lower bound only")
    return EnergyEstimate(value, level, increment, converged, values, flags)


@dataclass
class SpeedEstimate:
    t: float
    value: float
    steps: list[float] = field(default_factory=list)
    quotients: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def _check_h_grid(h_grid: Sequence[float]) -> np.ndarray:
    h = np.asarray(h_grid, dtype=np.float64)
    if h.ndim != 1 or len(h) == 0 or np.any(h <= 0):
        raise ValueError("h_grid must be a nonempty list of positive steps")
    if np.any(np.diff(h) >= 0):
        raise ValueError("h_grid must be strictly decreasing")
    return h


def _cell_quotient(curve: Curve, jumps: np.ndarray, held: np.ndarray, t: float, h: float) -> float | None:
    """Difference quotient between the sample changes nearest to t - h and t + h."""
    a = int(np.abs(jumps - (t - h)).argmin())
    b = int(np.abs(jumps - (t + h)).argmin())
    if b <= a:
        return None
    return float(curve.context.distance(held[a], held[b]) / (jumps[b] - jumps[a]))


def metric_derivative(curve: Curve, t: float, h_grid: Sequence[float] = DEFAULT_H_GRID) -> SpeedEstimate:
    """|gamma'|(t) from symmetric difference quotients d(gamma(t - h), gamma(t + h)) / 2h.

    Euclidean curves extrapolate the two finest quotients (Richardson, the error is even in h). Graph curves are
    piecewise constant, so quotients are taken between sample changes at the coarsest admissible h instead.
    """
    if not 0 < t < 1:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    h = _check_h_grid(h_grid)
    result = SpeedEstimate(t, math.nan)
    h = h[(h <= t) & (h <= 1 - t)]
    if len(h) == 0:
        result.flags.append("no step keeps t +- h inside [0, 1]")
        return result

    if isinstance(curve.context, GraphContext):
        jumps, held = curve.jump_times()
        if len(jumps) == 0:
            result.value = 0.0
            return result
        usable = h[h >= curve.spacing]
        for step in usable:
            q = _cell_quotient(curve, jumps, held, t, float(step))
            if q is not None:
                result.steps.append(float(step))
                result.quotients.append(q)
        if not result.quotients:
            result.flags.append("resolution coarser than the h grid")
            return result
        result.value = result.quotients[0]
        return result

    usable = h[h >= 2 * curve.spacing]
    if len(usable) == 0:
        result.flags.append("resolution coarser than the h grid")
        return result
    ends = curve(np.concatenate([t - usable, t + usable]))
    quotients = curve.context.distance(ends[: len(usable)], ends[len(usable) :]) / (2 * usable)
    result.steps = usable.tolist()
    result.quotients = quotients.tolist()
    if len(usable) == 1:
        result.value = float(quotients[0])
        return result
    ratio2 = (usable[-2] / usable[-1]) ** 2
    result.value = max(float((ratio2 * quotients[-1] - quotients[-2]) / (ratio2 - 1)), 0.0)
    return result


@dataclass
class AC2Energy:
    value: float
    nodes: np.ndarray
    speeds: np.ndarray
    failed: int = 0
    flags: list[str] = field(default_factory=list)


def ac2_energy(
    curve: Curve,
    nodes: int = 256,
    h_grid: Sequence[float] = DEFAULT_H_GRID,
    sup: EnergyEstimate | None = None,
) -> AC2Energy:
    """1/2 int_0^1 |gamma'|^2 by the composite midpoint rule.

    Curves without a smooth descriptor must have a finite energy_sup first; otherwise they are not AC^2 and the
    energy is infinite.
    """
    if nodes < 1:
        raise ValueError(f"nodes must be positive, got {nodes}")
    t = (np.arange(nodes) + 0.5) / nodes
    if not curve.smooth:
        sup = energy_sup(curve) if sup is None else sup
        if not sup.converged:
            return AC2Energy(math.inf, t, np.full(nodes, np.nan), flags=["not AC2: energy_sup diverges"])

    speeds = np.array([metric_derivative(curve, float(s), h_grid).value for s in t])
    failed = ~np.isfinite(speeds)
    result = AC2Energy(math.nan, t, speeds, int(failed.sum()))
    if result.failed > MAX_FAILED_NODES * nodes:
        result.flags.append(f"undefined: metric derivative failed at {result.failed} of {nodes} nodes")
        return result
    if result.failed:
        good = np.nonzero(~failed)[0]
        # nearest node with a speed
        fill = good[np.abs(good[None, :] - np.nonzero(failed)[0][:, None]).argmin(axis=1)]
        speeds = speeds.copy()
        speeds[failed] = speeds[fill]
        result.flags.append(f"{result.failed} node(s) filled from neighbours")
    result.value = float(0.5 * np.mean(speeds**2))
    return result


@dataclass
class IdentificationGap:
    gap: float
    energy: EnergyEstimate
    ac2: AC2Energy
    flags: list[str] = field(default_factory=list)


def identification_gap(
    curve: Curve,
    tol: float = DEFAULT_TOL,
    max_level: int = DEFAULT_MAX_LEVEL,
    nodes: int = 256,
) -> IdentificationGap:
    """Signed gap ac2_energy - energy_sup; H never exceeds H~, and they agree on AC^2 curves."""
    sup = energy_sup(curve, tol, max_level)
    ac2 = ac2_energy(curve, nodes, sup=sup)
    flags = list(sup.flags) + list(ac2.flags)
    if not sup.converged:
        flags.append("H infinite")
    if not math.isfinite(ac2.value):
        flags.append("H~ infinite" if ac2.value == math.inf else "H~ undefined")
    if not sup.converged or not math.isfinite(ac2.value):
        return IdentificationGap(math.nan, sup, ac2, flags)
    gap = ac2.value - sup.value
    if gap < -max(tol, 1e-3 * abs(ac2.value)):
        flags.append("energy_sup exceeds ac2_energy")
    return IdentificationGap(gap, sup, ac2, flags)
