import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from scipy.stats import binomtest
from tqdm import tqdm

from ldplab.asymptotics import AsymptoticProbe, fit_probe
from ldplab.dirichlet import SpectralCache
from ldplab.energy import AC2Energy, Curve, GraphContext, ac2_energy
from ldplab.fdd import CylinderEvent, FddRate, TimePartition, fdd_ldp_curve, fdd_rate, make_event
from ldplab.metric import DistanceTable
from ldplab.sampling import JumpTable, multinomial, stream, streams
from ldplab.space import Region, check_vertex
from ldplab.utils import DTYPE

logger = logging.getLogger(__name__)

MIN_TUBE_SAMPLES = 1000
BATCH_SIZE = 4096
# exact forward pass when the checkpoint product set has at most this many chains
EXACT_LIMIT = 10**6


@dataclass
class PathSample:
    """Jump times in the rescaled horizon [0, 1] and the vertices visited; vertices[k] is held from times[k]."""

    times: np.ndarray
    vertices: np.ndarray
    seed: int
    index: int = 0

    def at(self, t) -> np.ndarray:
        """Vertex held at each of the rescaled times `t`."""
        k = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        return self.vertices[k]


def sample_path(cache: SpectralCache, s: float, x0: int, seed: int, index: int = 0) -> PathSample:
    """Event-driven path of X^s on [0, 1]: exponential holding at rate (1/m(x)) sum_y w(x, y), then a jump to y with
    probability proportional to w(x, y)."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    space = cache.space
    x = check_vertex(space, x0, "x0")
    rng = stream(seed, index)
    rates = space.rates.cpu().numpy()
    w = space.conductances.cpu().numpy()

    times, vertices = [0.0], [x]
    clock = 0.0
    while rates[x] > 0:
        clock += rng.exponential(1.0 / rates[x])
        if clock >= s:
            break
        x = int(multinomial(w[x], rng))
        times.append(clock / s)
        vertices.append(x)
    return PathSample(np.asarray(times), np.asarray(vertices, dtype=np.int64), seed, index)


def sample_checkpoints(
    cache: SpectralCache,
    s: float,
    times: Sequence[float],
    initial: np.ndarray,
    rngs: Sequence[np.random.Generator],
    jumps: JumpTable | None = None,
) -> np.ndarray:
    """X^s at the rescaled `times` for chains started at `initial`, one row per chain; chain i draws from rngs[i]."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("checkpoint times must be nonnegative and strictly increasing")
    jumps = JumpTable.from_cache(cache) if jumps is None else jumps
    states = np.asarray(initial, dtype=np.int64)
    out = np.empty((len(states), len(times)), dtype=np.int64)
    previous = 0.0
    for j, t in enumerate(times):
        if t > previous:
            states = jumps.advance(states, s * (t - previous), rngs)
        out[:, j] = states
        previous = t
    return out


@dataclass(frozen=True, eq=False)
class TubeEvent:
    """Paths within intrinsic distance `delta` of `curve` at every checkpoint time."""

    curve: Curve
    delta: float
    checkpoints: TimePartition

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not isinstance(self.curve.context, GraphContext):
            raise ValueError("tube events need a curve on a state space")

    @property
    def context(self) -> GraphContext:
        return self.curve.context

    def sets(self) -> list[Region]:
        """Open balls of radius delta around the curve at the checkpoints."""
        lower = self.context.table.lower
        centers = self.curve(np.asarray(self.checkpoints.times))
        return [
            Region.of(torch.nonzero(lower[int(c)] < self.delta).flatten().tolist(), f"tube({int(c)}, {self.delta:g})")
            for c in centers
        ]

    def as_cylinder(self) -> CylinderEvent:
        """The same event as a cylinder set, started from m restricted to the first ball."""
        return make_event(self.context.space, self.checkpoints, self.sets(), description="tube")


@dataclass
class TubeEstimate:
    probability: float
    lower: float
    upper: float
    hits: int
    samples: int
    s: float
    flags: list[str] = field(default_factory=list)


def tube_probability(
    cache: SpectralCache,
    event: TubeEvent,
    s: float,
    n_samples: int,
    seed: int,
    batch_size: int = BATCH_SIZE,
    progress_bar: bool = False,
) -> TubeEstimate:
    """Monte Carlo estimate with a Wilson 95% interval.

    Sample i draws its start and its hops from stream (seed, i); `batch_size` only groups samples for vectorization.
    """
    if n_samples < MIN_TUBE_SAMPLES:
        raise ValueError(f"need at least {MIN_TUBE_SAMPLES} samples, got {n_samples}")
    if cache.space is not event.context.space:
        raise ValueError("tube event belongs to a different space")
    cylinder = event.as_cylinder()
    law = cylinder.initial_law.cpu().numpy()
    masks = np.stack([a.mask(cache.n).cpu().numpy() for a in cylinder.sets])
    jumps = JumpTable.from_cache(cache)

    hits = 0
    batches = math.ceil(n_samples / batch_size)
    for b in tqdm(range(batches), desc="Tube sampling", disable=not progress_bar):
        size = min(batch_size, n_samples - b * batch_size)
        rngs = streams(seed, b * batch_size, size)
        initial = np.array([multinomial(law, rng) for rng in rngs], dtype=np.int64)
        states = sample_checkpoints(cache, s, cylinder.partition.times, initial, rngs, jumps)
        inside = masks[np.arange(masks.shape[0])[None, :], states]
        hits += int(inside.all(axis=1).sum())

    interval = binomtest(hits, n_samples).proportion_ci(confidence_level=0.95, method="wilson")
    result = TubeEstimate(hits / n_samples, interval.low, interval.high, hits, n_samples, s)
    if hits == 0:
        logger.warning("no sample hit the tube at s=%g; only the upper confidence bound is informative", s)
        result.flags.append("zero hits: upper bound only")
    return result


@dataclass
class TubeLdp:
    probe: AsymptoticProbe
    rate: FddRate
    energy: AC2Energy
    bracket: tuple[float, float]
    method: str
    estimates: list[TubeEstimate] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def tube_ldp_estimate(
    cache: SpectralCache,
    event: TubeEvent,
    s_grid: Sequence[float],
    n_samples: int = 10**5,
    seed: int = 0,
    beta: float | None = None,
    exact_limit: int = EXACT_LIMIT,
    progress_bar: bool = False,
) -> TubeLdp:
    """s log P(tube) over `s_grid`, extrapolated to s -> 0.

    The exact forward pass replaces sampling when the checkpoint product set has at most `exact_limit` chains.
    The limit is compared with [-H~(curve), -rate(enlarged tube)]: the curve lies in the tube, and no path in the
    closure is cheaper than the enlarged checkpoint sets allow.
    """
    table: DistanceTable = event.context.table
    cylinder = event.as_cylinder()
    energy = ac2_energy(event.curve)

    if cylinder.product_size() <= exact_limit:
        curve = fdd_ldp_curve(cache, cylinder, s_grid, beta, table, progress_bar)
        probe, rate, method, estimates = curve.probe, curve.rate, "exact", []
    else:
        rate = fdd_rate(cache.space, cylinder, "bracket", beta, table)
        s = np.sort(np.asarray(s_grid, dtype=np.float64))[::-1].copy()
        estimates = [tube_probability(cache, event, float(v), n_samples, seed, progress_bar=progress_bar) for v in s]
        log_p = np.array([math.log(e.probability) if e.hits else -math.inf for e in estimates])
        distance = math.sqrt(2 * rate.rate) if math.isfinite(rate.rate) else math.inf
        probe = fit_probe(cache.space, "tube", s, log_p, distance, min(cylinder.partition.steps(), default=1.0))
        method = "monte-carlo"

    bracket = (-energy.value, -rate.rate_enlarged)
    flags = list(probe.flags)
    if not np.isfinite(probe.values).any():
        flags.append("every grid point underflowed; raw table only")
    elif math.isfinite(probe.limit) and not bracket[0] - probe.residual <= probe.limit <= bracket[1] + probe.residual:
        flags.append("extrapolated limit outside the energy bracket")
    return TubeLdp(probe, rate, energy, bracket, method, estimates, flags)


def empirical_marginals(
    cache: SpectralCache,
    x0: int,
    s: float,
    times: Sequence[float],
    n_samples: int,
    seed: int,
    batch_size: int = BATCH_SIZE,
) -> np.ndarray:
    """Empirical law of X^s at each checkpoint (rows) for chains started at x0; sample i draws from stream (seed, i)."""
    x0 = check_vertex(cache.space, x0, "x0")
    jumps = JumpTable.from_cache(cache)
    counts = np.zeros((len(times), cache.n))
    for b in range(math.ceil(n_samples / batch_size)):
        size = min(batch_size, n_samples - b * batch_size)
        states = sample_checkpoints(cache, s, times, np.full(size, x0), streams(seed, b * batch_size, size), jumps)
        for j in range(len(times)):
            counts[j] += np.bincount(states[:, j], minlength=cache.n)
    return counts / n_samples


def semigroup_marginals(cache: SpectralCache, x0: int, s: float, times: Sequence[float]) -> np.ndarray:
    """Exact law of X^s at each checkpoint: P(X_{st} = y) = p_{st}(x0, y) m(y)."""
    x0 = check_vertex(cache.space, x0, "x0")
    phi = cache.eigenvectors
    decay = torch.exp(-torch.as_tensor([s * t for t in times], dtype=DTYPE)[:, None] * cache.eigenvalues[None, :])
    kernel = (decay * phi[x0]) @ phi.T
    return (kernel * cache.space.measure).clamp_min(0).cpu().numpy()
