import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import torch
from tqdm import tqdm

from ldplab.asymptotics import AsymptoticProbe, fit_probe
from ldplab.dirichlet import SpectralCache, log_semigroup_apply
from ldplab.metric import DistanceTable, distance_matrix, enlarge_set, shrink_set
from ldplab.space import Region, StateSpace, check_region
from ldplab.utils import DTYPE, logsumexp

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10_000


@dataclass(frozen=True)
class TimePartition:
    """0 = t_0 < t_1 < ... < t_n = 1."""

    times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) < 1:
            raise ValueError("a partition needs at least one time")
        if times[0] != 0.0 or (len(times) > 1 and times[-1] != 1.0):
            raise ValueError(f"partition must start at 0 and end at 1, got {times}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"partition times must be strictly increasing, got {times}")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, intervals: int) -> "TimePartition":
        if intervals < 1:
            raise ValueError(f"need at least one interval, got {intervals}")
        return cls(tuple(k / intervals for k in range(intervals)) + (1.0,))

    @classmethod
    def dyadic(cls, level: int) -> "TimePartition":
        return cls.uniform(2**level)

    @property
    def intervals(self) -> int:
        return len(self.times) - 1

    def steps(self) -> list[float]:
        return [b - a for a, b in zip(self.times, self.times[1:])]

    def refines(self, other: "TimePartition") -> bool:
        return set(other.times) <= set(self.times)


@dataclass(frozen=True, eq=False)
class CylinderEvent:
    """{X_{s t_0} in A_0, ..., X_{s t_n} in A_n} with X_0 distributed by `initial_law` (a probability vector on the
    whole space). Events derived by shrinking or enlarging keep the same law."""

    partition: TimePartition
    sets: tuple[Region, ...]
    initial_law: torch.Tensor
    description: str = ""

    def __post_init__(self):
        if len(self.sets) != len(self.partition.times):
            raise ValueError(f"need one set per time: {len(self.partition.times)} times, {len(self.sets)} sets")

    def with_sets(self, sets: Sequence[Region], description: str = "") -> "CylinderEvent":
        return replace(self, sets=tuple(sets), description=description or self.description)

    def product_size(self) -> int:
        return math.prod(len(s) for s in self.sets)


def make_event(
    space: StateSpace,
    partition: TimePartition,
    sets: Sequence[Region],
    initial_law=None,
    description: str = "",
) -> CylinderEvent:
    """Validated event. The default initial law is m restricted to A_0 and normalised."""
    sets = tuple(sets)
    for i, region in enumerate(sets):
        check_region(space, region, f"A_{i}")
    if initial_law is None:
        law = space.measure * sets[0].mask(space.n)
    else:
        law = torch.as_tensor(initial_law, dtype=DTYPE)
        if law.shape != (space.n,):
            raise ValueError(f"initial law must have shape ({space.n},), got {tuple(law.shape)}")
        if bool((law < 0).any()):
            raise ValueError("initial law has negative entries")
        if bool((law[~sets[0].mask(space.n)] > 0).any()):
            raise ValueError("initial law must be supported on A_0")
    total = law.sum().item()
    if not total > 0:
        raise ValueError("initial law has no mass on A_0")
    return CylinderEvent(partition, sets, law / total, description)


def fdd_log_probability(cache: SpectralCache, event: CylinderEvent, s: float) -> tuple[float, tuple[str, ...]]:
    """log P(X_{s t_i} in A_i for all i), by a forward pass in log space.

    By reversibility the law after a step is alpha' = m * T_tau(alpha / m), restricted to the next set.
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    space = cache.space
    log_m = torch.log(space.measure)
    log_alpha = torch.where(event.sets[0].mask(space.n), torch.log(event.initial_law), -math.inf)
    flags = set()
    for region, step in zip(event.sets[1:], event.partition.steps()):
        if region.is_empty or bool(torch.isneginf(log_alpha).all()):
            return -math.inf, tuple(sorted(flags))
        propagated, uflags = log_semigroup_apply(cache, s * step, log_alpha - log_m)
        flags.update(uflags)
        log_alpha = torch.where(region.mask(space.n), propagated + log_m, -math.inf)
    return logsumexp(log_alpha), tuple(sorted(flags))


def fdd_probability(cache: SpectralCache, event: CylinderEvent, s: float) -> float:
    value, _ = fdd_log_probability(cache, event, s)
    return min(math.exp(value), 1.0)


@dataclass
class FddRate:
    rate: float
    chain: tuple[int, ...] | None
    mode: str
    beta: float | None = None
    rate_enlarged: float | None = None
    rate_shrunken: float | None = None
    chain_enlarged: tuple[int, ...] | None = None
    chain_shrunken: tuple[int, ...] | None = None
    flags: list[str] = field(default_factory=list)


def _squared(table: DistanceTable) -> np.ndarray:
    return (table.lower**2).cpu().numpy()


def chain_rate(sets: Sequence[Region], partition: TimePartition, d2: np.ndarray) -> tuple[float, tuple[int, ...] | None]:
    """min over chains in A_0 x ... x A_n of sum d^2(x_i, x_{i+1}) / (2 (t_{i+1} - t_i)), by cost-to-go.

    Ties resolve to the lexicographically smallest chain.
    """
    if any(region.is_empty for region in sets):
        return math.inf, None
    steps = partition.steps()
    members = [np.asarray(region.vertices) for region in sets]
    cost = np.zeros(len(members[-1]))
    stage_costs = []
    for i in range(len(members) - 2, -1, -1):
        step = d2[np.ix_(members[i], members[i + 1])] / (2 * steps[i])
        # stage cost first, accumulated tail second: same order as the enumeration oracle
        total = step + cost[None, :]
        stage_costs.append(total)
        cost = total.min(axis=1)
    stage_costs.reverse()

    start = int(np.argmin(cost))
    rate = float(cost[start])
    if not math.isfinite(rate):
        return rate, None
    chain = [int(members[0][start])]
    position = start
    for i, total in enumerate(stage_costs):
        position = int(np.argmin(total[position]))
        chain.append(int(members[i + 1][position]))
    return rate, tuple(chain)


def default_beta(space: StateSpace, table: DistanceTable) -> float:
    """2h on lattices, otherwise half the smallest positive distance."""
    if space.mesh is not None:
        return 2 * space.mesh
    positive = table.lower[(table.lower > 0) & torch.isfinite(table.lower)]
    return positive.min().item() / 2 if positive.numel() else 0.0


def fdd_rate(
    space: StateSpace,
    event: CylinderEvent,
    mode: Literal["interior", "bracket"] = "interior",
    beta: float | None = None,
    table: DistanceTable | None = None,
) -> FddRate:
    """Rate of the event; `bracket` also evaluates the DP on A^{beta+} and A^{beta-}."""
    if mode not in ("interior", "bracket"):
        raise ValueError(f"unknown mode {mode!r}")
    table = distance_matrix(space, progress_bar=False) if table is None else table
    d2 = _squared(table)
    rate, chain = chain_rate(event.sets, event.partition, d2)
    result = FddRate(rate, chain, mode)
    if mode == "bracket":
        beta = default_beta(space, table) if beta is None else float(beta)
        result.beta = beta
        enlarged = [enlarge_set(space, a, beta, table) for a in event.sets]
        shrunken = [shrink_set(space, a, beta, table) for a in event.sets]
        result.rate_enlarged, result.chain_enlarged = chain_rate(enlarged, event.partition, d2)
        result.rate_shrunken, result.chain_shrunken = chain_rate(shrunken, event.partition, d2)
        if any(a.is_empty for a in shrunken):
            result.flags.append("shrunken set empty")
            logger.info("a shrunken set is empty at beta=%g; the upper rate is infinite", beta)
    return result


def fdd_rate_exhaustive(
    space: StateSpace,
    event: CylinderEvent,
    table: DistanceTable | None = None,
    limit: int = EXHAUSTIVE_LIMIT,
) -> tuple[float, tuple[int, ...] | None]:
    """Enumeration oracle for small product sets."""
    size = event.product_size()
    if size > limit:
        raise ValueError(f"product set has {size} chains, more than the limit {limit}")
    table = distance_matrix(space, progress_bar=False) if table is None else table
    d2 = _squared(table)
    steps = event.partition.steps()
    best, best_chain = math.inf, None
    for chain in itertools.product(*(region.vertices for region in event.sets)):
        total = 0.0
        for i in range(len(steps) - 1, -1, -1):
            total = d2[chain[i], chain[i + 1]] / (2 * steps[i]) + total
        if total < best:
            best, best_chain = float(total), tuple(int(v) for v in chain)
    return best, best_chain


@dataclass
class FddCurve:
    probe: AsymptoticProbe
    rate: FddRate
    bracket: tuple[float, float]
    flags: list[str] = field(default_factory=list)


def fdd_ldp_curve(
    cache: SpectralCache,
    event: CylinderEvent,
    s_grid: Sequence[float],
    beta: float | None = None,
    table: DistanceTable | None = None,
    progress_bar: bool = False,
) -> FddCurve:
    """s log P over `s_grid`, extrapolated to s -> 0 and compared with [-rate(shrunken), -rate(enlarged)]."""
    space = cache.space
    table = distance_matrix(space, progress_bar=False) if table is None else table
    rate = fdd_rate(space, event, "bracket", beta, table)

    s = np.sort(np.asarray(s_grid, dtype=np.float64))[::-1].copy()
    log_p = []
    flags = set()
    for value in tqdm(s, desc="FDD sweep", disable=not progress_bar):
        lp, pflags = fdd_log_probability(cache, event, float(value))
        log_p.append(lp)
        flags.update(pflags)

    # fit_probe targets -d^2/2; pass the distance whose square halves to the rate
    distance = math.sqrt(2 * rate.rate) if math.isfinite(rate.rate) else math.inf
    min_step = min(event.partition.steps(), default=1.0)
    probe = fit_probe(space, event.description or "fdd", s, np.asarray(log_p), distance, min_step)
    probe.flags.extend(sorted(flags))
    bracket = (-rate.rate_shrunken, -rate.rate_enlarged)
    return FddCurve(probe, rate, bracket, list(probe.flags))
