import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import spsolve
from tqdm import tqdm

from ldplab.dirichlet import energy_density, energy_density_batch
from ldplab.space import Region, StateSpace, check_region, check_vertex, region_from_spec
from ldplab.utils import DTYPE

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-3


@dataclass
class DistanceBracket:
    """Certified bounds lower <= d(x, y) <= upper; `witness` is a function with max gamma <= 1 and
    witness(x) - witness(y) = lower."""

    x: int
    y: int
    lower: float
    upper: float
    witness: torch.Tensor
    witness_max_gamma: float
    iterations: int = 0

    @property
    def gap(self) -> float:
        if math.isinf(self.upper):
            return 0.0 if math.isinf(self.lower) else math.inf
        return (self.upper - self.lower) / max(self.lower, 1e-300)


def edge_lengths(space: StateSpace) -> csr_matrix:
    """Single-edge relaxation: gamma(f) <= 1 at both ends forces |f(u) - f(v)| <= sqrt(min(m(u), m(v)) / w(u, v))."""
    i, j, w = space.edges()
    m = space.measure.cpu().numpy()
    length = np.sqrt(np.minimum(m[i], m[j]) / w)
    rows, cols = np.concatenate([i, j]), np.concatenate([j, i])
    return coo_matrix((np.concatenate([length, length]), (rows, cols)), (space.n, space.n)).tocsr()


def _rescale(space: StateSpace, rows: torch.Tensor) -> torch.Tensor:
    """Scale each row so that its max energy density is 1."""
    gamma = energy_density_batch(space, rows).max(dim=1).values
    scale = torch.where(gamma > 0, gamma.rsqrt(), torch.ones_like(gamma))
    return rows * scale[:, None]


def _smoothing(space: StateSpace) -> float:
    if space.mesh is not None:
        return space.mesh / 2
    i, j, _ = space.edges()
    lengths = torch.linalg.vector_norm(space.positions[i] - space.positions[j], dim=1)
    return lengths[lengths > 0].min().item() / 2 if lengths.numel() else 0.0


def witness_families(space: StateSpace, sources) -> list[torch.Tensor]:
    """Feasible distance-like functions from each source, one (len(sources), n) tensor per family.

    Each row vanishes at its source and is rescaled to max gamma = 1, so row[y] is a lower bound on d(source, y).
    Families: shortest-path distance, and on embedded spaces the Euclidean cone and a cone smoothed at its apex.
    """
    sources = np.asarray(sources, dtype=np.int64)
    sp = shortest_path(edge_lengths(space), method="D", directed=False, indices=sources)
    sp[~np.isfinite(sp)] = 0.0
    families = [torch.as_tensor(sp, dtype=DTYPE)]

    if space.positions is not None:
        pos = space.positions
        r = torch.cdist(pos[torch.as_tensor(sources)], pos)
        families.append(r)
        c = _smoothing(space)
        if c > 0:
            families.append(torch.sqrt(r**2 + c**2) - c)
    return [_rescale(space, f) for f in families]


def _components(space: StateSpace) -> np.ndarray:
    adjacency = csr_matrix((space.conductances.cpu().numpy() > 0).astype(np.float64))
    _, labels = connected_components(adjacency, directed=False)
    return labels


@dataclass
class DistanceTable:
    """All-pairs distance brackets. `lower` is symmetric with zero diagonal; entries are +inf across components."""

    space: StateSpace
    lower: torch.Tensor
    upper: torch.Tensor
    families: list[torch.Tensor]
    choice: torch.Tensor
    tol: float = DEFAULT_TOL
    refined: dict[tuple[int, int], DistanceBracket] = field(default_factory=dict)

    def witness(self, x: int, y: int) -> torch.Tensor:
        if x == y or math.isinf(self.lower[x, y].item()):
            return torch.zeros(self.space.n, dtype=DTYPE)
        key = (min(x, y), max(x, y))
        if key in self.refined:
            bracket = self.refined[key]
            return bracket.witness if bracket.x == x else -bracket.witness
        code = int(self.choice[x, y])
        family, transposed = divmod(code, 2)
        f = self.families[family]
        # row x gives -f_x with value f_x(y) at the pair; row y gives f_y directly
        return f[y].clone() if transposed else -f[x].clone()

    def bracket(self, x: int, y: int) -> DistanceBracket:
        x = check_vertex(self.space, x, "x")
        y = check_vertex(self.space, y, "y")
        key = (min(x, y), max(x, y))
        if key in self.refined:
            b = self.refined[key]
            if b.x == x:
                return b
            return DistanceBracket(x, y, b.lower, b.upper, -b.witness, b.witness_max_gamma, b.iterations)
        witness = self.witness(x, y)
        return DistanceBracket(
            x,
            y,
            self.lower[x, y].item(),
            self.upper[x, y].item(),
            witness,
            energy_density(self.space, witness).max().item(),
        )

    def diameter(self) -> float:
        finite = self.lower[torch.isfinite(self.lower)]
        return finite.max().item() if finite.numel() else 0.0


def _pair_bounds(space: StateSpace, sources) -> tuple[list[torch.Tensor], np.ndarray]:
    families = witness_families(space, sources)
    upper = shortest_path(edge_lengths(space), method="D", directed=False, indices=np.asarray(sources))
    return families, upper


def distance_matrix(
    space: StateSpace,
    tol: float = DEFAULT_TOL,
    refine: bool = False,
    max_iter: int = 200,
    progress_bar: bool = True,
) -> DistanceTable:
    """Brackets for all pairs. With `refine`, pairs whose relative gap exceeds `tol` go through the dual refinement."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    n = space.n
    families, upper = _pair_bounds(space, range(n))
    upper = torch.as_tensor(upper, dtype=DTYPE)

    # candidate (family, orientation): entry [x, y] of f_x, or entry [y, x] of f_y
    stacked = torch.stack([g for f in families for g in (f, f.T)])
    lower, choice = stacked.max(dim=0)

    labels = torch.as_tensor(_components(space))
    apart = labels[:, None] != labels[None, :]
    lower = torch.where(apart, torch.full_like(lower, math.inf), lower)
    upper = torch.where(apart, torch.full_like(upper, math.inf), upper)
    lower.fill_diagonal_(0.0)
    upper.fill_diagonal_(0.0)
    lower = torch.minimum(lower, upper)

    table = DistanceTable(space, lower, upper, families, choice, tol)
    if refine:
        gap = (upper - lower) / lower.clamp_min(1e-300)
        pairs = [(x, y) for x, y in torch.nonzero(torch.triu(gap > tol, diagonal=1)).tolist() if not apart[x, y]]
        for x, y in tqdm(pairs, desc="Refining distances", disable=not progress_bar):
            bracket = refine_pair(space, x, y, table.bracket(x, y), tol, max_iter)
            table.refined[(x, y)] = bracket
            table.lower[x, y] = table.lower[y, x] = bracket.lower
            table.upper[x, y] = table.upper[y, x] = bracket.upper
    return table


def _weighted_laplacian(n: int, i: np.ndarray, j: np.ndarray, c: np.ndarray) -> csr_matrix:
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-c, -c, c, c])
    return coo_matrix((vals, (rows, cols)), (n, n)).tocsr()


def refine_pair(
    space: StateSpace,
    x: int,
    y: int,
    start: DistanceBracket,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
) -> DistanceBracket:
    """Tighten a bracket through the dual of the distance problem.

    For weights lambda >= 0 with sum lambda m = 1 and conductances c(u,v) = w(u,v)(lambda_u + lambda_v), the effective
    resistance R between x and y satisfies d(x, y)^2 <= R, with equality at the optimum. The unit-current potential,
    rescaled to max gamma = 1, is a feasible primal witness. Weights follow the multiplicative fixed-point update
    lambda <- lambda * sqrt(gamma / R).
    """
    n = space.n
    i, j, w = space.edges()
    m = space.measure.cpu().numpy()
    # ground y; x sits at position x or x - 1 among the remaining vertices
    keep = np.delete(np.arange(n), y)
    rhs = np.zeros(n - 1)
    rhs[x if x < y else x - 1] = 1.0

    best = start
    lam = np.full(n, 1.0 / m.sum())
    iterations = 0
    for iterations in range(1, max_iter + 1):
        lap = _weighted_laplacian(n, i, j, w * (lam[i] + lam[j]))
        potential = np.zeros(n)
        potential[keep] = spsolve(lap[keep][:, keep].tocsc(), rhs)
        resistance = potential[x]
        if not np.isfinite(resistance) or resistance <= 0:
            logger.warning("dual refinement for (%d, %d) hit a singular system at iteration %d", x, y, iterations)
            break

        f = torch.as_tensor(potential, dtype=DTYPE)
        gamma = energy_density(space, f)
        top = gamma.max().item()
        witness = f / math.sqrt(top)
        lower = resistance / math.sqrt(top)
        upper = math.sqrt(resistance)
        if lower > best.lower:
            best = DistanceBracket(x, y, lower, best.upper, witness, energy_density(space, witness).max().item())
        if upper < best.upper:
            best = DistanceBracket(x, y, best.lower, upper, best.witness, best.witness_max_gamma)
        if best.gap <= tol:
            break

        lam = lam * np.sqrt(gamma.cpu().numpy() / resistance)
        lam = np.maximum(lam, 1e-14 * lam.max())
        lam /= lam @ m
    best.iterations = iterations
    if best.gap > tol:
        logger.info("dual refinement for (%d, %d) stopped with gap %.3g after %d iterations", x, y, best.gap, iterations)
    return best


def intrinsic_distance(
    space: StateSpace,
    x: int,
    y: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
) -> DistanceBracket:
    """Bracket for d(x, y) = sup {f(x) - f(y) : gamma(f) <= 1}."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x = check_vertex(space, x, "x")
    y = check_vertex(space, y, "y")
    if x == y:
        return DistanceBracket(x, y, 0.0, 0.0, torch.zeros(space.n, dtype=DTYPE), 0.0)
    labels = _components(space)
    if labels[x] != labels[y]:
        logger.warning("vertices %d and %d lie in different components", x, y)
        return DistanceBracket(x, y, math.inf, math.inf, torch.zeros(space.n, dtype=DTYPE), 0.0)

    families, upper = _pair_bounds(space, [x, y])
    # index 0 is the row of x, index 1 the row of y
    candidates = [(f[0, y].item(), -f[0]) for f in families] + [(f[1, x].item(), f[1]) for f in families]
    lower, witness = max(candidates, key=lambda c: c[0])
    upper = float(upper[0, y])
    start = DistanceBracket(x, y, min(lower, upper), upper, witness, energy_density(space, witness).max().item())
    if start.gap <= tol:
        return start
    return refine_pair(space, x, y, start, tol, max_iter)


def _check_table(space: StateSpace, table: DistanceTable | None) -> DistanceTable:
    if table is None:
        return distance_matrix(space, progress_bar=False)
    if table.space is not space:
        raise ValueError("distance table belongs to a different space")
    return table


def set_distance(space: StateSpace, region: Region, x: int, table: DistanceTable | None = None) -> float:
    """d(A, x) = min over a in A of the lower distance bound; 0 when x is in A."""
    check_region(space, region, "A")
    x = check_vertex(space, x)
    if x in region:
        return 0.0
    table = _check_table(space, table)
    return table.lower[region.index(), x].min().item()


def set_pair_distance(space: StateSpace, a: Region, b: Region, table: DistanceTable | None = None) -> float:
    check_region(space, a, "A")
    check_region(space, b, "B")
    table = _check_table(space, table)
    return table.lower[a.index()][:, b.index()].min().item()


def _distance_to(region: Region, table: DistanceTable) -> torch.Tensor:
    return table.lower[region.index()].min(dim=0).values


def ball(space: StateSpace, x: int, r: float, table: DistanceTable | None = None) -> Region:
    """Closed ball {y : d(x, y) <= r} under the lower distance bound."""
    x = check_vertex(space, x)
    table = _check_table(space, table)
    inside = table.lower[x] <= r
    return Region.of(torch.nonzero(inside).flatten().tolist(), f"ball({x}, {r:g})")


def shrink_set(space: StateSpace, region: Region, beta: float, table: DistanceTable | None = None) -> Region:
    """A^{beta-} = {x : d(A^C, x) > beta}; the whole space when A^C is empty."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    check_region(space, region, allow_empty=True)
    table = _check_table(space, table)
    complement = Region.of(set(range(space.n)) - set(region.vertices))
    if complement.is_empty:
        return Region.everything(space)
    inside = _distance_to(complement, table) > beta
    shrunk = Region.of(torch.nonzero(inside).flatten().tolist(), f"shrink({region.description}, {beta:g})")
    if shrunk.is_empty:
        logger.info("shrinking %s by %g leaves an empty set", region.description or "region", beta)
    return shrunk


def enlarge_set(space: StateSpace, region: Region, beta: float, table: DistanceTable | None = None) -> Region:
    """A^{beta+} = A together with {x : d(A, x) < beta}, so that enlarging by 0 returns A."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    check_region(space, region, allow_empty=True)
    if region.is_empty:
        return region
    table = _check_table(space, table)
    inside = (_distance_to(region, table) < beta) | region.mask(space.n)
    return Region.of(torch.nonzero(inside).flatten().tolist(), f"enlarge({region.description}, {beta:g})")


def resolve_region(space: StateSpace, spec, table: DistanceTable | None = None) -> Region:
    """`region_from_spec` plus {"ball": {"center": point-or-index, "radius": r}} resolved with the metric."""
    if isinstance(spec, dict) and "ball" in spec:
        center = spec["ball"]["center"]
        x = int(center) if isinstance(center, int) else space.nearest_vertex(center)
        return ball(space, x, float(spec["ball"]["radius"]), table)
    return region_from_spec(space, spec)
