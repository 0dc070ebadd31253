import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import torch
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ldplab.utils import DEFAULT_DEVICE, DTYPE

logger = logging.getLogger(__name__)

CONTINUUM = "continuum-approximation"


@dataclass(frozen=True, eq=False)
class StateSpace:
    """A finite vertex set with positive measure m and symmetric conductances w.

    The Dirichlet form is E(u, v) = 1/2 sum_{x,y} w(x,y) (u(x) - u(y)) (v(x) - v(y)).
    """

    measure: torch.Tensor
    conductances: torch.Tensor
    positions: torch.Tensor | None = None
    tags: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.measure.shape[0]

    @cached_property
    def degree(self) -> torch.Tensor:
        return self.conductances.sum(dim=1)

    @cached_property
    def rates(self) -> torch.Tensor:
        """Total jump rate out of each vertex, (1/m(x)) sum_y w(x,y)."""
        return self.degree / self.measure

    @cached_property
    def laplacian(self) -> torch.Tensor:
        """L = diag(deg) - W, so that E(u, v) = u^T L v."""
        return torch.diag(self.degree) - self.conductances

    @cached_property
    def generator(self) -> torch.Tensor:
        """Dense generator matrix A with (Au)(x) = (1/m(x)) sum_y w(x,y)(u(y) - u(x))."""
        return -self.laplacian / self.measure[:, None]

    @property
    def total_measure(self) -> float:
        return self.measure.sum().item()

    @property
    def kind(self) -> str:
        return self.tags.get("kind", "explicit")

    @property
    def is_continuum(self) -> bool:
        return bool(self.tags.get(CONTINUUM, False))

    @property
    def mesh(self) -> float | None:
        """Largest mesh size for continuum approximations, None otherwise."""
        mesh = self.tags.get("mesh")
        if mesh is None:
            return None
        if isinstance(mesh, (list, tuple)):
            return float(max(mesh))
        return float(mesh)

    @property
    def sigma(self) -> float:
        return float(self.tags.get("sigma", 1.0))

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper-triangular edge list (i, j, w) with w > 0."""
        w = self.conductances.cpu().numpy()
        i, j = np.nonzero(np.triu(w, k=1))
        return i, j, w[i, j]

    def nearest_vertex(self, point) -> int:
        if self.positions is None:
            raise ValueError(f"space of kind {self.kind!r} has no positions")
        p = torch.as_tensor(point, dtype=DTYPE).reshape(-1)
        if p.shape[0] != self.positions.shape[1]:
            raise ValueError(f"point has dimension {p.shape[0]}, space has {self.positions.shape[1]}")
        return int(torch.linalg.vector_norm(self.positions - p, dim=1).argmin())


@dataclass(frozen=True)
class Region:
    """A vertex subset. May be empty (shrunken sets); operations that need a nonempty region check it themselves."""

    vertices: tuple[int, ...]
    description: str = ""

    @classmethod
    def of(cls, vertices: Iterable[int], description: str = "") -> "Region":
        return cls(tuple(sorted({int(v) for v in vertices})), description)

    @classmethod
    def everything(cls, space: StateSpace) -> "Region":
        return cls(tuple(range(space.n)), "all")

    def __len__(self) -> int:
        return len(self.vertices)

    def __contains__(self, x) -> bool:
        return int(x) in set(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def index(self) -> torch.Tensor:
        return torch.tensor(self.vertices, dtype=torch.int64)

    def mask(self, n: int) -> torch.Tensor:
        out = torch.zeros(n, dtype=torch.bool)
        if self.vertices:
            out[self.index()] = True
        return out

    def measure(self, space: StateSpace) -> float:
        if self.is_empty:
            return 0.0
        return space.measure[self.index()].sum().item()


def check_region(space: StateSpace, region: Region, name: str = "region", allow_empty: bool = False) -> Region:
    if region.is_empty and not allow_empty:
        raise ValueError(f"{name} must be nonempty")
    if region.vertices and (region.vertices[0] < 0 or region.vertices[-1] >= space.n):
        raise ValueError(f"{name} has vertices outside 0..{space.n - 1}")
    return region


def check_vertex(space: StateSpace, x: int, name: str = "x") -> int:
    x = int(x)
    if not 0 <= x < space.n:
        raise ValueError(f"{name}={x} is not a vertex of a space with {space.n} vertices")
    return x


def _make_space(measure, conductances, positions=None, tags=None) -> StateSpace:
    m = torch.as_tensor(np.asarray(measure, dtype=np.float64), dtype=DTYPE, device=DEFAULT_DEVICE)
    w = torch.as_tensor(np.asarray(conductances, dtype=np.float64), dtype=DTYPE, device=DEFAULT_DEVICE)
    if m.dim() != 1:
        raise ValueError(f"measure must be a vector, got shape {tuple(m.shape)}")
    if w.shape != (m.shape[0], m.shape[0]):
        raise ValueError(f"conductances must have shape ({m.shape[0]}, {m.shape[0]}), got {tuple(w.shape)}")
    pos = None
    if positions is not None:
        pos = torch.as_tensor(np.asarray(positions, dtype=np.float64), dtype=DTYPE, device=DEFAULT_DEVICE)
        if pos.dim() == 1:
            pos = pos[:, None]
        if pos.shape[0] != m.shape[0]:
            raise ValueError(f"positions must have {m.shape[0]} rows, got {pos.shape[0]}")
    return StateSpace(m, w, pos, dict(tags or {}))


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def build_two_state(m1: float, m2: float, w: float) -> StateSpace:
    _check_positive(m1=m1, m2=m2, w=w)
    tags = {"kind": "two_state", "volume": m1 + m2}
    return _make_space([m1, m2], [[0.0, w], [w, 0.0]], tags=tags)


def _trapezoid(cells: int, h: float) -> np.ndarray:
    m = np.full(cells + 1, h)
    m[0] = m[-1] = h / 2
    return m


def build_lattice_1d(cells: int, length: float = 1.0, sigma: float = 1.0) -> StateSpace:
    """Neumann discretisation of (sigma^2/2) d^2/dx^2 on [0, length] with `cells` cells."""
    if cells < 2:
        raise ValueError(f"cells must be at least 2, got {cells}")
    _check_positive(length=length, sigma=sigma)
    h = length / cells
    n = cells + 1
    w = np.zeros((n, n))
    idx = np.arange(cells)
    w[idx, idx + 1] = w[idx + 1, idx] = sigma**2 / (2 * h)
    tags = {"kind": "lattice_1d", CONTINUUM: True, "mesh": h, "sigma": sigma, "volume": length, "cells": cells}
    return _make_space(_trapezoid(cells, h), w, positions=np.arange(n) * h, tags=tags)


def build_grid_2d(
    cells_x: int,
    cells_y: int,
    lengths: tuple[float, float] = (1.0, 1.0),
    sigma: float = 1.0,
) -> StateSpace:
    """Tensor-product lattice; vertex (i, j) has index i * (cells_y + 1) + j."""
    if cells_x < 2 or cells_y < 2:
        raise ValueError(f"cells must be at least 2 in each axis, got ({cells_x}, {cells_y})")
    lx, ly = lengths
    _check_positive(length_x=lx, length_y=ly, sigma=sigma)
    hx, hy = lx / cells_x, ly / cells_y
    mx, my = _trapezoid(cells_x, hx), _trapezoid(cells_y, hy)
    nx, ny = cells_x + 1, cells_y + 1
    index = np.arange(nx * ny).reshape(nx, ny)

    w = np.zeros((nx * ny, nx * ny))
    # x-edges carry the transverse measure my[j], y-edges carry mx[i]
    a, b = index[:-1, :].ravel(), index[1:, :].ravel()
    w[a, b] = w[b, a] = (sigma**2 / (2 * hx) * np.broadcast_to(my, (cells_x, ny))).ravel()
    a, b = index[:, :-1].ravel(), index[:, 1:].ravel()
    w[a, b] = w[b, a] = (sigma**2 / (2 * hy) * np.broadcast_to(mx[:, None], (nx, cells_y))).ravel()

    gx, gy = np.meshgrid(np.arange(nx) * hx, np.arange(ny) * hy, indexing="ij")
    positions = np.stack([gx.ravel(), gy.ravel()], axis=1)
    tags = {
        "kind": "grid_2d",
        CONTINUUM: True,
        "mesh": [hx, hy],
        "sigma": sigma,
        "volume": lx * ly,
        "cells": [cells_x, cells_y],
    }
    return _make_space(np.outer(mx, my).ravel(), w, positions=positions, tags=tags)


def build_explicit(measure, conductances, positions=None, tags: dict | None = None) -> StateSpace:
    """Space from full m/w tables. Only shapes are checked here; use validate_space for the invariants."""
    tags = {"kind": "explicit", **(tags or {})}
    return _make_space(measure, conductances, positions, tags)


@dataclass
class ValidationReport:
    passed: bool
    n: int
    components: int
    symmetry_violations: list[tuple[int, int]] = field(default_factory=list)
    self_loops: list[int] = field(default_factory=list)
    negative_conductances: list[tuple[int, int]] = field(default_factory=list)
    nonpositive_measure: list[int] = field(default_factory=list)
    volume_error: float | None = None
    issues: list[str] = field(default_factory=list)


def validate_space(space: StateSpace, atol: float = 1e-12) -> ValidationReport:
    w = space.conductances.cpu().numpy()
    m = space.measure.cpu().numpy()
    n = space.n

    asym = np.abs(w - w.T) > atol * np.maximum(1.0, np.abs(w))
    symmetry = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(asym, k=1)))]
    loops = [int(i) for i in np.nonzero(np.diag(w))[0]]
    negative = [(int(i), int(j)) for i, j in zip(*np.nonzero(w < 0))]
    nonpositive = [int(i) for i in np.nonzero(~(m > 0))[0]]

    # an edge counts as present if either direction has positive weight
    adjacency = csr_matrix(((w > 0) | (w.T > 0)).astype(np.float64))
    components, _ = connected_components(adjacency, directed=False)

    report = ValidationReport(
        passed=True,
        n=n,
        components=int(components),
        symmetry_violations=symmetry,
        self_loops=loops,
        negative_conductances=negative,
        nonpositive_measure=nonpositive,
    )
    if symmetry:
        report.issues.append(f"conductances not symmetric at {len(symmetry)} pair(s), first {symmetry[0]}")
    if loops:
        report.issues.append(f"self-loops at vertices {loops[:5]}")
    if negative:
        report.issues.append(f"negative conductances at {len(negative)} entries")
    if nonpositive:
        report.issues.append(f"nonpositive measure at vertices {nonpositive[:5]}")
    if components != 1:
        report.issues.append(f"graph is disconnected: {components} components")

    volume = space.tags.get("volume")
    if volume is not None:
        report.volume_error = abs(m.sum() - volume) / volume
        if report.volume_error > 1e-12:
            report.issues.append(f"total measure {m.sum()} differs from declared volume {volume}")

    report.passed = not report.issues
    for issue in report.issues:
        logger.warning("space validation: %s", issue)
    return report


BUILDERS = {
    "two_state": build_two_state,
    "lattice_1d": build_lattice_1d,
    "grid_2d": build_grid_2d,
    "explicit": build_explicit,
}


def space_to_dict(space: StateSpace) -> dict:
    """Explicit description carrying the full tables and tags, so a reload restores the space exactly."""
    d = {
        "kind": "explicit",
        "measure": space.measure.tolist(),
        "conductances": space.conductances.tolist(),
        "tags": space.tags,
    }
    if space.positions is not None:
        d["positions"] = space.positions.tolist()
    return d


def save_space(space: StateSpace, path: str | Path):
    with open(path, "w") as f:
        json.dump(space_to_dict(space), f)


def region_from_spec(space: StateSpace, spec, description: str | None = None) -> Region:
    """Resolve a region description that does not need the metric.

    Accepted forms: "all", a list of indices, {"indices": [...]}, {"points": [...]} (nearest vertices),
    {"interval": [lo, hi]} on 1D spaces and {"box": [[x0, x1], [y0, y1]]} on embedded spaces.
    """
    if spec == "all":
        return Region.everything(space)
    if isinstance(spec, (list, tuple)):
        spec = {"indices": list(spec)}
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"region must be 'all', an index list or a one-key mapping, got {spec!r}")
    (key, value), = spec.items()
    label = description or json.dumps(spec)

    if key == "indices":
        region = Region.of(value, label)
        return check_region(space, region, allow_empty=True)
    if key == "points":
        points = value if isinstance(value[0], (list, tuple)) else [[p] for p in value]
        return Region.of((space.nearest_vertex(p) for p in points), label)
    if key in ("interval", "box"):
        if space.positions is None:
            raise ValueError(f"{key!r} regions need a space with positions")
        bounds = torch.as_tensor([value] if key == "interval" else value, dtype=DTYPE)
        if bounds.shape != (space.positions.shape[1], 2):
            raise ValueError(f"{key!r} bounds {value!r} do not match the space dimension {space.positions.shape[1]}")
        eps = 1e-12 * max(1.0, bounds.abs().max().item())
        inside = ((space.positions >= bounds[:, 0] - eps) & (space.positions <= bounds[:, 1] + eps)).all(dim=1)
        return Region.of(torch.nonzero(inside).flatten().tolist(), label)
    raise ValueError(f"unknown region form {key!r}")
