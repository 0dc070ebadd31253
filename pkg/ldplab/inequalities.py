import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.linalg
import torch
from scipy.optimize import brentq

from ldplab.dirichlet import SpectralCache, log_heat_kernel
from ldplab.metric import DistanceTable, distance_matrix
from ldplab.space import Region, StateSpace, check_region, check_vertex
from ldplab.utils import DTYPE, fit_short_time_limit

logger = logging.getLogger(__name__)

HARNACK_FLOOR = 1e-280
MIN_TIME_SAMPLES = 8

InequalityKind = Literal["VD", "PI", "HI", "VOLSCALE", "GAUSSIAN_LOWER"]


@dataclass
class InequalityReport:
    """Best empirical constant of one functional inequality, with the per-sample table it was taken from.

    `best` is the max over samples that were not excluded. VOLSCALE reports max |t log vol| there and the fitted
    t -> 0 limit in `limit`.
    """

    kind: InequalityKind
    region: Region
    parameters: dict
    best: float
    samples: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    limit: float | None = None


def _table(space: StateSpace, table: DistanceTable | None) -> DistanceTable:
    return distance_matrix(space, progress_bar=False) if table is None else table


def _volumes(space: StateSpace, table: DistanceTable, centers: Sequence[int], radii: Sequence[float]) -> torch.Tensor:
    """m(B_r(x)) for every center (rows) and radius (columns), closed balls."""
    d = table.lower[torch.as_tensor(list(centers), dtype=torch.int64)]
    r = torch.as_tensor(list(radii), dtype=DTYPE)
    inside = (d[:, None, :] <= r[None, :, None]).to(DTYPE)
    return inside @ space.measure


def doubling_exponent(
    space: StateSpace,
    region: Region,
    radii: Sequence[float],
    centers: Sequence[int] | None = None,
    table: DistanceTable | None = None,
) -> InequalityReport:
    """N = max log2(m(B_2r(x)) / m(B_r(x))) over admissible (x, r), i.e. those with B_2r(x) inside `region`."""
    check_region(space, region)
    radii = sorted(float(r) for r in radii)
    if not radii or radii[0] <= 0:
        raise ValueError(f"radii must be positive, got {radii}")
    table = _table(space, table)
    centers = list(region.vertices) if centers is None else [check_vertex(space, c) for c in centers]

    outside = ~region.mask(space.n)
    samples = []
    for x in centers:
        row = table.lower[x]
        for r in radii:
            if bool((row[outside] <= 2 * r).any()):
                continue
            small = space.measure[row <= r].sum().item()
            large = space.measure[row <= 2 * r].sum().item()
            samples.append({"center": x, "r": r, "vol_r": small, "vol_2r": large, "exponent": math.log2(large / small)})
    if not samples:
        raise ValueError("no admissible balls: every B_2r(x) leaves the region")
    best = max(s["exponent"] for s in samples)

    # re-check vol(r') <= (r'/r)^N vol(r) on the nested pairs of each center
    admissible = sorted({s["center"] for s in samples})
    scales = sorted(set(radii) | {2 * r for r in radii})
    vols = _volumes(space, table, admissible, scales)
    violations = implied = 0
    for row in vols.tolist():
        for a in range(len(scales)):
            for b in range(a + 1, len(scales)):
                ratio = scales[b] / scales[a]
                if row[b] > ratio ** (best + 0.1) * row[a] * (1 + 1e-12):
                    violations += 1
                if row[a] < ratio ** (-best) * row[b] * (1 - 1e-12):
                    implied += 1
    report = InequalityReport(
        "VD",
        region,
        {"radii": radii, "centers": len(admissible), "nested_violations": violations, "implied_violations": implied},
        best,
        samples,
    )
    if violations:
        report.flags.append(f"nested-pair-violations:{violations}")
    if implied:
        report.flags.append(f"implied-bound-violations:{implied}")
    return report


@dataclass
class PoincareResult:
    x: int
    r: float
    kappa: float
    eigenvalue: float
    inner: Region
    outer: Region
    eigenfunction: torch.Tensor | None = None
    flags: list[str] = field(default_factory=list)


def _local_energy(space: StateSpace, vertices: list[int]) -> np.ndarray:
    """Matrix of u -> sum_{x,y in B} w(x,y)(u(x) - u(y))^2, the energy measure of B from edges inside B."""
    idx = torch.as_tensor(vertices, dtype=torch.int64)
    w = space.conductances[idx][:, idx]
    lap = torch.diag(w.sum(dim=1)) - w
    return 2 * lap.cpu().numpy()


def poincare_constant(space: StateSpace, x: int, r: float, table: DistanceTable | None = None) -> PoincareResult:
    """kappa = 1/(r^2 lambda*) with lambda* the smallest positive eigenvalue of (energy on B_2r, variance on B_r).

    Values outside B_r are eliminated by their energy-minimising extension (Schur complement), so the pencil lives
    on B_r.
    """
    x = check_vertex(space, x)
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    table = _table(space, table)
    row = table.lower[x]
    outer = torch.nonzero(row <= 2 * r).flatten().tolist()
    inner_mask = (row <= r)[outer]
    inner = Region.of([v for v, keep in zip(outer, inner_mask.tolist()) if keep], f"B({x}, {r:g})")
    result = PoincareResult(x, r, math.nan, math.nan, inner, Region.of(outer, f"B({x}, {2 * r:g})"))
    if len(inner) < 2:
        result.flags.append("undefined: ball has fewer than 2 vertices")
        return result

    energy = _local_energy(space, outer)
    i_idx = np.nonzero(inner_mask.cpu().numpy())[0]
    o_idx = np.nonzero(~inner_mask.cpu().numpy())[0]
    e_ii = energy[np.ix_(i_idx, i_idx)]
    extension = np.zeros((len(o_idx), len(i_idx)))
    if len(o_idx):
        e_oo = energy[np.ix_(o_idx, o_idx)]
        e_oi = energy[np.ix_(o_idx, i_idx)]
        extension = -scipy.linalg.lstsq(e_oo, e_oi)[0]
        schur = e_ii + e_oi.T @ extension
    else:
        schur = e_ii
    schur = (schur + schur.T) / 2
    mass = np.diag(space.measure.cpu().numpy()[list(inner.vertices)])

    values, vectors = scipy.linalg.eigh(schur, mass)
    positive = np.nonzero(values > 1e-9 * max(abs(values).max(), 1e-300))[0]
    if len(positive) == 0 or positive[0] > 1:
        # a second zero eigenvalue means B_r falls apart under the local energy
        result.flags.append("undefined: local energy does not connect the ball")
        return result
    k = positive[0]
    result.eigenvalue = float(values[k])
    result.kappa = 1.0 / (r**2 * values[k])

    u = torch.zeros(space.n, dtype=DTYPE)
    local = np.zeros(len(outer))
    local[i_idx] = vectors[:, k]
    local[o_idx] = extension @ vectors[:, k]
    u[torch.as_tensor(outer)] = torch.as_tensor(local, dtype=DTYPE)
    result.eigenfunction = u
    return result


def poincare_variance(space: StateSpace, result: PoincareResult) -> float:
    """Variance of the eigenfunction over B_r around its m-average."""
    idx = result.inner.index()
    u, m = result.eigenfunction[idx], space.measure[idx]
    mean = (u * m).sum() / m.sum()
    return ((u - mean) ** 2 * m).sum().item()


def poincare_energy(space: StateSpace, result: PoincareResult) -> float:
    """Energy measure of B_2r for the eigenfunction."""
    idx = result.outer.vertices
    u = result.eigenfunction[torch.as_tensor(idx)].cpu().numpy()
    return float(u @ _local_energy(space, list(idx)) @ u)


def poincare_sweep(
    space: StateSpace,
    centers: Sequence[int],
    radii: Sequence[float],
    table: DistanceTable | None = None,
) -> InequalityReport:
    table = _table(space, table)
    samples = []
    flags = []
    for x in centers:
        for r in radii:
            res = poincare_constant(space, x, r, table)
            samples.append({"center": x, "r": r, "kappa": res.kappa, "eigenvalue": res.eigenvalue, "ball": len(res.inner)})
            flags.extend(f"({x}, {r:g}) {f}" for f in res.flags)
    finite = [s["kappa"] for s in samples if math.isfinite(s["kappa"])]
    if not finite:
        raise ValueError("no ball with at least 2 vertices among the samples")
    return InequalityReport(
        "PI", Region.everything(space), {"centers": list(centers), "radii": list(radii)}, max(finite), samples, flags
    )


def _kernel_rows(cache: SpectralCache, source: int, times: Sequence[float], targets: torch.Tensor) -> torch.Tensor:
    """p_s(source, y) for s in `times` (rows) and y in `targets` (columns)."""
    phi = cache.eigenvectors
    decay = torch.exp(-torch.as_tensor(list(times), dtype=DTYPE)[:, None] * cache.eigenvalues[None, :])
    return (decay * phi[source]) @ phi[targets].T


def harnack_constant(
    cache: SpectralCache,
    region: Region,
    radii: Sequence[float],
    times: Sequence[float] | None = None,
    centers: Sequence[int] | None = None,
    sources: Sequence[int] | None = None,
    time_samples: int = MIN_TIME_SAMPLES,
    table: DistanceTable | None = None,
) -> InequalityReport:
    """Empirical parabolic Harnack constant for the solutions u_s = p_s(x0, .).

    For each admissible (x, r, t), Q- = ]t - 3r^2, t - 2r^2] x B_r(x) and Q+ = ]t - r^2, t] x B_r(x) are sampled on
    left-open time grids. Default times are t = 8r^2, default sources are the centers themselves; the constant
    solution contributes the baseline ratio 1.
    """
    space = cache.space
    check_region(space, region)
    table = _table(space, table)
    time_samples = max(int(time_samples), MIN_TIME_SAMPLES)
    centers = list(region.vertices) if centers is None else [check_vertex(space, c) for c in centers]
    outside = ~region.mask(space.n)

    samples = [{"center": None, "r": None, "t": None, "source": "constant", "sup": 1.0, "inf": 1.0, "ratio": 1.0}]
    flags = []
    steps = torch.arange(1, time_samples + 1, dtype=DTYPE) / time_samples
    for r in radii:
        r2 = r * r
        for t in times if times is not None else [8 * r2]:
            if t - 4 * r2 <= 0:
                flags.append(f"time window ]{t - 4 * r2:g}, {t:g}[ leaves the solution range for r={r:g}")
                continue
            early = (t - 3 * r2 + steps * r2).tolist()
            late = (t - r2 + steps * r2).tolist()
            for x in centers:
                row = table.lower[x]
                if bool((row[outside] <= 2 * r).any()):
                    continue
                ball = torch.nonzero(row <= r).flatten()
                for x0 in [x] if sources is None else sources:
                    sup = _kernel_rows(cache, x0, early, ball).max().item()
                    inf = _kernel_rows(cache, x0, late, ball).min().item()
                    sample = {"center": x, "r": r, "t": t, "source": x0, "sup": sup, "inf": inf}
                    if inf < HARNACK_FLOOR:
                        sample["ratio"] = math.nan
                        sample["excluded"] = True
                    else:
                        sample["ratio"] = sup / inf
                    samples.append(sample)
    if len(samples) == 1:
        raise ValueError("no admissible Harnack samples: every B_2r(x) leaves the region")
    excluded = sum(1 for s in samples if s.get("excluded"))
    if excluded:
        flags.append(f"{excluded} sample(s) below the numerical floor excluded")
        logger.warning("harnack: %d sample(s) below the numerical floor excluded", excluded)
    best = max(s["ratio"] for s in samples if not s.get("excluded"))
    parameters = {"radii": list(radii), "time_samples": time_samples, "grid": "left-open"}
    return InequalityReport("HI", region, parameters, best, samples, flags)


def volume_scaling_curve(
    space: StateSpace,
    x: int,
    epsilon: float,
    t_grid: Sequence[float],
    doubling: float | None = None,
    table: DistanceTable | None = None,
) -> InequalityReport:
    """t log vol(sqrt(eps t), x) over `t_grid`, checked against |t log vol| <= (N/2)|t log t| + t|log vol(sqrt(eps), x)|.

    Balls always contain x, so the discrete floor m(x) applies automatically once a ball shrinks to its center.
    """
    x = check_vertex(space, x)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    t_grid = [float(t) for t in t_grid]
    if not t_grid or min(t_grid) <= 0:
        raise ValueError("t_grid must contain positive times")
    table = _table(space, table)

    radii = [math.sqrt(epsilon * t) for t in t_grid]
    flags = []
    if doubling is None:
        doubling = doubling_exponent(space, Region.everything(space), radii, centers=[x], table=table).best
        flags.append("doubling exponent estimated at the center from the curve radii")
    base = _volumes(space, table, [x], [math.sqrt(epsilon)])[0, 0].item()
    vols = _volumes(space, table, [x], radii)[0].tolist()

    samples = []
    for t, r, vol in zip(t_grid, radii, vols):
        value = t * math.log(vol)
        bound = doubling / 2 * abs(t * math.log(t)) + t * abs(math.log(base))
        samples.append({"t": t, "radius": r, "vol": vol, "t_log_vol": value, "bound": bound, "holds": abs(value) <= bound})
    failed = sum(1 for s in samples if not s["holds"])
    if failed:
        flags.append(f"bound fails at {failed} grid point(s)")
    limit = None
    if len(t_grid) >= 3:
        limit, _, _ = fit_short_time_limit(t_grid, [s["t_log_vol"] for s in samples])
    best = max(abs(s["t_log_vol"]) for s in samples)
    parameters = {"center": x, "epsilon": epsilon, "doubling": doubling, "vol_sqrt_eps": base}
    return InequalityReport("VOLSCALE", Region.of([x]), parameters, best, samples, flags, limit)


def gaussian_lower_constant(
    cache: SpectralCache,
    pairs: Sequence[tuple[int, int]],
    t_grid: Sequence[float],
    table: DistanceTable | None = None,
) -> InequalityReport:
    """Smallest C >= 1 with p_t(x, y) >= (1/C) vol(sqrt(t), x)^{-1} exp(-C d(x, y)^2 / t) at every sample.

    The whole space plays the role of Y, so the exp(-tC/R^2) factor is 1.
    """
    space = cache.space
    table = _table(space, table)
    samples = []
    flags = []
    for x, y in pairs:
        x, y = check_vertex(space, x, "x"), check_vertex(space, y, "y")
        d = table.lower[x, y].item()
        for t in t_grid:
            log_p, kflags = log_heat_kernel(cache, t, x, y)
            vol = _volumes(space, table, [x], [math.sqrt(t)])[0, 0].item()
            sample = {"x": x, "y": y, "t": t, "d": d, "log_p": log_p, "vol": vol}
            if not math.isfinite(log_p):
                sample["excluded"] = True
                sample["C"] = math.nan
                samples.append(sample)
                continue
            target = log_p + math.log(vol)
            a = d * d / t

            def gap(c: float) -> float:
                return -math.log(c) - c * a - target

            if gap(1.0) <= 0:
                constant = 1.0
            else:
                hi = 2.0
                while gap(hi) > 0:
                    hi *= 2
                constant = brentq(gap, 1.0, hi, xtol=1e-12, rtol=1e-10)
            sample["C"] = constant
            samples.append(sample)
    kept = [s["C"] for s in samples if not s.get("excluded")]
    if not kept:
        raise ValueError("every kernel value underflowed; no constant can be estimated")
    excluded = len(samples) - len(kept)
    if excluded:
        flags.append(f"{excluded} sample(s) excluded after underflow")
        logger.warning("gaussian lower constant: %d sample(s) excluded after underflow", excluded)
    parameters = {"pairs": [list(p) for p in pairs], "t_grid": list(t_grid)}
    return InequalityReport("GAUSSIAN_LOWER", Region.everything(space), parameters, max(kept), samples, flags)
