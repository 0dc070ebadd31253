import math

from ldplab.inequalities import (
    doubling_exponent,
    gaussian_lower_constant,
    harnack_constant,
    poincare_sweep,
    volume_scaling_curve,
)
from ldplab.lab import Lab
from ldplab.probes.base import ProbeResult, grid


def _vertices(lab: Lab, values) -> list[int] | None:
    return None if values is None else [lab.vertex(v) for v in values]


def _pairs(lab: Lab, pairs) -> list[tuple[int, int]]:
    return [(lab.vertex(x), lab.vertex(y)) for x, y in pairs]


def run_vd(lab: Lab, params: dict, seed: int) -> ProbeResult:
    report = doubling_exponent(
        lab.space, lab.region(params["region"]), params["radii"], _vertices(lab, params["centers"]), lab.table
    )
    return ProbeResult(report.best, flags=list(report.flags), table=report.samples)


def run_pi(lab: Lab, params: dict, seed: int) -> ProbeResult:
    report = poincare_sweep(lab.space, _vertices(lab, params["centers"]), params["radii"], lab.table)
    return ProbeResult(report.best, flags=list(report.flags), table=report.samples)


def run_hi(lab: Lab, params: dict, seed: int) -> ProbeResult:
    report = harnack_constant(
        lab.cache,
        lab.region(params["region"]),
        params["radii"],
        times=params["times"],
        centers=_vertices(lab, params["centers"]),
        sources=_vertices(lab, params["sources"]),
        time_samples=params["time_samples"],
        table=lab.table,
    )
    return ProbeResult(report.best, flags=list(report.flags), table=report.samples)


def run_volscale(lab: Lab, params: dict, seed: int) -> ProbeResult:
    t = grid(params)
    report = volume_scaling_curve(
        lab.space, lab.vertex(params["center"]), params["epsilon"], t, params["doubling"], lab.table
    )
    # t log vol(sqrt(eps t), x) -> 0
    limit = report.limit if report.limit is not None else math.nan
    series = {
        "t": [s["t"] for s in report.samples],
        "t_log_vol": [s["t_log_vol"] for s in report.samples],
        "bound": [s["bound"] for s in report.samples],
        "target": [0.0] * len(report.samples),
    }
    return ProbeResult(limit, 0.0, abs(limit), list(report.flags), report.samples, series)


def run_gaussian_lower(lab: Lab, params: dict, seed: int) -> ProbeResult:
    report = gaussian_lower_constant(lab.cache, _pairs(lab, params["pairs"]), grid(params).tolist(), lab.table)
    return ProbeResult(report.best, flags=list(report.flags), table=report.samples)
