import math

from ldplab.asymptotics import gaussian_bound_threshold, varadhan_indicator, varadhan_integrated, varadhan_kernel
from ldplab.lab import Lab
from ldplab.metric import intrinsic_distance
from ldplab.probes.base import ProbeResult, grid, probe_series, probe_table


def run_metric(lab: Lab, params: dict, seed: int) -> ProbeResult:
    table = []
    flags = []
    for x, y in params["pairs"]:
        bracket = intrinsic_distance(lab.space, lab.vertex(x), lab.vertex(y), params["tol"], params["max_iter"])
        table.append(
            {
                "x": bracket.x,
                "y": bracket.y,
                "lower": bracket.lower,
                "upper": bracket.upper,
                "gap": bracket.gap,
                "witness_max_gamma": bracket.witness_max_gamma,
            }
        )
        if bracket.gap > params["tol"]:
            flags.append(f"({bracket.x}, {bracket.y}) gap {bracket.gap:.3g} above tolerance")
    headline = table[0]["lower"] if len(table) == 1 else max(row["gap"] for row in table)
    return ProbeResult(headline, flags=flags, table=table)


def _from_probe(probe) -> ProbeResult:
    return ProbeResult(
        probe.limit,
        probe.target,
        probe.deviation,
        list(probe.flags),
        probe_table(probe),
        probe_series("t", probe),
    )


def run_varadhan_kernel(lab: Lab, params: dict, seed: int) -> ProbeResult:
    probe = varadhan_kernel(lab.cache, lab.vertex(params["x"]), lab.vertex(params["y"]), grid(params), lab.table)
    return _from_probe(probe)


def run_varadhan_indicator(lab: Lab, params: dict, seed: int) -> ProbeResult:
    probe = varadhan_indicator(lab.cache, lab.region(params["region"]), lab.vertex(params["x"]), grid(params), lab.table)
    return _from_probe(probe)


def run_varadhan_integrated(lab: Lab, params: dict, seed: int) -> ProbeResult:
    probe = varadhan_integrated(lab.cache, lab.region(params["a"]), lab.region(params["b"]), grid(params), lab.table)
    return _from_probe(probe)


def run_gaussian_threshold(lab: Lab, params: dict, seed: int) -> ProbeResult:
    result = gaussian_bound_threshold(
        lab.cache,
        lab.region(params["a"]),
        lab.region(params["b"]),
        params["t_min"],
        params["t_max"],
        params["points"],
        lab.table,
    )
    table = [{"t": float(t), "log_ratio": float(r), "holds": bool(r <= 1e-12)} for t, r in zip(result.t, result.log_ratio)]
    series = {"t": result.t.tolist(), "log_ratio": result.log_ratio.tolist(), "target": [0.0] * len(result.t)}
    flags = list(result.flags)
    if not math.isfinite(result.distance):
        flags.append("sets lie in different components")
    return ProbeResult(result.t_star, flags=flags, table=table, series=series)
