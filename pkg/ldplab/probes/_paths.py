import math

from ldplab.energy import (
    ac2_energy,
    chord_length,
    discrete_energy,
    energy_sup,
    identification_gap,
    metric_derivative,
)
from ldplab.fdd import TimePartition, fdd_ldp_curve
from ldplab.lab import Lab, make_curve
from ldplab.probes.base import ProbeResult, grid, probe_series
from ldplab.simulator import TubeEvent, tube_ldp_estimate


def _bracket_series(probe, bracket: tuple[float, float]) -> dict[str, list]:
    series = probe_series("s", probe)
    series.pop("target")
    series["bracket_lo"] = [bracket[0]] * len(probe.t)
    series["bracket_hi"] = [bracket[1]] * len(probe.t)
    return series


def _bracket_table(series: dict[str, list]) -> list[dict]:
    names = list(series)
    return [dict(zip(names, values)) for values in zip(*series.values())]


def run_fdd(lab: Lab, params: dict, seed: int) -> ProbeResult:
    event = lab.event(params["event"])
    curve = fdd_ldp_curve(
        lab.cache, event, grid(params, "s_min", "s_max"), params["beta"], lab.table, lab.progress_bar
    )
    series = _bracket_series(curve.probe, curve.bracket)
    flags = list(curve.flags) + list(curve.rate.flags)
    lo, hi = curve.bracket
    limit = curve.probe.limit
    if math.isfinite(limit) and not lo - curve.probe.residual <= limit <= hi + curve.probe.residual:
        flags.append("extrapolated limit outside the rate bracket")
    return ProbeResult(limit, -curve.rate.rate, curve.probe.deviation, flags, _bracket_table(series), series)


def run_energy(lab: Lab | None, params: dict, seed: int) -> ProbeResult:
    curve = make_curve(params["curve"], lab)
    op = params["op"]
    if op == "discrete":
        partition = TimePartition.uniform(params["intervals"])
        value = discrete_energy(curve, partition)
        table = [{"intervals": params["intervals"], "energy": value, "chord_length": chord_length(curve, partition)}]
        return ProbeResult(value, table=table)
    if op == "sup":
        estimate = energy_sup(curve, params["tol"], params["max_level"], seed=seed)
        series = {"level": list(range(len(estimate.values))), "energy": estimate.values}
        return ProbeResult(estimate.value, flags=estimate.flags, table=_bracket_table(series), series=series)
    if op == "derivative":
        speed = metric_derivative(curve, params["t"])
        table = [{"h": h, "quotient": q} for h, q in zip(speed.steps, speed.quotients)]
        return ProbeResult(speed.value, flags=speed.flags, table=table)
    if op == "ac2":
        energy = ac2_energy(curve, params["nodes"])
        series = {"t": energy.nodes.tolist(), "speed": energy.speeds.tolist()}
        return ProbeResult(energy.value, flags=energy.flags, table=_bracket_table(series), series=series)
    gap = identification_gap(curve, params["tol"], params["max_level"], params["nodes"])
    table = [{"energy_sup": gap.energy.value, "ac2_energy": gap.ac2.value, "gap": gap.gap}]
    # H = H~ on AC^2 curves
    return ProbeResult(gap.gap, 0.0, abs(gap.gap), gap.flags, table)


def run_tube(lab: Lab, params: dict, seed: int) -> ProbeResult:
    curve = lab.curve(params["curve"])
    checkpoints = TimePartition.uniform(max(int(params["checkpoints"]) - 1, 1))
    event = TubeEvent(curve, float(params["delta"]), checkpoints)
    estimate = tube_ldp_estimate(
        lab.cache,
        event,
        grid(params, "s_min", "s_max"),
        params["samples"],
        seed,
        params["beta"],
        progress_bar=lab.progress_bar,
    )
    series = _bracket_series(estimate.probe, estimate.bracket)
    flags = [f"method:{estimate.method}"] + estimate.flags
    return ProbeResult(estimate.probe.limit, flags=flags, table=_bracket_table(series), series=series)
