import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ldplab.utils import time_grid

NO_TARGET = "no-paper-target"


class ProbeError(RuntimeError):
    def __init__(self, probe_id: str, message: str):
        super().__init__(f"probe {probe_id!r} failed: {message}")
        self.probe_id = probe_id
        self.message = message


@dataclass
class ProbeResult:
    """Headline number of a probe plus its per-sample table and, for grid probes, a plot series.

    `series` maps column names to equal-length lists; the first column is the abscissa.
    """

    headline: float
    target: float | None = None
    deviation: float | None = None
    flags: list[str] = field(default_factory=list)
    table: list[dict[str, Any]] = field(default_factory=list)
    series: dict[str, list] | None = None

    def __post_init__(self):
        if self.target is None and NO_TARGET not in self.flags:
            self.flags.insert(0, NO_TARGET)


def grid(params: dict, key_min: str = "t_min", key_max: str = "t_max") -> np.ndarray:
    return time_grid(float(params[key_min]), float(params[key_max]), int(params["points"]))


def probe_series(abscissa: str, probe, target: float | None = None) -> dict[str, list]:
    """Columns for an AsymptoticProbe: abscissa, t log p, the fitted model and the target line."""
    value_name = "s_log_P" if abscissa == "s" else "t_log_p"
    fit = probe.model_fit if probe.model_fit is not None else np.full(len(probe.t), math.nan)
    target = probe.target if target is None else target
    return {
        abscissa: probe.t.tolist(),
        value_name: probe.values.tolist(),
        "model_fit": fit.tolist(),
        "target": [target] * len(probe.t),
    }


def probe_table(probe) -> list[dict[str, Any]]:
    fit = probe.model_fit if probe.model_fit is not None else np.full(len(probe.t), math.nan)
    in_window = probe.in_window if probe.in_window is not None else np.zeros(len(probe.t), dtype=bool)
    return [
        {
            "t": float(t),
            "t_log_p": float(v),
            "model_fit": float(f),
            "target": probe.target,
            "deviation": probe.deviation,
            "in_window": bool(w),
            "fit_model": probe.fit_model,
        }
        for t, v, f, w in zip(probe.t, probe.values, fit, in_window)
    ]
