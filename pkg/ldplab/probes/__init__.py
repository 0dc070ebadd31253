from ldplab.probes.base import NO_TARGET, ProbeError, ProbeResult

from ._inequalities import run_gaussian_lower, run_hi, run_pi, run_vd, run_volscale
from ._kernel import (
    run_gaussian_threshold,
    run_metric,
    run_varadhan_indicator,
    run_varadhan_integrated,
    run_varadhan_kernel,
)
from ._paths import run_energy, run_fdd, run_tube

PROBES = {
    "vd": run_vd,
    "pi": run_pi,
    "hi": run_hi,
    "volscale": run_volscale,
    "metric": run_metric,
    "varadhan_kernel": run_varadhan_kernel,
    "varadhan_indicator": run_varadhan_indicator,
    "varadhan_integrated": run_varadhan_integrated,
    "gaussian_threshold": run_gaussian_threshold,
    "gaussian_lower": run_gaussian_lower,
    "fdd": run_fdd,
    "energy": run_energy,
    "tube": run_tube,
}

__all__ = ["NO_TARGET", "PROBES", "ProbeError", "ProbeResult"]
