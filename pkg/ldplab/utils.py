import math
import os
from typing import Sequence

import numpy as np
import torch

DTYPE = torch.float64
DEFAULT_DEVICE = torch.device("cpu")

THREADS_ENV = "LDPLAB_THREADS"


def as_vertex_function(u, n: int, name: str = "u") -> torch.Tensor:
    """Convert `u` to a float64 vector on the default device, checking it has one entry per vertex."""
    out = torch.as_tensor(u, dtype=DTYPE, device=DEFAULT_DEVICE)
    if out.dim() != 1 or out.shape[0] != n:
        raise ValueError(f"{name} must have shape ({n},), got {tuple(out.shape)}")
    return out


def set_threads(threads: int | None = None) -> int:
    """Set the torch intra-op thread count. The environment variable wins over the argument."""
    env = os.getenv(THREADS_ENV)
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
    if threads is not None:
        if threads < 1:
            raise ValueError(f"thread count must be positive, got {threads}")
        torch.set_num_threads(threads)
    return torch.get_num_threads()


def time_grid(t_min: float, t_max: float, points: int) -> np.ndarray:
    """Geometric grid from t_max down to t_min (strictly decreasing)."""
    if not 0 < t_min < t_max:
        raise ValueError(f"need 0 < t_min < t_max, got {t_min}, {t_max}")
    if points < 2:
        raise ValueError(f"need at least 2 grid points, got {points}")
    return np.geomspace(t_max, t_min, points)


def log_poisson_tail_bound(log_weight: float, rate: float, k: int) -> float:
    """Bound on log sum_{j>k} Pois(j; rate) given log Pois(k; rate), valid once k + 2 > rate."""
    ratio = rate / (k + 2)
    return log_weight + math.log(rate) - math.log(k + 1) - math.log1p(-ratio)


def logsumexp(values: torch.Tensor) -> float:
    if values.numel() == 0:
        return -math.inf
    return torch.logsumexp(values, dim=0).item()


# short-time models: name -> whether the c/t^2 column is fitted
FIT_MODELS = {"gaussian": False, "lattice": True}


def fit_short_time_limit(
    t: Sequence[float],
    y: Sequence[float],
    model: str = "gaussian",
) -> tuple[float, np.ndarray, float]:
    """Least-squares fit of y = L + a*t*log(t) + b*t and return (L, coefficients, rms residual).

    The t*log(t) and t columns absorb the polynomial prefactor of a Gaussian-type quantity. The "lattice" model adds
    a c/t^2 column for the leading lattice correction to the exponent.
    """
    if model not in FIT_MODELS:
        raise ValueError(f"unknown fit model {model!r}, expected one of {sorted(FIT_MODELS)}")
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    columns = [np.ones_like(t), t * np.log(t), t]
    if FIT_MODELS[model]:
        columns.append(1.0 / t**2)
    design = np.stack(columns, axis=1)
    if design.shape[0] < design.shape[1]:
        raise ValueError(f"need at least {design.shape[1]} points to fit, got {design.shape[0]}")

    # columns differ by orders of magnitude
    norms = np.linalg.norm(design, axis=0)
    norms[norms == 0] = 1.0
    coef, *_ = np.linalg.lstsq(design / norms, y, rcond=None)
    coef = coef / norms
    residual = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return float(coef[0]), coef, residual


def evaluate_fit(t: Sequence[float], coef: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = coef[0] + coef[1] * t * np.log(t) + coef[2] * t
    if len(coef) > 3:
        out = out + coef[3] / t**2
    return out
