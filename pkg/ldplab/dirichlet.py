import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import torch

from ldplab.space import StateSpace, check_vertex
from ldplab.utils import DTYPE, as_vertex_function, log_poisson_tail_bound

logger = logging.getLogger(__name__)

NEGATIVE_FLOOR = -1e-12
LOG_SPACE_BELOW = 1e-300

# spectral values must exceed this multiple of their cancellation error estimate
_SPECTRAL_MARGIN = 1e5
_CANCELLATION_EPS = 1e-13


class SpectralError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({details})")
        self.diagnostics = diagnostics


def dirichlet_energy(space: StateSpace, u, v=None) -> float:
    u = as_vertex_function(u, space.n, "u")
    v = u if v is None else as_vertex_function(v, space.n, "v")
    return (u @ (space.laplacian @ v)).item()


def energy_density(space: StateSpace, u) -> torch.Tensor:
    """gamma(u)(x) = (1/m(x)) sum_y w(x,y) (u(x) - u(y))^2."""
    u = as_vertex_function(u, space.n, "u")
    diff = u[:, None] - u[None, :]
    return (space.conductances * diff**2).sum(dim=1) / space.measure


def energy_density_batch(space: StateSpace, functions: torch.Tensor) -> torch.Tensor:
    """gamma for each row of a (k, n) batch of vertex functions."""
    if functions.dim() != 2 or functions.shape[1] != space.n:
        raise ValueError(f"functions must have shape (k, {space.n}), got {tuple(functions.shape)}")
    f = functions.to(DTYPE)
    w = space.conductances
    # sum_y w(x,y)(f_x - f_y)^2 = f_x^2 deg_x - 2 f_x (W f)_x + (W f^2)_x
    out = f**2 * space.degree - 2 * f * (f @ w) + (f**2) @ w
    return out.clamp_min(0) / space.measure


def generator_apply(space: StateSpace, u) -> torch.Tensor:
    u = as_vertex_function(u, space.n, "u")
    return (space.conductances @ u - space.degree * u) / space.measure


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """Eigendecomposition of -A, immutable after build.

    `eigenvectors[:, k]` is phi_k, orthonormal in the m-weighted inner product, so that
    p_t(x, y) = sum_k exp(-lambda_k t) phi_k(x) phi_k(y).
    """

    space: StateSpace
    eigenvalues: torch.Tensor
    eigenvectors: torch.Tensor

    @property
    def n(self) -> int:
        return self.space.n

    @cached_property
    def jump_rate(self) -> float:
        """Uniformisation rate q = max_x (1/m(x)) sum_y w(x,y)."""
        return max(self.space.rates.max().item(), 1e-300)

    @cached_property
    def jump_matrix(self) -> torch.Tensor:
        """Stochastic matrix P = I + A/q of the uniformized chain, so that exp(tA) = sum_k Pois(k; qt) P^k."""
        p = torch.eye(self.n, dtype=DTYPE) + self.space.generator / self.jump_rate
        return p.clamp_min(0)

    def decay(self, t: float) -> torch.Tensor:
        return torch.exp(-self.eigenvalues * t)


def build_spectral_cache(space: StateSpace) -> SpectralCache:
    """Eigendecompose the m-symmetrised operator M^{-1/2} L M^{-1/2} of -A."""
    if not bool((space.measure > 0).all()):
        raise SpectralError("measure must be positive", {"n": space.n, "min_m": space.measure.min().item()})

    inv_sqrt = space.measure.rsqrt()
    sym = inv_sqrt[:, None] * space.laplacian * inv_sqrt[None, :]
    sym = (sym + sym.T) / 2
    diagnostics = {
        "n": space.n,
        "max_w": space.conductances.max().item(),
        "min_m": space.measure.min().item(),
        "max_m": space.measure.max().item(),
    }
    try:
        lam, vecs = torch.linalg.eigh(sym)
    except torch.linalg.LinAlgError as e:
        raise SpectralError(f"eigensolver failed: {e}", diagnostics) from e
    if not bool(torch.isfinite(lam).all()):
        raise SpectralError("eigensolver returned non-finite eigenvalues", diagnostics)

    tol = 1e-10 + 64 * torch.finfo(DTYPE).eps * lam.abs().max().item()
    if lam[0].item() < -tol:
        diagnostics["lambda_0"] = lam[0].item()
        raise SpectralError("generator has a negative eigenvalue beyond tolerance", diagnostics)
    lam = lam.clamp_min(0)

    phi = inv_sqrt[:, None] * vecs
    # phi_0 is the constant mode; fix its sign
    if phi[:, 0].sum() < 0:
        phi[:, 0] = -phi[:, 0]
    logger.debug("spectral cache built: n=%d, lambda_1=%.6g", space.n, lam[1].item() if space.n > 1 else 0.0)
    return SpectralCache(space, lam, phi)


@dataclass(frozen=True)
class KernelValue:
    t: float
    x: int
    y: int
    value: float
    log_value: float
    flags: tuple[str, ...] = ()


def _check_time(t: float, allow_zero: bool = False):
    if allow_zero and t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if not allow_zero and not t > 0:
        raise ValueError(f"t must be positive, got {t}")


def heat_kernel_matrix(cache: SpectralCache, t: float) -> torch.Tensor:
    """p_t(x, y) for all pairs, symmetrised. Entries are not floored."""
    _check_time(t)
    phi = cache.eigenvectors
    p = (phi * cache.decay(t)) @ phi.T
    return (p + p.T) / 2


def _spectral_apply(cache: SpectralCache, t: float, f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    phi = cache.eigenvectors
    coef = phi.T @ (cache.space.measure * f) * cache.decay(t)
    terms = phi * coef
    return terms.sum(dim=1), _CANCELLATION_EPS * terms.abs().sum(dim=1)


def semigroup_apply(cache: SpectralCache, t: float, f) -> torch.Tensor:
    """T_t f = exp(tA) f."""
    _check_time(t, allow_zero=True)
    f = as_vertex_function(f, cache.n, "f")
    if t == 0:
        return f.clone()
    value, _ = _spectral_apply(cache, t, f)
    return value


def _uniformized_log_apply(
    cache: SpectralCache,
    t: float,
    log_f: torch.Tensor,
    rtol: float,
) -> tuple[torch.Tensor, tuple[str, ...]]:
    """log T_t f for f >= 0 given as log f, summing Poisson-weighted powers of the jump matrix in log space."""
    n = cache.n
    shift = log_f.max().item()
    if shift == -math.inf:
        return log_f.clone(), ()
    u = torch.exp(log_f - shift)
    rate = cache.jump_rate * t
    log_rate = math.log(rate)
    log_weight = -rate
    log_scale = 0.0
    acc = torch.log(u) + log_weight
    cap = int(rate + 60 * math.sqrt(rate) + n + 100)

    k = 0
    flags = ()
    while True:
        k += 1
        u = cache.jump_matrix @ u
        top = u.max().item()
        if top <= 0:
            break
        u = u / top
        log_scale += math.log(top)
        log_weight += log_rate - math.log(k)
        term = torch.log(u) + (log_weight + log_scale)
        acc = torch.where(torch.isneginf(term), acc, torch.logaddexp(acc, term))

        reached = bool(torch.isfinite(acc).all()) or k >= n - 1
        if k > rate and reached:
            # P is stochastic, so every later P^j f is bounded by max f
            log_tail = log_poisson_tail_bound(log_weight, rate, k)
            finite = acc[torch.isfinite(acc)]
            if log_tail - finite.min().item() < math.log(rtol):
                break
        if k >= cap:
            logger.warning("uniformization stopped at the hop cap %d for t=%g (q t = %.4g)", cap, t, rate)
            flags = ("uniformization-cap",)
            break
    return acc + shift, flags


def log_semigroup_apply(
    cache: SpectralCache,
    t: float,
    log_f,
    method: Literal["auto", "spectral", "uniformization"] = "auto",
    rtol: float = 1e-12,
) -> tuple[torch.Tensor, tuple[str, ...]]:
    """log T_t f for a nonnegative f given in log space (entries may be -inf).

    The spectral sum is used where it is accurate; deep Gaussian tails, where the spectral sum cancels, go through
    uniformization, which only adds nonnegative terms.
    """
    _check_time(t, allow_zero=True)
    log_f = as_vertex_function(log_f, cache.n, "log_f")
    if t == 0:
        return log_f.clone(), ()
    if method not in ("auto", "spectral", "uniformization"):
        raise ValueError(f"unknown method {method!r}")

    if method != "uniformization":
        shift = log_f.max().item()
        value, error = _spectral_apply(cache, t, torch.exp(log_f - shift))
        accurate = bool((value > _SPECTRAL_MARGIN * error).all())
        if method == "spectral" or accurate:
            flags = () if accurate else ("spectral-cancellation",)
            return torch.log(value.clamp_min(0)) + shift, flags
    return _uniformized_log_apply(cache, t, log_f, rtol)


def log_heat_kernel(cache: SpectralCache, t: float, x: int, y: int) -> tuple[float, tuple[str, ...]]:
    _check_time(t)
    x = check_vertex(cache.space, x, "x")
    y = check_vertex(cache.space, y, "y")
    log_delta = torch.full((cache.n,), -math.inf, dtype=DTYPE)
    log_delta[y] = 0.0
    out, flags = log_semigroup_apply(cache, t, log_delta)
    return out[x].item() - math.log(cache.space.measure[y].item()), flags


def heat_kernel(cache: SpectralCache, t: float, x: int, y: int) -> KernelValue:
    """p_t(x, y) from the spectral sum, switching to log-space evaluation when the sum is unreliable."""
    _check_time(t)
    x = check_vertex(cache.space, x, "x")
    y = check_vertex(cache.space, y, "y")
    phi = cache.eigenvectors
    terms = phi[x] * phi[y] * cache.decay(t)
    raw = terms.sum().item()
    error = _CANCELLATION_EPS * terms.abs().sum().item()

    flags = []
    if raw < NEGATIVE_FLOOR:
        logger.warning("negative kernel value %.3g at t=%g, (%d, %d) floored to 0", raw, t, x, y)
        flags.append("negative-floor")
    if raw < LOG_SPACE_BELOW or raw < _SPECTRAL_MARGIN * error:
        log_value, extra = log_heat_kernel(cache, t, x, y)
        flags.append("log-space")
        flags.extend(extra)
        return KernelValue(t, x, y, math.exp(log_value), log_value, tuple(flags))
    value = max(raw, 0.0)
    return KernelValue(t, x, y, value, math.log(value), tuple(flags))


def chapman_kolmogorov_residual(cache: SpectralCache, t: float, r: float) -> float:
    if not 0 < r < t:
        raise ValueError(f"need 0 < r < t, got r={r}, t={t}")
    m = cache.space.measure
    lhs = heat_kernel_matrix(cache, t)
    rhs = (heat_kernel_matrix(cache, r) * m) @ heat_kernel_matrix(cache, t - r)
    return (lhs - rhs).abs().max().item()


def mass_conservation_defect(cache: SpectralCache, t: float) -> float:
    """max_x |sum_y p_t(x, y) m(y) - 1|."""
    p = heat_kernel_matrix(cache, t)
    return (p @ cache.space.measure - 1).abs().max().item()


def log_heat_kernel_matrix(cache: SpectralCache, t: float) -> tuple[torch.Tensor, tuple[str, ...]]:
    """log p_t(x, y) for all pairs, one log-space semigroup application per column."""
    _check_time(t)
    n = cache.n
    log_m = torch.log(cache.space.measure)
    out = torch.empty((n, n), dtype=DTYPE)
    flags = set()
    for y in range(n):
        log_delta = torch.full((n,), -math.inf, dtype=DTYPE)
        log_delta[y] = 0.0
        column, cflags = log_semigroup_apply(cache, t, log_delta)
        out[:, y] = column - log_m[y]
        flags.update(cflags)
    return out, tuple(sorted(flags))
