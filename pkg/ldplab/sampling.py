from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ldplab.dirichlet import SpectralCache

# largest seed that fits the low half of a Philox key
MAX_SEED = 2**64 - 1


def stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, index); streams for different indices are independent."""
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must lie in [0, 2^64), got {seed}")
    if index < 0:
        raise ValueError(f"stream index must be nonnegative, got {index}")
    return np.random.Generator(np.random.Philox(key=(index << 64) | seed))


def streams(seed: int, first: int, count: int) -> list[np.random.Generator]:
    """Generators for samples first, ..., first + count - 1 of a seed-`seed` run."""
    return [stream(seed, i) for i in range(first, first + count)]


def multinomial(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from (unnormalised) probabilities on the last axis.

    argmax(p / E) with E ~ Exp(1) picks index i with probability p_i / sum p.
    """
    probs = np.asarray(probs, dtype=np.float64)
    q = rng.exponential(1.0, size=probs.shape)
    return np.argmax(probs / q, axis=-1)


@dataclass(frozen=True)
class JumpTable:
    """Rows of the uniformized jump matrix P = I + A/q stored as padded neighbour lists with cumulative weights."""

    rate: float
    neighbours: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_cache(cls, cache: SpectralCache) -> "JumpTable":
        p = cache.jump_matrix.cpu().numpy()
        support = p > 0
        width = int(support.sum(axis=1).max())
        n = p.shape[0]
        neighbours = np.tile(np.arange(n)[:, None], (1, width))
        cumulative = np.ones((n, width))
        for x in range(n):
            (cols,) = np.nonzero(support[x])
            neighbours[x, : len(cols)] = cols
            cumulative[x, : len(cols)] = np.minimum(np.cumsum(p[x, cols]), 1.0)
            # rounding must not leave a gap above the last entry
            cumulative[x, len(cols) - 1] = 1.0
        return cls(cache.jump_rate, neighbours, cumulative)

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One step of P per chain, driven by the uniforms `u`."""
        choice = (u[:, None] >= self.cumulative[states]).sum(axis=1)
        choice = np.minimum(choice, self.neighbours.shape[1] - 1)
        return self.neighbours[states, choice]

    def advance(self, states: np.ndarray, duration: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        """Run every chain for `duration` physical time: Poisson(q duration) steps of P each.

        Chain i takes its hop count and its uniforms from rngs[i] only, so a chain's trajectory does not depend on
        which other chains share the batch.
        """
        if len(rngs) != len(states):
            raise ValueError(f"need one generator per chain, got {len(rngs)} for {len(states)} chains")
        mean = self.rate * duration
        hops = np.array([rng.poisson(mean) for rng in rngs], dtype=np.int64)
        u = np.ones((len(states), int(hops.max(initial=0))))
        for row, (rng, k) in enumerate(zip(rngs, hops)):
            u[row, :k] = rng.random(k)
        states = np.array(states, dtype=np.int64)
        for k in range(u.shape[1]):
            active = hops > k
            states = np.where(active, self.step(states, u[:, k]), states)
        return states
