"""Client-order permutations, without-replacement participation and RNG streams.

All randomness flows from a run seed through :func:`stream`, which derives an
independent Philox generator for each ``(purpose, index...)`` key. Two runs that
share a seed therefore see the same permutations regardless of which algorithm
consumes them or in what order the streams are opened.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .objectives import ConfigurationError

# purpose tags for stream derivation; values are part of the reproducibility contract
PERMUTATION = 1
NOISE = 2
PARTITION = 3
SWOR = 4


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *index)``."""
    if seed < 0:
        raise ConfigurationError("seeds must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def sample_permutation(M: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ordering of the client indices ``0..M-1``."""
    if M < 1:
        raise ConfigurationError("need at least one client to permute")
    return rng.permutation(M)


@dataclass(frozen=True)
class ParticipationPlan:
    selected: np.ndarray  # client indices in visiting order
    M: int

    @property
    def S(self) -> int:
        return self.selected.size


def sample_participants(M: int, S: int, rng: np.random.Generator) -> ParticipationPlan:
    """First ``S`` entries of a fresh permutation: ``S`` clients without replacement."""
    if not 1 <= S <= M:
        raise ConfigurationError(f"participation S={S} must satisfy 1 <= S <= M={M}")
    return ParticipationPlan(sample_permutation(M, rng)[:S], M)


@lru_cache(maxsize=64)
def _order_schedule(seed: int, M: int, S: int, R: int) -> np.ndarray:
    out = np.empty((R, S), dtype=np.int64)
    for r in range(R):
        out[r] = sample_participants(M, S, stream(seed, PERMUTATION, r)).selected
    out.setflags(write=False)
    return out


def order_schedule(seed: int, M: int, S: int, R: int) -> np.ndarray:
    """Per-round participant orders, shape ``(R, S)``; round ``r`` uses its own stream."""
    return _order_schedule(int(seed), int(M), int(S), int(R))


def noise_schedule(seed: int, M: int, R: int, K: int, d: int, sigma: float) -> np.ndarray:
    """Gaussian noise draws, shape ``(M, R, K, d)``, one substream per client.

    Client ``m`` consumes its stream in ``(round, step)`` order, so its noise is
    independent of who else participates and of the execution schedule.
    """
    out = np.zeros((M, R, K, d))
    if sigma == 0:
        return out
    std = sigma / np.sqrt(d)
    for m in range(M):
        out[m] = stream(seed, NOISE, m).normal(0.0, std, size=(R, K, d))
    return out


def population_variance(vectors) -> float:
    """``(1/n) sum ||x_i - mean||^2`` over the rows of ``vectors``."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    return float(np.mean(np.sum((v - v.mean(axis=0)) ** 2, axis=1)))


def swor_variance_identity(n: int, s: int, zeta_sq: float) -> float:
    """Closed-form variance of a without-replacement sample mean."""
    if not 1 <= s <= n:
        raise ConfigurationError(f"sample size s={s} must satisfy 1 <= s <= n={n}")
    if n == 1:
        return 0.0
    return (n - s) / (s * (n - 1)) * zeta_sq


def swor_mean_stats(vectors, s: int, trials: int, rng: np.random.Generator):
    """Empirical bias and variance of the mean of ``s`` units drawn without replacement.

    Returns ``(mean_err, var)`` where ``mean_err`` is the average deviation of
    the sample mean from the population mean (a d-vector) and ``var`` is the
    mean squared norm of that deviation.
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if not 1 <= s <= n:
        raise ConfigurationError(f"sample size s={s} must satisfy 1 <= s <= n={n}")
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    centered = v - v.mean(axis=0)
    if s == n:
        return np.zeros(v.shape[1]), 0.0
    # argsort of iid uniforms gives a uniform permutation per row
    keys = rng.random((trials, n))
    picks = np.argpartition(keys, s - 1, axis=1)[:, :s]
    dev = centered[picks].mean(axis=1)
    return dev.mean(axis=0), float(np.mean(np.sum(dev * dev, axis=1)))
