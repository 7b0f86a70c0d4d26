"""Random-variate generation for the Gibbs machinery.

Four samplers only: truncated normal, gamma (rate parameterisation),
univariate normal (precision parameterisation), and multivariate normal.
All draws go through an :class:`RngStream`, so a (seed, stream_id) pair
fully determines the sequence of values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError

__all__ = [
    "RngStream",
    "TruncatedNormalParams",
    "sample_truncated_normal",
    "sample_truncated_normal_vector",
    "sample_gamma",
    "sample_normal",
    "sample_multivariate_normal",
]

# Below this lower bound (in units of prior standard deviations) plain
# normal rejection accepts often enough; past it we switch to the
# exponential-proposal tail sampler.
_TAIL_THRESHOLD = 1.0

# Jitter policy for near-singular posterior covariances.
_JITTER_SCALE = 1e-10
_JITTER_DOUBLINGS = 8


@dataclass
class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    Two streams built from the same pair produce bit-identical sequences;
    distinct stream_ids give statistically independent streams.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream_id: int) -> "RngStream":
        """Derive an independent stream keyed by (seed, stream_id)."""
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), int(stream_id))
        )
        out = RngStream.__new__(RngStream)
        out.seed = self.seed
        out.stream_id = stream_id
        out._gen = np.random.Generator(np.random.PCG64(ss))
        return out


@dataclass(frozen=True)
class TruncatedNormalParams:
    """Location/precision of a normal restricted to [0, inf)."""

    mu: float
    tau: float


def _check_positive(name: str, value: float) -> None:
    if not np.isfinite(value) or value <= 0.0:
        raise ParameterError(f"{name} must be positive and finite, got {value!r}")


def sample_truncated_normal(params: TruncatedNormalParams, rng: RngStream) -> float:
    """Draw from a normal with precision ``tau`` renormalised onto [0, inf)."""
    _check_positive("tau", params.tau)
    if not np.isfinite(params.mu):
        raise ParameterError(f"mu must be finite, got {params.mu!r}")
    out = sample_truncated_normal_vector(
        np.array([params.mu]), np.array([params.tau]), rng
    )
    return float(out[0])


def sample_truncated_normal_vector(
    mu: np.ndarray, tau: np.ndarray, rng: RngStream
) -> np.ndarray:
    """Vectorised truncated-normal draws, one per (mu, tau) pair.

    Rejection strategy: draws are standard normals kept above the lower
    bound a = -mu*sqrt(tau) while a < 1 (acceptance at least ~16%); for
    a >= 1 an exponential proposal with rate (a + sqrt(a^2+4))/2 is used,
    which stays efficient arbitrarily deep in the tail.
    """
    mu = np.asarray(mu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if mu.shape != tau.shape:
        raise ParameterError("mu and tau must have matching shapes")
    if not np.all(np.isfinite(mu)):
        raise ParameterError("mu must be finite")
    if not (np.all(np.isfinite(tau)) and np.all(tau > 0.0)):
        raise ParameterError("tau must be positive and finite")

    gen = rng.generator
    sqrt_tau = np.sqrt(tau)
    a = -mu * sqrt_tau  # lower bound after standardising
    z = np.empty_like(mu)

    body = a < _TAIL_THRESHOLD
    if np.any(body):
        idx = np.flatnonzero(body)
        bound = a[idx]
        got = np.zeros(idx.size, dtype=bool)
        vals = np.empty(idx.size)
        while not got.all():
            pending = ~got
            cand = gen.standard_normal(int(pending.sum()))
            ok = cand >= bound[pending]
            sub = np.flatnonzero(pending)[ok]
            vals[sub] = cand[ok]
            got[sub] = True
        z[idx] = vals

    tail = ~body
    if np.any(tail):
        idx = np.flatnonzero(tail)
        bound = a[idx]
        rate = 0.5 * (bound + np.sqrt(bound * bound + 4.0))
        got = np.zeros(idx.size, dtype=bool)
        vals = np.empty(idx.size)
        while not got.all():
            pending = ~got
            n = int(pending.sum())
            cand = bound[pending] + gen.exponential(1.0, size=n) / rate[pending]
            accept = gen.random(n) <= np.exp(-0.5 * (cand - rate[pending]) ** 2)
            sub = np.flatnonzero(pending)[accept]
            vals[sub] = cand[accept]
            got[sub] = True
        z[idx] = vals

    # z >= a exactly, so mu + z/sqrt(tau) >= 0 up to rounding; clamp the
    # last ulp so the support contract holds bit-for-bit.
    return np.maximum(mu + z / sqrt_tau, 0.0)


def sample_gamma(shape: float, rate: float, rng: RngStream) -> float:
    """Draw from Gamma(shape, rate); mean is shape/rate."""
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    return float(rng.generator.gamma(shape, 1.0 / rate))


def sample_normal(mu: float, tau: float, rng: RngStream) -> float:
    """Draw from a normal with mean ``mu`` and precision ``tau``."""
    _check_positive("tau", tau)
    if not np.isfinite(mu):
        raise ParameterError(f"mu must be finite, got {mu!r}")
    return float(mu + rng.generator.standard_normal() / np.sqrt(tau))


def sample_normal_vector(mu: np.ndarray, tau: np.ndarray, rng: RngStream) -> np.ndarray:
    """Vectorised normal draws with per-element precision."""
    mu = np.asarray(mu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if not (np.all(np.isfinite(tau)) and np.all(tau > 0.0)):
        raise ParameterError("tau must be positive and finite")
    return mu + rng.generator.standard_normal(mu.shape) / np.sqrt(tau)


def sample_multivariate_normal(
    mean: np.ndarray, covariance: np.ndarray, rng: RngStream
) -> np.ndarray:
    """Draw from N(mean, covariance) via a jittered Cholesky factorisation.

    Posterior covariances can be near-singular when ARD has deactivated
    factors, so failed factorisations retry with additive diagonal jitter
    starting at 1e-10 * trace/K and doubling up to eight times.
    """
    mean = np.asarray(mean, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    k = mean.shape[0]
    if covariance.shape != (k, k):
        raise ParameterError("covariance shape does not match mean length")
    if not np.allclose(covariance, covariance.T, rtol=1e-8, atol=1e-12):
        raise ParameterError("covariance must be symmetric")
    sym = 0.5 * (covariance + covariance.T)

    base = _JITTER_SCALE * max(np.trace(sym) / k, np.finfo(float).tiny)
    jitters = [0.0] + [base * 2.0**i for i in range(_JITTER_DOUBLINGS + 1)]
    chol = None
    for jitter in jitters:
        try:
            chol = np.linalg.cholesky(sym + jitter * np.eye(k))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        min_eig = float(np.linalg.eigvalsh(sym).min())
        raise NumericalError(
            f"covariance not positive-definite after jitter; min eigenvalue ~ {min_eig:.3e}"
        )
    return mean + chol @ rng.generator.standard_normal(k)
