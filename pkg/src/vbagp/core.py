"""Probability primitives, seeded random streams, Latin hypercube designs
and empirical variance with asymptotic confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

DEFAULT_LEVEL = 0.95


class InsufficientDataError(ValueError):
    pass


def _check_finite(z):
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input to a normal-distribution primitive")
    return arr


def _unwrap(arr):
    return float(arr) if arr.ndim == 0 else arr


def std_normal_cdf(z):
    """Standard normal CDF, vectorized."""
    return _unwrap(special.ndtr(_check_finite(z)))


def std_normal_pdf(z):
    z = _check_finite(z)
    return _unwrap(np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))


def std_normal_quantile(p):
    p = _check_finite(p)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("quantile requires 0 < p < 1")
    return _unwrap(special.ndtri(p))


@dataclass(frozen=True)
class RandomStream:
    """A reproducible substream identified by ``(seed, stream_id)``.

    Streams derive their generator through :class:`numpy.random.SeedSequence`
    spawn keys, so distinct ids are statistically independent.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RandomStream":
        # nested ids keep runs of an experiment apart from each other's internals
        return RandomStream(self.seed, self.stream_id * 1_000_003 + index + 1)


def as_generator(stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RandomStream):
        return stream.generator()
    return np.random.default_rng(stream)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    level: float = DEFAULT_LEVEL

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if not self.lower <= self.point <= self.upper:
            raise ValueError(f"inconsistent interval {self.lower} <= {self.point} <= {self.upper}")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    def scaled(self, factor: float) -> "IntervalEstimate":
        return IntervalEstimate(self.point * factor, self.lower * factor, self.upper * factor, self.level)

    def disjoint(self, other: "IntervalEstimate") -> bool:
        return self.upper < other.lower or other.upper < self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper, "level": self.level}

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalEstimate":
        return cls(d["point"], d["lower"], d["upper"], d["level"])


@dataclass(frozen=True)
class MarginalDistribution:
    mean: float = 0.0
    std: float = 1.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported marginal kind {self.kind!r}")
        if not self.std > 0:
            raise ValueError("std must be positive")

    def ppf(self, u):
        return self.mean + self.std * special.ndtri(u)

    def cdf(self, x):
        return special.ndtr((np.asarray(x) - self.mean) / self.std)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "std": self.std}


def latin_hypercube(n: int, dims: int, stream, marginals=None) -> np.ndarray:
    """Latin hypercube design of ``n`` points mapped through ``marginals``.

    Each column has exactly one point in each of ``n`` equiprobable strata.
    Without marginals the design lives on the unit hypercube.
    """
    if n < 1 or dims < 1:
        raise ValueError("latin_hypercube needs n >= 1 and dims >= 1")
    rng = as_generator(stream)
    u = np.empty((n, dims))
    for j in range(dims):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    if marginals is None:
        return u
    if len(marginals) != dims:
        raise ValueError("one marginal per dimension expected")
    # keep strictly inside (0,1) before the inverse CDF
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return np.column_stack([marginals[j].ppf(u[:, j]) for j in range(dims)])


def empirical_variance_ci(sample, level: float = DEFAULT_LEVEL) -> IntervalEstimate:
    """Unbiased empirical variance and its asymptotic CLT interval.

    The half width is ``k * sqrt(n * var((z - zbar)**2)) / (n - 1)`` with ``k``
    the two-sided normal quantile for ``level`` (1.96 at 0.95); the lower
    bound is clamped at zero.
    """
    z = np.asarray(sample, dtype=float).ravel()
    n = z.size
    if n < 2:
        raise InsufficientDataError("need at least two values for a variance interval")
    dev2 = (z - z.mean()) ** 2
    var = float(dev2.sum() / (n - 1))
    k = std_normal_quantile(0.5 + 0.5 * level)
    half = k * np.sqrt(n * np.var(dev2, ddof=1)) / (n - 1)
    return IntervalEstimate(var, max(0.0, var - half), var + half, level)
