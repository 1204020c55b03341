"""Non-parametric adaptive importance sampling.

A weighted Gaussian kernel density is refitted on all samples drawn so far
while an intermediate threshold ``gamma_k`` is driven down to 0.  The
performance values can come from the true function (hard indicator weights)
or from a GP surrogate, in which case ``P[G_n <= gamma_k]`` replaces the
indicator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import as_generator
from .populations import Population, as_input_density

MODES = ("hard", "gp-probability")
MAX_ITERATIONS = 50
RESIDUAL_EPS = 1e-12
PRUNE = 1e-12  # mixture components lighter than this fraction are dropped


class DensityCollapseError(RuntimeError):
    pass


class KdeDensity:
    """Gaussian mixture with a shared diagonal bandwidth."""

    def __init__(self, centers, weights, bandwidth):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        w = np.asarray(weights, dtype=float)
        h = np.asarray(bandwidth, dtype=float)
        if len(centers) != len(w):
            raise ValueError("one weight per center is required")
        if np.any(h <= 0) or h.shape != (centers.shape[1],):
            raise ValueError("bandwidth must be positive, one value per dimension")
        total = w.sum()
        if not total > 0:
            raise DensityCollapseError("all kernel weights are zero")
        keep = w > PRUNE * w.max()
        self.centers = centers[keep]
        self.weights = w[keep] / w[keep].sum()
        self.bandwidth = h
        self._zc = self.centers / h
        self._zc2 = (self._zc ** 2).sum(1)
        self._logw = np.log(self.weights)
        self._lognorm = -np.log(h).sum() - 0.5 * len(h) * math.log(2 * math.pi)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def logpdf(self, X, chunk: int = 4_000_000) -> np.ndarray:
        z = np.atleast_2d(np.asarray(X, dtype=float)) / self.bandwidth
        z2 = (z ** 2).sum(1)
        out = np.empty(len(z))
        step = max(1, chunk // len(self._zc))
        for s in range(0, len(z), step):
            d2 = z2[s:s + step, None] + self._zc2[None, :] - 2.0 * z[s:s + step] @ self._zc.T
            np.maximum(d2, 0.0, out=d2)
            out[s:s + step] = special.logsumexp(self._logw - 0.5 * d2, axis=1)
        return out + self._lognorm

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.logpdf(X))

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.centers[idx] + self.bandwidth * rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict:
        return {"kind": "kde", "centers": self.centers.tolist(), "weights": self.weights.tolist(),
                "bandwidth": self.bandwidth.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KdeDensity":
        return cls(d["centers"], d["weights"], d["bandwidth"])


class DefensiveMixture:
    """``(1 - alpha) * kde + alpha * wide`` where ``wide`` has the same
    centers and weights as ``kde`` but the input standard deviations as
    bandwidth.

    A bare Gaussian KDE has much lighter tails than ``f_X``, so ``f_X / g``
    is unbounded and the estimator can have infinite variance.  The wide
    component restores ``f_X``-like tails around every failure lobe.
    """

    def __init__(self, kde: KdeDensity, input_density, alpha: float):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.kde = kde
        self.alpha = alpha
        self.wide = KdeDensity(kde.centers, kde.weights, np.maximum(input_density.std, kde.bandwidth))

    @property
    def dim(self) -> int:
        return self.kde.dim

    def logpdf(self, X) -> np.ndarray:
        a = np.log1p(-self.alpha) + self.kde.logpdf(X)
        b = math.log(self.alpha) + self.wide.logpdf(X)
        return np.logaddexp(a, b)

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.logpdf(X))

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        wide = rng.random(n) < self.alpha
        out = self.kde.sample(n, rng)
        k = int(wide.sum())
        if k:
            out[wide] = self.wide.sample(k, rng)
        return out

    def to_dict(self) -> dict:
        return {"kind": "defensive", "alpha": self.alpha, "kde": self.kde.to_dict(),
                "wide_bandwidth": self.wide.bandwidth.tolist()}


def silverman_bandwidth(centers, weights) -> np.ndarray:
    """Diagonal Silverman rule on a weighted sample, with the effective size
    ``(sum w)^2 / sum w^2`` in place of the count."""
    centers = np.atleast_2d(centers)
    w = np.asarray(weights, dtype=float)
    sw = w.sum()
    if not sw > 0:
        raise DensityCollapseError("all kernel weights are zero")
    k_eff = sw * sw / (w * w).sum()
    mu = w @ centers / sw
    var = w @ (centers - mu) ** 2 / sw
    sd = np.sqrt(np.maximum(var, 0.0))
    m = centers.shape[1]
    factor = (4.0 / ((m + 2) * k_eff)) ** (1.0 / (m + 4))
    h = sd * factor
    # a single effective center has zero spread; fall back to a small kernel
    floor = 1e-3 * np.maximum(np.abs(mu), 1.0)
    return np.where(h > 0, h, floor)


def kde_fit(centers, raw_weights, bandwidth=None) -> KdeDensity:
    """Mixture at ``centers`` with normalized weights; Silverman bandwidth by default."""
    w = np.asarray(raw_weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise DensityCollapseError("all kernel weights are zero")
    h = silverman_bandwidth(centers, w) if bandwidth is None else bandwidth
    return KdeDensity(centers, w, h)


def kde_sample(density: KdeDensity, n: int, stream) -> np.ndarray:
    return density.sample(n, as_generator(stream))


def kde_eval(density: KdeDensity, X) -> np.ndarray:
    return density.pdf(X)


@dataclass
class NaisConfig:
    rho: float = 0.1
    n_is: int = 2000
    mode: str = "gp-probability"
    residual_tol: float = 1e-3
    max_iterations: int = MAX_ITERATIONS
    defensive: float = 0.05

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.n_is < 100:
            raise ValueError("n_is must be >= 100")
        if not 0 <= self.defensive < 1:
            raise ValueError("defensive fraction must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class NaisResult:
    density: KdeDensity
    population: Population
    all_samples: np.ndarray
    pf: float
    gammas: list = field(default_factory=list)
    stagnated: bool = False
    iterations: int = 0


def _evaluate(evaluator, X, mode):
    out = evaluator(X)
    if mode == "hard":
        if isinstance(out, tuple):
            out = out[0]
        return np.asarray(out, dtype=float), None
    if not isinstance(out, tuple):
        return np.asarray(out, dtype=float), np.zeros(len(X))
    return np.asarray(out[0], dtype=float), np.asarray(out[1], dtype=float)


def _level_prob(mean, sd, gamma):
    """``P[G <= gamma]``: an indicator when ``sd`` is zero or absent."""
    if sd is None:
        return (mean <= gamma).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = special.ndtr((gamma - mean) / sd)
    return np.where(sd > 0, p, (mean <= gamma).astype(float))


def nais_run(evaluator, marginals, config: NaisConfig | None = None, stream=None) -> NaisResult:
    """Drive ``gamma_k`` to 0 and return the last auxiliary density.

    ``evaluator`` maps an (n, m) array to performance values, or to a
    ``(mean, sd)`` pair for GP-probability weights.  The returned population
    was drawn from the returned density and carries ``f_X / g`` weights, so
    it can be extended consistently.
    """
    cfg = config or NaisConfig()
    rng = as_generator(stream)
    fx = as_input_density(marginals)
    n = cfg.n_is

    X = fx.sample(n, rng)
    mean, sd = _evaluate(evaluator, X, cfg.mode)
    gamma = max(float(np.quantile(mean, cfg.rho)), 0.0)
    gammas = [gamma]
    w0 = _level_prob(mean, sd, gamma)
    wrap = (lambda kde: DefensiveMixture(kde, fx, cfg.defensive)) if cfg.defensive > 0 else (lambda kde: kde)
    density = wrap(kde_fit(X, w0))
    stagnated = False
    samples, means, sds, log_ratio = [], [], [], []
    all_samples = [X]
    k = 0
    while True:
        k += 1
        Xk = density.sample(n, rng)
        mk, sk = _evaluate(evaluator, Xk, cfg.mode)
        lr = fx.logpdf(Xk) - density.logpdf(Xk)
        samples.append(Xk)
        means.append(mk)
        sds.append(sk)
        log_ratio.append(lr)
        all_samples.append(Xk)
        if gamma == 0:
            break  # drawn from the density fitted at the failure threshold itself
        if k >= cfg.max_iterations:
            stagnated = True
            break
        prev = gamma
        gamma = max(float(np.quantile(mk, cfg.rho)), 0.0)
        gammas.append(gamma)
        if gamma > 0 and abs(gamma - prev) / max(abs(prev), RESIDUAL_EPS) < cfg.residual_tol:
            stagnated = True
            break
        sa = None if sds[0] is None else np.concatenate(sds)
        w = _level_prob(np.concatenate(means), sa, gamma) * np.exp(np.concatenate(log_ratio))
        density = wrap(kde_fit(np.vstack(samples), w))

    ratio = np.exp(lr)
    pop = Population(Xk, ratio, "is", fx, density)
    pf = float(np.mean(ratio * (mk <= 0)))
    return NaisResult(density, pop, np.vstack(all_samples), pf, gammas, stagnated, k)
