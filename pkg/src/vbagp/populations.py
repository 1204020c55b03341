"""Weighted sample populations and failure-probability estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import MarginalDistribution, as_generator


class EstimatorMismatchError(ValueError):
    pass


class SourceError(ValueError):
    pass


class IndependentNormal:
    """Joint density with independent Gaussian marginals."""

    def __init__(self, marginals):
        self.marginals = tuple(marginals)
        self.mean = np.array([mg.mean for mg in self.marginals])
        self.std = np.array([mg.std for mg in self.marginals])

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def logpdf(self, X) -> np.ndarray:
        z = (np.atleast_2d(X) - self.mean) / self.std
        return -0.5 * (z * z).sum(1) - np.log(self.std).sum() - 0.5 * self.dim * math.log(2 * math.pi)

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.logpdf(X))

    def sample(self, n: int, rng) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict:
        return {"kind": "independent_normal", "marginals": [mg.to_dict() for mg in self.marginals]}


def as_input_density(marginals) -> IndependentNormal:
    if isinstance(marginals, IndependentNormal):
        return marginals
    return IndependentNormal([mg if isinstance(mg, MarginalDistribution) else MarginalDistribution(*mg)
                              for mg in marginals])


@dataclass(frozen=True)
class Population:
    """Weighted sample set.  Monte Carlo populations carry unit weights;
    importance-sampling populations carry ``f_X / f_aux`` likelihood ratios."""

    samples: np.ndarray
    weights: np.ndarray
    source: str  # "mc" or "is"
    input_density: IndependentNormal = field(repr=False)
    aux_density: object = field(default=None, repr=False)
    bootstrapped: bool = False

    def __post_init__(self):
        if self.source not in ("mc", "is"):
            raise ValueError("source must be 'mc' or 'is'")
        if len(self.samples) < 1 or len(self.samples) != len(self.weights):
            raise ValueError("population needs at least one row and one weight per row")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.source == "mc" and np.any(self.weights != 1.0):
            raise ValueError("Monte Carlo populations have unit weights")

    @property
    def size(self) -> int:
        return len(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        m = self.samples.shape[1]
        header = ",".join([f"x{j + 1}" for j in range(m)] + ["weight"])
        np.savetxt(path, np.column_stack([self.samples, self.weights]), delimiter=",",
                   header=header, comments="")


@dataclass(frozen=True)
class FailureProbabilityEstimate:
    value: float
    cov: float  # inf when no failure was observed
    n: int
    kind: str  # "mc", "is" or "trajectory-mean"

    def to_dict(self) -> dict:
        return {"value": self.value, "cov": self.cov, "n": self.n, "kind": self.kind}


def sample_mc(marginals, n: int, stream) -> Population:
    if n < 1:
        raise ValueError("population size must be >= 1")
    dens = as_input_density(marginals)
    X = dens.sample(n, as_generator(stream))
    return Population(X, np.ones(n), "mc", dens)


def sample_is(input_density, aux_density, n: int, stream) -> Population:
    """Importance-sampling population drawn from ``aux_density``."""
    rng = as_generator(stream)
    X = aux_density.sample(n, rng)
    w = _is_weights(input_density, aux_density, X)
    return Population(X, w, "is", input_density, aux_density)


def _is_weights(input_density, aux_density, X):
    return np.exp(input_density.logpdf(X) - aux_density.logpdf(X))


def _values(population, classifier):
    if callable(classifier):
        return np.asarray(classifier(population.samples), dtype=float)
    return np.asarray(classifier, dtype=float)


def mc_cov(pf: float, n: int) -> float:
    """Monte Carlo coefficient of variation ``sqrt((1 - pf) / (n pf))``."""
    if pf <= 0.0:
        return math.inf
    return math.sqrt((1.0 - pf) / (n * pf))


def estimate_pf_mc(population: Population, classifier) -> FailureProbabilityEstimate:
    if population.source != "mc":
        raise EstimatorMismatchError("Monte Carlo estimator applied to an IS population")
    fails = _values(population, classifier) <= 0.0
    n = population.size
    pf = float(fails.mean())
    return FailureProbabilityEstimate(pf, mc_cov(pf, n), n, "mc")


def estimate_pf_is(population: Population, classifier) -> FailureProbabilityEstimate:
    if population.source != "is":
        raise EstimatorMismatchError("IS estimator applied to a Monte Carlo population")
    terms = population.weights * (_values(population, classifier) <= 0.0)
    n = population.size
    pf = float(terms.mean())
    if pf <= 0.0:
        cov = math.inf
    else:
        cov = math.sqrt(terms.var(ddof=1) / n) / pf if n > 1 else math.inf
    return FailureProbabilityEstimate(pf, cov, n, "is")


def estimate_pf(population: Population, classifier) -> FailureProbabilityEstimate:
    if population.source == "mc":
        return estimate_pf_mc(population, classifier)
    return estimate_pf_is(population, classifier)


def extend(population: Population, additional: int, stream) -> Population:
    """Append ``additional`` fresh draws from the population's own density."""
    if additional < 1:
        raise ValueError("additional must be >= 1")
    rng = as_generator(stream)
    if population.source == "mc":
        X = population.input_density.sample(additional, rng)
        w = np.ones(additional)
    else:
        aux = population.aux_density
        if aux is None or not hasattr(aux, "sample"):
            raise SourceError("auxiliary density is not sampleable")
        X = aux.sample(additional, rng)
        w = _is_weights(population.input_density, aux, X)
    return replace(population, samples=np.vstack([population.samples, X]),
                   weights=np.concatenate([population.weights, w]))


def bootstrap(population: Population, stream) -> Population:
    n = population.size
    idx = as_generator(stream).integers(0, n, size=n)
    return replace(population, samples=population.samples[idx], weights=population.weights[idx],
                   bootstrapped=True)
