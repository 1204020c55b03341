"""Learning functions for candidate selection, plus the AK-MCS baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from . import gp as gpmod
from .core import RandomStream, latin_hypercube
from .populations import estimate_pf_mc, extend, mc_cov, sample_mc
from .problems import CountingFunction, Problem
from .records import RunRecord

log = logging.getLogger(__name__)

U_STOP = 2.0
EFF_STOP = 1e-3


class ExhaustedCandidatesError(RuntimeError):
    pass


def misclassification_prob(mean, sd):
    """Probability that the GP is nonpositive: ``Phi(-mean / sd)``.

    A zero standard deviation gives the deterministic limit 1{mean <= 0}.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = special.ndtr(-mean / sd)
    p = np.where(sd > 0, p, (mean <= 0).astype(float))
    return float(p) if p.ndim == 0 else p


def u_function(mean, sd):
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.abs(mean) / sd
    u = np.where(sd > 0, u, np.inf)
    return float(u) if u.ndim == 0 else u


def eff_function(mean, sd, epsilon=None):
    """Expected feasibility; ``epsilon`` defaults to ``2 * sd``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    eps = 2.0 * sd if epsilon is None else np.asarray(epsilon, dtype=float)
    safe = np.where(sd > 0, sd, 1.0)
    t0 = -mean / safe
    tm = (-eps - mean) / safe
    tp = (eps - mean) / safe
    cdf, pdf = special.ndtr, lambda t: np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    eff = (mean * (2 * cdf(t0) - cdf(tm) - cdf(tp))
           - sd * (2 * pdf(t0) - pdf(tm) - pdf(tp))
           + eps * (cdf(tp) - cdf(tm)))
    eff = np.where(sd > 0, eff, 0.0)
    return float(eff) if eff.ndim == 0 else eff


@dataclass(frozen=True)
class LearningScore:
    index: int
    value: float
    kind: str


def duplicate_mask(model, candidates) -> np.ndarray:
    """True for candidate rows that coincide with a design input."""
    tree = cKDTree(model.standardize(model.x_doe))
    dist, _ = tree.query(model.standardize(np.atleast_2d(candidates)), k=1, p=np.inf,
                         distance_upper_bound=gpmod.DUPLICATE_TOL)
    return np.isfinite(dist)


def _best(model, candidates, s, kind):
    """Index of the best score whose row is not a design input, or None."""
    s = np.array(s, dtype=float, ndmin=1)
    bad = np.inf if kind == "U" else -np.inf
    pick = np.argmin if kind == "U" else np.argmax
    for _ in range(len(s)):
        i = int(pick(s))
        if s[i] == bad:
            return None
        if not gpmod.is_duplicate(model, candidates[i]):
            return i
        s[i] = bad
    return None


def score(kind: str, mean, sd):
    if kind == "U":
        return u_function(mean, sd)
    if kind == "EFF":
        return eff_function(mean, sd)
    raise ValueError(f"unknown learning function {kind!r}")


def select_candidate(model, candidates, kind: str = "EFF", prediction=None) -> LearningScore:
    """Best candidate under ``kind``: argmin of U or argmax of EFF.

    Rows duplicating a design input are excluded; ties go to the lowest index.
    """
    candidates = np.atleast_2d(candidates)
    if len(candidates) == 0:
        raise ExhaustedCandidatesError("no candidates")
    mean, sd = model.predict(candidates) if prediction is None else prediction
    s = np.array(score(kind, mean, sd), dtype=float, ndmin=1)
    i = _best(model, candidates, s, kind)
    if i is None:
        raise ExhaustedCandidatesError("every candidate is already in the design")
    return LearningScore(i, float(s[i]), kind)


def initial_doe(problem: Problem, n: int, stream, width: float = 5.0) -> np.ndarray:
    """LHS design with uniform margins over ``mean +- width * std``."""
    u = latin_hypercube(n, problem.dim, stream)
    lo = np.array([mg.mean - width * mg.std for mg in problem.marginals])
    hi = np.array([mg.mean + width * mg.std for mg in problem.marginals])
    return lo + u * (hi - lo)


@dataclass
class AkMcsConfig:
    learning: str = "EFF"
    n_mc_init: int = 50_000
    n_doe_init: int = 16
    cov_max: float = 0.03
    growth_factor: float = 0.25
    max_population: int = 10_000_000
    eval_budget: int = 500
    kernel: str = "matern52"
    n_restarts: int = 2
    doe_width: float = 5.0
    track_variances: bool = False
    n_t: int = 100


def ak_mcs_run(problem: Problem, config: AkMcsConfig, stream: RandomStream) -> RunRecord:
    """AK-MCS with U or EFF learning and population growth on COV failure."""
    from .variance import VarianceEstimator  # avoid a module cycle at import time

    t0 = time.perf_counter()
    g = CountingFunction(problem)
    rec = RunRecord(f"ak-mcs-{config.learning.lower()}", problem.name, config.n_doe_init)
    pop = sample_mc(problem.marginals, config.n_mc_init, stream.child(0))
    X = initial_doe(problem, config.n_doe_init, stream.child(1), config.doe_width)
    model = gpmod.fit(X, g(X), config.kernel, stream.child(2))
    k = 3
    while True:
        mean, sd = model.predict(pop.samples)
        pf = estimate_pf_mc(pop, mean).value
        s = score(config.learning, mean, sd)
        i = _best(model, pop.samples, s, config.learning)
        learned = i is None or (s[i] >= U_STOP if config.learning == "U" else s[i] <= EFF_STOP)
        variances = None
        if config.track_variances:
            est = VarianceEstimator(model, pop, stream.child(k), prediction=(mean, sd))
            k += 1
            variances = {"v_x": est.v_x().to_dict(), "v_gn": est.v_gn(config.n_t)[0].to_dict()}
        if learned:
            cov = mc_cov(pf, pop.size)
            if cov <= config.cov_max:
                rec.log("stop", pf, model.n, pop.size, variances)
                rec.pf, rec.converged = pf, True
                break
            if pop.size >= config.max_population:
                rec.log("stop", pf, model.n, pop.size, variances, "population cap reached")
                rec.pf, rec.failure = pf, "population cap reached before the COV target"
                break
            add = min(max(1, int(config.growth_factor * pop.size)), config.max_population - pop.size)
            pop = extend(pop, add, stream.child(k))
            k += 1
            rec.log("grow-population", pf, model.n, pop.size, variances)
            continue
        if g.calls >= config.eval_budget:
            rec.pf, rec.failure = pf, "evaluation budget exhausted"
            rec.log("stop", pf, model.n, pop.size, variances, "budget")
            break
        x = pop.samples[i]
        model = model.enrich(x, g(x)[0], stream.child(k), config.n_restarts)
        k += 1
        rec.log("enrich-GP", pf, model.n, pop.size, variances)
    rec.n_call = g.calls
    rec.wall_time = time.perf_counter() - t0
    return rec
