"""Variance decomposition of the GP-based failure-probability estimator.

The estimator ``Pf(X, G_n) = mean_i w_i 1{G_n(X_i) <= 0}`` depends on the
sampled population ``X`` and on the conditioned GP ``G_n``.  This module
estimates

* ``V_X``  - the variance due to the population, from ``w_i p(X_i)``;
* ``V_Gn`` - the variance due to the GP, across simulated trajectories;
* ``V_tot`` - the variance across (trajectory, bootstrap population) pairs,

each with an asymptotic confidence interval, plus the trajectory-mean
estimate ``pf_t`` and the total coefficient of variation.

Trajectories are only simulated on points whose classification is
uncertain (``|mu| / sigma`` below ``u_cut``); the remaining points keep the
sign of the kriging mean.  With the default cut of 4 the probability of a
flip at an excluded point is below 3.2e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_LEVEL, IntervalEstimate, InsufficientDataError, as_generator, empirical_variance_ci
from .learning import misclassification_prob
from .trajectories import DIRECT_MAX_POINTS, KL_CAPTURED, KL_NODES, TrajectoryEnsemble, make_sampler

U_CUT = 4.0
_BLOCK = 2_000_000  # matrix entries per trajectory block


class UndefinedCovError(ZeroDivisionError):
    pass


@dataclass
class VarianceReport:
    v_x: IntervalEstimate
    v_gn: IntervalEstimate
    pf: float
    cov_red: float
    n_t_used: int
    separated: bool
    v_tot: IntervalEstimate | None = None
    cov_tot: IntervalEstimate | None = None
    pf_t: float | None = None
    n_t_total: int | None = None

    @property
    def v_joint(self) -> float | None:
        if self.v_tot is None:
            return None
        return self.v_tot.point - self.v_gn.point - self.v_x.point

    def to_dict(self) -> dict:
        d = {
            "v_x": self.v_x.to_dict(),
            "v_gn": self.v_gn.to_dict(),
            "pf": self.pf,
            "cov_red": self.cov_red,
            "n_t_used": self.n_t_used,
            "separated": self.separated,
        }
        if self.v_tot is not None:
            d.update(v_tot=self.v_tot.to_dict(), cov_tot=self.cov_tot.to_dict(), pf_t=self.pf_t,
                     n_t_total=self.n_t_total, v_joint=self.v_joint)
        return d


def cov_red(v_x_sup: float, v_gn_sup: float, pf: float) -> float:
    """Reduced COV ``sqrt(V_Gn_sup + V_X_sup) / pf`` (independence assumed)."""
    if pf <= 0:
        raise UndefinedCovError("COV is undefined for a zero failure probability")
    return math.sqrt(v_gn_sup + v_x_sup) / pf


def exact_decomposition(table) -> dict:
    """Exact split of the variance of ``table[i, j]`` (trajectory ``i``,
    population ``j``, all pairs equally likely) into its population part,
    its GP part and their interaction.  The three parts sum to the total."""
    t = np.asarray(table, dtype=float)
    grand = t.mean()
    rows = t.mean(1) - grand
    cols = t.mean(0) - grand
    inter = t - grand - rows[:, None] - cols[None, :]
    return {"v_x": float(np.mean(cols ** 2)), "v_gn": float(np.mean(rows ** 2)),
            "v_joint": float(np.mean(inter ** 2)), "v_tot": float(np.mean((t - grand) ** 2))}


def v_x_from_probabilities(p, weights=None, level: float = DEFAULT_LEVEL) -> IntervalEstimate:
    """``Var(w p(X)) / N`` with its interval; ``p`` are failure probabilities."""
    p = np.asarray(p, dtype=float)
    terms = p if weights is None else np.asarray(weights) * p
    n = terms.size
    if n < 2:
        return IntervalEstimate(0.0, 0.0, 0.0, level)
    return empirical_variance_ci(terms, level).scaled(1.0 / n)


def pf_per_trajectory(values, weights=None) -> np.ndarray:
    """Failure-probability estimate of each trajectory row of ``values``."""
    values = np.atleast_2d(values)
    fails = values <= 0.0
    if weights is None:
        return fails.mean(1)
    return fails @ np.asarray(weights, dtype=float) / values.shape[1]


def v_gn_from_trajectories(values, weights=None, level: float = DEFAULT_LEVEL) -> IntervalEstimate:
    pfs = pf_per_trajectory(values, weights)
    if len(pfs) < 2:
        raise InsufficientDataError("at least two trajectories are needed")
    return empirical_variance_ci(pfs, level)


def estimate_v_x(model, population, level: float = DEFAULT_LEVEL) -> IntervalEstimate:
    mean, sd = model.predict(population.samples)
    w = None if population.source == "mc" else population.weights
    return v_x_from_probabilities(misclassification_prob(mean, sd), w, level)


def estimate_v_gn(model, population, ensemble: TrajectoryEnsemble,
                  level: float = DEFAULT_LEVEL) -> IntervalEstimate:
    if ensemble.values.shape[1] != population.size:
        raise ValueError("ensemble was not simulated on this population")
    w = None if population.source == "mc" else population.weights
    return v_gn_from_trajectories(ensemble.values, w, level)


class VarianceEstimator:
    """The variance estimators for one (model, population) state.

    Predictions are cached once, as are the trajectories already drawn, and
    both are shared between estimators.
    """

    def __init__(self, model, population, stream, *, prediction=None, level: float = DEFAULT_LEVEL,
                 u_cut: float = U_CUT, direct_max: int = DIRECT_MAX_POINTS, kl_nodes: int = KL_NODES,
                 kl_captured: float = KL_CAPTURED):
        self.model = model
        self.population = population
        self.level = level
        self.rng = as_generator(stream)
        self.mean, self.sd = model.predict(population.samples) if prediction is None else prediction
        self.p = misclassification_prob(self.mean, self.sd)
        self.n = population.size
        self.w = population.weights
        self.unit_weights = population.source == "mc"
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(self.sd > 0, np.abs(self.mean) / self.sd, np.inf)
        self.uncertain = np.flatnonzero(u < u_cut)
        certain_fail = (u >= u_cut) & (self.mean <= 0)
        self.certain_fail = np.flatnonzero(certain_fail)
        self.base = float(self.w[certain_fail].sum()) / self.n
        self._sampler_args = dict(direct_max=direct_max, n_nodes=kl_nodes, captured=kl_captured)
        self._sampler = None
        self._pf_gn = np.empty(0)
        self._pf_tot = np.empty(0)

    @property
    def pf(self) -> float:
        """Estimate with the kriging mean as classifier."""
        return float(self.w @ (self.mean <= 0)) / self.n

    def sampler(self):
        if self._sampler is None and len(self.uncertain):
            self._sampler = make_sampler(self.model, self.population.samples[self.uncertain],
                                         self.rng, **self._sampler_args)
        return self._sampler

    def _blocks(self, n_t):
        size = max(1, _BLOCK // max(1, len(self.uncertain)))
        done = 0
        while done < n_t:
            b = min(size, n_t - done)
            yield b
            done += b

    def draw_pf(self, n_t: int) -> np.ndarray:
        """Per-trajectory estimates on the fixed population."""
        if len(self.uncertain) == 0:
            return np.full(n_t, self.base)
        wu = self.w[self.uncertain]
        out = []
        for b in self._blocks(n_t):
            out.append(self.base + self.sampler().failure_sums(b, self.rng, wu) / self.n)
        return np.concatenate(out)

    def draw_pf_bootstrap(self, n_t: int) -> np.ndarray:
        """Estimates for (trajectory, bootstrap population) pairs.

        A bootstrap resample is represented by multinomial counts; points
        whose classification is certain are pooled when weights are equal.
        """
        unc = self.uncertain
        if self.unit_weights:
            n_fail = len(self.certain_fail)
            n_safe = self.n - len(unc) - n_fail
            probs = np.concatenate([np.full(len(unc), 1.0 / self.n), [n_fail / self.n, n_safe / self.n]])
        else:
            order = np.concatenate([unc, self.certain_fail])
            rest = self.n - len(order)
            probs = np.concatenate([np.full(len(order), 1.0 / self.n), [rest / self.n]])
            wf = self.w[self.certain_fail]
        probs = probs / probs.sum()
        wu = self.w[unc]
        out = []
        for b in self._blocks(n_t):
            counts = self.rng.multinomial(self.n, probs, size=b)
            cu = counts[:, :len(unc)]
            if len(unc):
                part = self.sampler().failure_sums(b, self.rng, cu * wu)
            else:
                part = np.zeros(b)
            if self.unit_weights:
                fixed = counts[:, len(unc)].astype(float)
            else:
                fixed = counts[:, len(unc):len(unc) + len(self.certain_fail)] @ wf
            out.append((part + fixed) / self.n)
        return np.concatenate(out)

    def v_x(self) -> IntervalEstimate:
        return v_x_from_probabilities(self.p, None if self.unit_weights else self.w, self.level)

    def v_gn(self, n_t: int):
        """Interval for V_Gn using at least ``n_t`` trajectories (cached draws reused)."""
        if n_t < 2:
            raise InsufficientDataError("at least two trajectories are needed")
        if len(self._pf_gn) < n_t:
            self._pf_gn = np.concatenate([self._pf_gn, self.draw_pf(n_t - len(self._pf_gn))])
        return empirical_variance_ci(self._pf_gn[:n_t], self.level), n_t

    def widen_v_gn_until_separated(self, v_x: IntervalEstimate, n_t0: int = 100, max_nt: int = 3200,
                                   project: bool = False):
        """Double the trajectory count until the V_Gn and V_X intervals are
        disjoint or ``max_nt`` is reached.  Returns (interval, n_t, separated).

        With ``project`` the search also gives up early when the V_Gn
        half-width, shrunk as ``n_t ** -0.5`` to ``max_nt``, would still leave
        the intervals overlapping.
        """
        if max_nt < n_t0:
            raise ValueError("max_nt must be >= the initial trajectory count")
        n_t = n_t0
        while True:
            ci, _ = self.v_gn(n_t)
            if ci.disjoint(v_x):
                return ci, n_t, True
            if n_t >= max_nt:
                return ci, n_t, False
            if project:
                hw = ci.half_width * math.sqrt(n_t / max_nt)
                if abs(ci.point - v_x.point) <= hw + v_x.half_width:
                    return ci, n_t, False
            n_t = min(2 * n_t, max_nt)

    def total(self, n_t: int):
        """``(pf_t, V_tot interval, COV_tot interval)`` from ``n_t`` pairs."""
        if n_t < 2:
            raise InsufficientDataError("at least two trajectories are needed")
        if len(self._pf_tot) < n_t:
            self._pf_tot = np.concatenate([self._pf_tot, self.draw_pf_bootstrap(n_t - len(self._pf_tot))])
        pfs = self._pf_tot[:n_t]
        pf_t = float(pfs.mean())
        v = empirical_variance_ci(pfs, self.level)
        if pf_t <= 0:
            raise UndefinedCovError("trajectory-mean failure probability is zero")
        cov = IntervalEstimate(math.sqrt(v.point) / pf_t, math.sqrt(v.lower) / pf_t,
                               math.sqrt(v.upper) / pf_t, self.level)
        return pf_t, v, cov

    def total_until_decided(self, cov_max: float, n_t0: int = 100, max_nt: int = 3200):
        """Grow the pair count until ``cov_max`` leaves the COV_tot interval."""
        n_t = n_t0
        while True:
            pf_t, v, cov = self.total(n_t)
            if not cov.contains(cov_max) or n_t >= max_nt:
                return pf_t, v, cov, n_t
            n_t = min(2 * n_t, max_nt)


def estimate_total(model, population, n_t: int, stream, **kwargs):
    """Trajectory-mean estimate with V_tot / COV_tot intervals, from bootstrap pairs."""
    est = VarianceEstimator(model, population, stream, **kwargs)
    return est.total(n_t)


def widen_v_gn_until_separated(v_x: IntervalEstimate, model, population, stream,
                               n_t0: int = 100, max_nt: int = 3200, **kwargs):
    est = VarianceEstimator(model, population, stream, **kwargs)
    return est.widen_v_gn_until_separated(v_x, n_t0, max_nt)
