"""Variance-based active GP learning (Vb-AGP) with MC or IS populations.

Each iteration estimates the failure probability with the kriging mean,
splits the estimator variance into its population part ``V_X`` and its GP
part ``V_Gn``, and then either stops (after a total-COV check), enlarges the
population, or enriches the design with the EFF-best candidate, depending on
which source dominates.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import gp as gpmod
from .core import DEFAULT_LEVEL, RandomStream
from .learning import ExhaustedCandidatesError, initial_doe, select_candidate
from .nais import DensityCollapseError, NaisConfig, nais_run
from .populations import extend, sample_mc
from .problems import CountingFunction, Problem
from .records import RunRecord
from .trajectories import DIRECT_MAX_POINTS
from .variance import U_CUT, VarianceEstimator, cov_red

log = logging.getLogger(__name__)


class ZeroFailureError(RuntimeError):
    """The MC estimate stayed at zero; the event is too rare for the population."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class VbagpConfig:
    mode: str = "mcs"
    cov_max: float = 0.03
    n_mc_init: int = 50_000
    n_is_init: int = 2_000
    n_doe_init: int = 16
    kernel: str = "matern52"
    growth_factor: float = 0.25
    max_population: int = 10_000_000
    n_t_init: int = 100
    n_t_max: int = 3200
    project_separation: bool = True
    eval_budget: int = 500
    level: float = DEFAULT_LEVEL
    u_cut: float = U_CUT
    direct_max: int = DIRECT_MAX_POINTS
    n_restarts: int = 2
    doe_width: float = 5.0
    zero_patience: int = 30
    max_iterations: int = 2000
    nais_rho: float = 0.1
    nais_residual_tol: float = 1e-3
    nais_defensive: float = 0.1

    def __post_init__(self):
        if self.mode not in ("mcs", "is"):
            raise ValueError("mode must be 'mcs' or 'is'")
        if not 0 < self.cov_max < 1:
            raise ValueError("cov_max must lie in (0, 1)")
        for name in ("n_mc_init", "n_is_init", "n_doe_init", "eval_budget", "n_t_init", "n_t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_t_max < self.n_t_init:
            raise ValueError("n_t_max must be >= n_t_init")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VbagpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def nais(self) -> NaisConfig:
        return NaisConfig(rho=self.nais_rho, n_is=self.n_is_init, mode="gp-probability",
                          residual_tol=self.nais_residual_tol, defensive=self.nais_defensive)


class _Streams:
    """Hands out child streams in call order, so a run is a pure function of its seed."""

    def __init__(self, stream: RandomStream):
        self.stream = stream
        self.k = 0

    def next(self) -> RandomStream:
        s = self.stream.child(self.k)
        self.k += 1
        return s


def _variances(v_x, v_gn, n_t, separated, cr, total=None) -> dict:
    d = {"v_x": v_x.to_dict(), "v_gn": v_gn.to_dict(), "n_t": n_t, "separated": separated, "cov_red": cr}
    if total is not None:
        pf_t, v_tot, cov_tot, n_tot = total
        d.update(pf_t=pf_t, v_tot=v_tot.to_dict(), cov_tot=cov_tot.to_dict(), n_t_total=n_tot,
                 v_joint=v_tot.point - v_gn.point - v_x.point)
    return d


class _Run:
    def __init__(self, problem: Problem, config: VbagpConfig, stream: RandomStream):
        self.problem = problem
        self.cfg = config
        self.streams = _Streams(stream)
        self.g = CountingFunction(problem)
        self.rec = RunRecord(f"vbagp-{config.mode}", problem.name, config.n_doe_init)
        self.t0 = time.perf_counter()

    def finish(self) -> RunRecord:
        self.rec.n_call = self.g.calls
        self.rec.wall_time = time.perf_counter() - self.t0
        return self.rec

    def fit_initial(self):
        X = initial_doe(self.problem, self.cfg.n_doe_init, self.streams.next(), self.cfg.doe_width)
        return gpmod.fit(X, self.g(X), self.cfg.kernel, self.streams.next())

    def enrich(self, model, candidates, prediction=None):
        choice = select_candidate(model, candidates, "EFF", prediction)
        x = candidates[choice.index]
        return model.enrich(x, self.g(x)[0], self.streams.next(), self.cfg.n_restarts)

    def assess(self, model, pop, prediction):
        """Steps 5 to 7: variance intervals, reduced COV and, when it passes,
        the total-COV check.  Returns (estimator, variances dict, stop?)."""
        cfg = self.cfg
        est = VarianceEstimator(model, pop, self.streams.next(), prediction=prediction, level=cfg.level,
                                u_cut=cfg.u_cut, direct_max=cfg.direct_max)
        v_x = est.v_x()
        v_gn, n_t, separated = est.widen_v_gn_until_separated(v_x, cfg.n_t_init, cfg.n_t_max,
                                                                 cfg.project_separation)
        pf = est.pf
        cr = cov_red(v_x.upper, v_gn.upper, pf) if pf > 0 else math.inf
        log.debug("uncertain=%d rank=%s n_t=%d separated=%s cov_red=%.4g", len(est.uncertain),
                  None if est._sampler is None else est._sampler.factor.shape[1], n_t, separated, cr)
        if cr >= cfg.cov_max:
            return est, v_x, v_gn, _variances(v_x, v_gn, n_t, separated, cr), None
        total = est.total_until_decided(cfg.cov_max, cfg.n_t_init, cfg.n_t_max)
        return est, v_x, v_gn, _variances(v_x, v_gn, n_t, separated, cr, total), total

    def over_budget(self, pf, model, pop, variances) -> bool:
        if self.g.calls >= self.cfg.eval_budget:
            self.rec.failure = "evaluation budget exhausted"
        elif len(self.rec.entries) >= self.cfg.max_iterations:
            self.rec.failure = "iteration cap reached"
        else:
            return False
        self.rec.pf = pf
        self.rec.log("stop", pf, model.n, pop.size, variances, self.rec.failure)
        return True

    def converge(self, total, model, pop):
        pf_t, _, cov, _ = total
        self.rec.pf = self.rec.pf_t = pf_t
        self.rec.cov_tot = cov.to_dict()
        self.rec.converged = True
        self.rec.log("stop", pf_t, model.n, pop.size)

    def grow(self, pop):
        cfg = self.cfg
        add = min(max(1, int(cfg.growth_factor * pop.size)), cfg.max_population - pop.size)
        return extend(pop, add, self.streams.next())


def run_vbagp_mcs(problem: Problem, config: VbagpConfig, stream: RandomStream) -> RunRecord:
    """Vb-AGP with a Monte Carlo population."""
    run = _Run(problem, config, stream)
    rec = run.rec
    pop = sample_mc(problem.marginals, config.n_mc_init, run.streams.next())
    model = run.fit_initial()
    zero_streak = 0
    while True:
        mean, sd = model.predict(pop.samples)
        pf = float(np.mean(mean <= 0))
        if pf == 0:
            zero_streak += 1
            if zero_streak > config.zero_patience:
                rec.failure = "no failure point in the MC population; use IS mode"
                rec.pf = 0.0
                rec.log("stop", 0.0, model.n, pop.size, None, "zero failures")
                raise ZeroFailureError(rec.failure, run.finish())
        else:
            zero_streak = 0
        est, v_x, v_gn, variances, total = run.assess(model, pop, (mean, sd))
        if total is not None:
            rec.log("total-check", pf, model.n, pop.size, variances)
            if total[2].upper <= config.cov_max and not total[2].contains(config.cov_max):
                run.converge(total, model, pop)
                break
        if run.over_budget(pf, model, pop, variances):
            break
        if v_gn.point < v_x.point:
            if pop.size >= config.max_population:
                rec.pf, rec.failure = pf, "population cap reached"
                rec.log("stop", pf, model.n, pop.size, variances, rec.failure)
                break
            pop = run.grow(pop)
            rec.log("grow-population", pf, model.n, pop.size, variances)
        else:
            model = run.enrich(model, pop.samples, (mean, sd))
            rec.log("enrich-GP", pf, model.n, pop.size, variances)
    return run.finish()


def _rebuild(run: _Run, model, size: int):
    """NAIS on the current GP; returns (population, candidate set, result)."""
    res = nais_run(lambda X: model.predict(X), run.problem.marginals, run.cfg.nais(), run.streams.next())
    pop = res.population
    if size > pop.size:
        pop = extend(pop, size - pop.size, run.streams.next())
    if res.stagnated:
        run.rec.warnings.append(f"NAIS stagnated at gamma={res.gammas[-1]:.4g} (DoE size {model.n})")
    return pop, res.all_samples, res.pf


def run_vbagp_is(problem: Problem, config: VbagpConfig, stream: RandomStream) -> RunRecord:
    """Vb-AGP with importance sampling from a GP-driven NAIS density.

    The density is rebuilt whenever the GP changed since the previous
    rebuild and the population is the dominant variance source; otherwise the
    current IS population is extended.  Candidates for enrichment are all
    NAIS samples of the latest rebuild.
    """
    run = _Run(problem, config, stream)
    rec = run.rec
    model = run.fit_initial()
    try:
        pop, candidates, pf_nais = _rebuild(run, model, config.n_is_init)
        rec.log("rebuild-aux-density", pf_nais, model.n, pop.size)
        for _ in range(2 * problem.dim):
            model = run.enrich(model, candidates)
            rec.log("enrich-GP", pf_nais, model.n, pop.size, None, "secondary DoE")
        stamp = -1  # the secondary DoE changed the GP after the first density
        while True:
            mean, sd = model.predict(pop.samples)
            pf = float(np.mean(pop.weights * (mean <= 0)))
            est, v_x, v_gn, variances, total = run.assess(model, pop, (mean, sd))
            if total is not None:
                rec.log("total-check", pf, model.n, pop.size, variances)
                if total[2].upper <= config.cov_max and not total[2].contains(config.cov_max):
                    run.converge(total, model, pop)
                    break
            if run.over_budget(pf, model, pop, variances):
                break
            if pf > 0 and v_gn.point < v_x.point:
                if model.n != stamp:
                    pop, candidates, _ = _rebuild(run, model, pop.size)
                    stamp = model.n
                    rec.log("rebuild-aux-density", pf, model.n, pop.size, variances)
                elif pop.size >= config.max_population:
                    rec.pf, rec.failure = pf, "population cap reached"
                    rec.log("stop", pf, model.n, pop.size, variances, rec.failure)
                    break
                else:
                    pop = run.grow(pop)
                    rec.log("grow-population", pf, model.n, pop.size, variances)
            else:
                model = run.enrich(model, candidates)
                rec.log("enrich-GP", pf, model.n, pop.size, variances)
    except (DensityCollapseError, ExhaustedCandidatesError) as exc:
        rec.failure = f"{type(exc).__name__}: {exc}"
        rec.pf = 0.0 if math.isnan(rec.pf) else rec.pf
        rec.log("stop", rec.pf, model.n, 0, None, rec.failure)
    return run.finish()


def run_vbagp(problem: Problem, config: VbagpConfig, stream: RandomStream) -> RunRecord:
    if config.mode == "mcs":
        return run_vbagp_mcs(problem, config, stream)
    return run_vbagp_is(problem, config, stream)
