"""Replicated experiments with their comparison metrics, persisted to disk.

An experiment directory holds::

    config.json          resolved configuration (problem, method, settings, seed)
    runs/run_000.json    one record per run
    report.json          aggregates per method, recomputable from the runs
    report.csv           one row per run
    timings.csv          wall-clock time per run (kept apart so records stay reproducible)
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .algorithm import VbagpConfig, ZeroFailureError, run_vbagp
from .core import RandomStream, as_generator
from .learning import AkMcsConfig, ak_mcs_run
from .nais import NaisConfig, nais_run
from .populations import estimate_pf_is, extend, mc_cov
from .problems import Problem, get_problem
from .records import RunRecord

log = logging.getLogger(__name__)

METHODS = ("mcs-reference", "is-reference", "ak-mcs-u", "ak-mcs-eff", "vbagp-mcs", "vbagp-is")
CHUNK = 1_000_000


def metric_e_r(estimates, reference: float) -> float:
    """Mean absolute relative error of ``estimates`` against ``reference``."""
    if not reference > 0:
        raise ValueError("reference probability must be positive")
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates")
    return float(np.mean(np.abs(est - reference)) / reference)


def metric_nu_mc(n_call: float, cov_pf: float, pf: float) -> float:
    """Crude-MC sample size for the same COV, per true-function call."""
    if not cov_pf > 0 or not 0 < pf < 1 or not n_call >= 1:
        raise ValueError("need cov_pf > 0, pf in (0, 1) and n_call >= 1")
    return (1.0 - pf) / (pf * cov_pf ** 2) / n_call


@dataclass
class ReferenceSettings:
    n_samples: int = 1_000_000
    n_is_build: int = 10_000  # NAIS population size when building the IS oracle density


@dataclass
class ExperimentConfig:
    problem: str
    method: str
    n_runs: int = 1
    seed: int = 0
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; known: {', '.join(METHODS)}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        get_problem(self.problem)

    def to_dict(self) -> dict:
        return {"problem": self.problem, "method": self.method, "n_runs": self.n_runs,
                "seed": self.seed, "settings": dict(self.settings)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(d["problem"], d["method"], d.get("n_runs", 1), d.get("seed", 0), dict(d.get("settings", {})))

    def method_config(self):
        """Method configuration: problem defaults overlaid with ``settings``."""
        problem = get_problem(self.problem)
        if self.method in ("mcs-reference", "is-reference"):
            cls, base = ReferenceSettings, {}
        elif self.method.startswith("ak-mcs"):
            cls = AkMcsConfig
            base = dict(problem.defaults, learning="U" if self.method == "ak-mcs-u" else "EFF")
        else:
            cls = VbagpConfig
            base = dict(problem.defaults, mode=self.method.split("-")[1])
        known = {f.name for f in fields(cls)}
        merged = {k: v for k, v in base.items() if k in known}
        unknown = set(self.settings) - known
        if unknown:
            raise ValueError(f"settings not understood by {self.method}: {sorted(unknown)}")
        merged.update(self.settings)
        return cls(**merged)


def mcs_reference(problem: Problem, n_samples: int, stream) -> RunRecord:
    """Crude Monte Carlo on the true performance function, in chunks."""
    rng = as_generator(stream)
    rec = RunRecord("mcs-reference", problem.name, 0)
    dens = problem.input_density
    fails = 0
    for start in range(0, n_samples, CHUNK):
        n = min(CHUNK, n_samples - start)
        fails += int(np.count_nonzero(problem.g(dens.sample(n, rng)) <= 0))
    pf = fails / n_samples
    cov = mc_cov(pf, n_samples)
    rec.pf, rec.n_call, rec.converged = pf, n_samples, True
    rec.cov_tot = {"point": cov, "lower": cov, "upper": cov, "level": 1.0}
    rec.log("stop", pf, 0, n_samples, None, f"{fails} failures")
    return rec


def is_reference(problem: Problem, n_samples: int, stream, n_is_build: int = 10_000) -> RunRecord:
    """NAIS density on the true function, then an IS estimate with ``n_samples`` draws."""
    root = stream if isinstance(stream, RandomStream) else RandomStream(int(stream))
    calls = [0]

    def g(X):
        calls[0] += len(X)
        return problem.g(X)

    res = nais_run(g, problem.marginals, NaisConfig(n_is=n_is_build, mode="hard"), root.child(0))
    pop = res.population
    if n_samples > pop.size:
        pop = extend(pop, n_samples - pop.size, root.child(1))
    n0 = res.population.size
    # rows drawn inside NAIS were already evaluated (and counted) there
    values = np.concatenate([problem.g(pop.samples[:n0]), g(pop.samples[n0:]) if pop.size > n0 else []])
    est = estimate_pf_is(pop, values)
    rec = RunRecord("is-reference", problem.name, 0)
    rec.pf, rec.n_call, rec.converged = est.value, calls[0], True
    rec.cov_tot = {"point": est.cov, "lower": est.cov, "upper": est.cov, "level": 1.0}
    rec.log("stop", est.value, 0, pop.size, None, f"NAIS iterations {res.iterations}")
    if res.stagnated:
        rec.warnings.append("NAIS stagnated while building the reference density")
    return rec


def run_one(problem: Problem, method: str, config, stream: RandomStream) -> RunRecord:
    if method == "mcs-reference":
        return mcs_reference(problem, config.n_samples, stream)
    if method == "is-reference":
        return is_reference(problem, config.n_samples, stream, config.n_is_build)
    if method.startswith("ak-mcs"):
        return ak_mcs_run(problem, config, stream)
    return run_vbagp(problem, config, stream)


def _safe_run(args) -> RunRecord:
    problem, method, config, stream, index = args
    t0 = time.perf_counter()
    try:
        rec = run_one(problem, method, config, stream)
    except ZeroFailureError as exc:
        rec = exc.record
    except Exception as exc:  # a failed run is recorded, never fatal to the experiment
        log.error("run %d failed: %s", index, exc)
        log.debug("%s", traceback.format_exc())
        rec = RunRecord(method, problem.name, getattr(config, "n_doe_init", 0))
        rec.failure = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - t0
    return rec


def aggregate(records, reference: float | None = None) -> dict:
    """Summary statistics over the converged runs of one method."""
    ok = [r for r in records if r.converged and r.failure is None]
    out = {"n_runs": len(records), "n_converged": len(ok), "n_failed": sum(r.failure is not None for r in records)}
    if not ok:
        return out
    pf = np.array([r.pf for r in ok], dtype=float)
    calls = np.array([r.n_call for r in ok], dtype=float)
    ddof = 1 if len(ok) > 1 else 0
    mean_pf = float(pf.mean())
    cov_pf = float(pf.std(ddof=ddof) / mean_pf) if mean_pf > 0 else math.inf
    mean_calls = float(calls.mean())
    out.update(mean_pf=mean_pf, cov_pf=cov_pf, mean_n_call=mean_calls,
               cov_n_call=float(calls.std(ddof=ddof) / mean_calls) if mean_calls > 0 else 0.0)
    out["e_r"] = metric_e_r(pf, reference) if reference else None
    try:
        out["nu_mc"] = metric_nu_mc(mean_calls, cov_pf, mean_pf)
    except ValueError:
        out["nu_mc"] = None
    return out


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    method_config: dict
    records: list
    aggregates: dict
    reference: dict | None

    @property
    def any_nonconverged(self) -> bool:
        return any(not r.converged for r in self.records)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "method_config": self.method_config,
                "aggregates": self.aggregates, "reference": self.reference,
                "seeds": [[self.config.seed, i] for i in range(len(self.records))]}


def run_experiment(problem_id: str, method: str, n_runs: int = 1, settings: dict | None = None,
                   seed: int = 0, out: str | Path | None = None, n_jobs: int = 1) -> ExperimentReport:
    """Run ``n_runs`` independent seeded runs and optionally persist them."""
    cfg = ExperimentConfig(problem_id, method, n_runs, seed, dict(settings or {}))
    return execute(cfg, out, n_jobs)


def execute(cfg: ExperimentConfig, out: str | Path | None = None, n_jobs: int = 1) -> ExperimentReport:
    problem = get_problem(cfg.problem)
    mcfg = cfg.method_config()
    jobs = [(problem, cfg.method, mcfg, RandomStream(cfg.seed, i), i) for i in range(cfg.n_runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            records = list(pool.map(_safe_run, jobs))
    else:
        records = [_safe_run(j) for j in jobs]
    ref = problem.reference
    report = ExperimentReport(cfg, _plain(mcfg), records, aggregate(records, ref.pf if ref else None),
                              None if ref is None else vars(ref).copy())
    if out is not None:
        save(report, out)
    return report


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def save(report: ExperimentReport, out) -> Path:
    out = Path(out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    _dump(report.config.to_dict(), out / "config.json")
    for i, rec in enumerate(report.records):
        (out / "runs" / f"run_{i:03d}.json").write_text(rec.to_json() + "\n")
    _dump(report.to_dict(), out / "report.json")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "method", "problem", "pf", "pf_t", "n_call", "converged", "failure", "iterations"])
        for i, r in enumerate(report.records):
            w.writerow([i, r.method, r.problem, repr(r.pf), "" if r.pf_t is None else repr(r.pf_t),
                        r.n_call, r.converged, r.failure or "", len(r.entries)])
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "wall_time_s"])
        for i, r in enumerate(report.records):
            w.writerow([i, f"{r.wall_time:.3f}"])
    return out


def load(out) -> ExperimentReport:
    out = Path(out)
    cfg = ExperimentConfig.from_dict(json.loads((out / "config.json").read_text()))
    records = [RunRecord.from_dict(json.loads(p.read_text())) for p in sorted((out / "runs").glob("run_*.json"))]
    stored = json.loads((out / "report.json").read_text())
    return ExperimentReport(cfg, stored["method_config"], records, stored["aggregates"], stored["reference"])


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
