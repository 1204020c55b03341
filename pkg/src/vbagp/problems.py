"""Benchmark reliability problems.

Performance functions follow the convention ``G <= 0`` for failure.  Each
problem records reference values together with where they come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import MarginalDistribution
from .populations import IndependentNormal

_S2 = math.sqrt(2.0)


def four_branch_g(x) -> np.ndarray:
    """Series system with four branches on two standard normal inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2:
        raise ValueError("four-branch function takes 2-D inputs")
    x1, x2 = x[:, 0], x[:, 1]
    s = x1 + x2
    d = x1 - x2
    return np.minimum.reduce([
        3.0 + 0.1 * d * d - s / _S2,
        3.0 + 0.1 * d * d + s / _S2,
        d + 6.0 / _S2,
        -d + 6.0 / _S2,
    ])


def oscillator_g(c1, c2, m, r, t1, f1):
    """Non-linear undamped oscillator: ``3R - |2 F1 / (M w0^2) sin(w0 T1 / 2)|``."""
    c1, c2, m, r, t1, f1 = (np.asarray(v, dtype=float) for v in (c1, c2, m, r, t1, f1))
    if np.any(m <= 0) or np.any(c1 + c2 <= 0):
        raise ValueError("oscillator needs M > 0 and C1 + C2 > 0")
    w0 = np.sqrt((c1 + c2) / m)
    return 3.0 * r - np.abs(2.0 * f1 / (m * w0 * w0) * np.sin(0.5 * w0 * t1))


def _oscillator_rows(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    # Gaussian inputs can reach nonphysical values far in the tails
    x = x.copy()
    x[:, 2] = np.maximum(x[:, 2], 1e-6)
    x[:, 0] = np.maximum(x[:, 0], 1e-6 - x[:, 1])
    return oscillator_g(*x.T)


def linear_g(x) -> np.ndarray:
    """``3 - x1``: failure probability Phi(-3) under standard normal inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return 3.0 - x[:, 0]


def hyperplane_g(x) -> np.ndarray:
    """``2 - (x1 + x2)/sqrt(2)``: failure probability Phi(-2) = 2.275e-2."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return 2.0 - (x[:, 0] + x[:, 1]) / _S2


FUNCTIONS = {
    "four_branch": four_branch_g,
    "oscillator": _oscillator_rows,
    "linear": linear_g,
    "hyperplane": hyperplane_g,
}


@dataclass(frozen=True)
class Reference:
    pf: float
    cov: float | None
    provenance: str


@dataclass(frozen=True)
class Problem:
    name: str
    function: str
    marginals: tuple
    threshold: float = 0.0
    reference: Reference | None = None
    description: str = ""
    defaults: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def input_density(self) -> IndependentNormal:
        return IndependentNormal(self.marginals)

    def g(self, X) -> np.ndarray:
        """Shifted performance function; failure is ``g <= 0``."""
        out = FUNCTIONS[self.function](X)
        return out - self.threshold if self.threshold else out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "function": self.function,
            "marginals": [mg.to_dict() for mg in self.marginals],
            "threshold": self.threshold,
            "reference": None if self.reference is None else vars(self.reference).copy(),
            "description": self.description,
            "defaults": dict(self.defaults),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        ref = d.get("reference")
        return cls(
            name=d["name"],
            function=d["function"],
            marginals=tuple(MarginalDistribution(m["mean"], m["std"], m.get("kind", "gaussian"))
                            for m in d["marginals"]),
            threshold=d.get("threshold", 0.0),
            reference=None if ref is None else Reference(**ref),
            description=d.get("description", ""),
            defaults=dict(d.get("defaults", {})),
        )


def threshold_shift(problem: Problem, threshold: float) -> Problem:
    """Problem whose failure event is ``G <= threshold``."""
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    return replace(problem, threshold=problem.threshold + threshold)


class CountingFunction:
    """Wraps a problem's performance function and counts evaluated points."""

    def __init__(self, problem: Problem):
        self.problem = problem
        self.calls = 0

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        self.calls += len(X)
        return self.problem.g(X)


_STD2 = (MarginalDistribution(0.0, 1.0), MarginalDistribution(0.0, 1.0))


def _oscillator_marginals(f_mean, f_std):
    return (
        MarginalDistribution(1.0, 0.1),
        MarginalDistribution(0.1, 0.01),
        MarginalDistribution(1.0, 0.05),
        MarginalDistribution(0.5, 0.05),
        MarginalDistribution(1.0, 0.2),
        MarginalDistribution(f_mean, f_std),
    )


PROBLEMS = {
    p.name: p for p in (
        Problem("four_branch", "four_branch", _STD2, 0.0,
                Reference(4.46e-3, 0.016, "benchmark value, 100 MCS runs of 1e6 samples"),
                "series system with four branches",
                {"n_doe_init": 16, "n_mc_init": 50_000, "cov_max": 0.03}),
        Problem("four_branch_rare", "four_branch", _STD2, -1.5,
                Reference(5.29e-5, 0.021, "benchmark value, 100 MCS runs of 5e7 samples"),
                "four branches with failure at G <= -1.5",
                {"n_doe_init": 12, "n_mc_init": 10_000, "cov_max": 0.03}),
        Problem("oscillator_case1", "oscillator", _oscillator_marginals(1.0, 0.2), 0.0,
                Reference(2.86e-2, 0.02, "benchmark value, 100 MCS runs of 1e5 samples"),
                "non-linear oscillator, F1 ~ N(1, 0.2^2)",
                {"n_doe_init": 12, "n_mc_init": 10_000, "cov_max": 0.03}),
        Problem("oscillator_case2", "oscillator", _oscillator_marginals(0.6, 0.1), 0.0,
                Reference(9.08e-6, 0.0247, "benchmark value, MCS with 1.8e9 samples (not reproducible "
                          "at desk scale; use the IS reference)"),
                "non-linear oscillator, F1 ~ N(0.6, 0.1^2)",
                {"n_doe_init": 12, "n_mc_init": 10_000, "cov_max": 0.03}),
        Problem("linear", "linear", (MarginalDistribution(0.0, 1.0),), 0.0,
                Reference(1.3498980316301e-3, 0.0, "analytic, Phi(-3)"),
                "1-D linear limit state 3 - x",
                {"n_doe_init": 4, "n_mc_init": 100_000, "cov_max": 0.05}),
        Problem("hyperplane", "hyperplane", _STD2, 0.0,
                Reference(2.2750131948179e-2, 0.0, "analytic, Phi(-2)"),
                "2-D linear limit state",
                {"n_doe_init": 8, "n_mc_init": 20_000, "cov_max": 0.05}),
    )
}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEMS)}") from None
