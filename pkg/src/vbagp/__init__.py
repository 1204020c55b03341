"""Reliability analysis with Gaussian-process surrogates whose refinement is
driven by a split of the estimator variance into population and GP parts."""

from .algorithm import VbagpConfig, ZeroFailureError, run_vbagp
from .core import IntervalEstimate, MarginalDistribution, RandomStream
from .experiment import ExperimentConfig, ExperimentReport, run_experiment
from .gp import GpModel, fit
from .learning import AkMcsConfig, ak_mcs_run
from .nais import NaisConfig, nais_run
from .problems import PROBLEMS, Problem, get_problem
from .records import RunRecord
from .variance import VarianceEstimator

__version__ = "0.1.0"

__all__ = [
    "AkMcsConfig", "ExperimentConfig", "ExperimentReport", "GpModel", "IntervalEstimate",
    "MarginalDistribution", "NaisConfig", "PROBLEMS", "Problem", "RandomStream", "RunRecord",
    "VarianceEstimator", "VbagpConfig", "ZeroFailureError", "ak_mcs_run", "fit", "get_problem",
    "nais_run", "run_experiment", "run_vbagp",
]
