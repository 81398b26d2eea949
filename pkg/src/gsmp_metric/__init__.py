"""Behavioral distances between states of generalized semi-Markov processes."""

from .config import TOL, RunConfig, Tolerances
from .errors import *  # noqa: F401,F403
from .model import (
    GeneralizedState,
    GsmpModel,
    ResetDistribution,
    StateSpec,
    advance,
    load_model,
    step,
    time_to_first_expiry,
    validate_model,
)
from .traces import ScalarTrace, TimedTrace, delay, sample_trace, trace_at
from .transport import DiscreteDistribution, cluster_measure, dual_lower_bound, wasserstein
from .j2 import j2_distance
from .fixpoint import MetricEstimate, check_metric_bisimulation, convergence_bound, metric_estimate
from .logic import Evaluator, dk_estimate, eval_f, parse_expr
from .observables import Observable, RewardSpec, continuity_report, expected_observable

__version__ = "0.1.0"
