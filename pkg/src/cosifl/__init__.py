"""Incentive-compatible, attack-resilient federated learning simulator.

Modules:
    domain     scenario schema, client attributes, seeded substreams
    data       synthetic data, non-IID partitioning, divergence estimates
    learner    softmax regression, SGD and the Gaussian LDP mechanism
    game       the asymmetric Tullock contest among clients
    incentive  loss proxy, server cost, reward and round planning, Pareto selection
    security   client alarms, server cross-analysis, penalties, baselines
    attacks    poisoned updates, labels and alarm reports
    audit      membership-inference attacks and the convergence diagnostic
    engine     the end-to-end round loop and output files
"""

from .domain import ClientAttributes, ScenarioConfig, ScenarioError, load_scenario, scenario_from_dict
from .engine import RunResult, emit_outputs, make_plan, prepare, run

__all__ = [
    "ClientAttributes",
    "RunResult",
    "ScenarioConfig",
    "ScenarioError",
    "emit_outputs",
    "load_scenario",
    "make_plan",
    "prepare",
    "run",
    "scenario_from_dict",
]

__version__ = "0.1.0"
