"""Single-server queues with remaining-service-time dependent arrivals.

The package solves the stationary behavior of a queue whose Poisson arrival
rate lambda0 * f(r) is modulated by the remaining service time r of the
customer in service, both at service completion epochs and in continuous
time, and cross-validates the analytics with an exact event-driven
simulator.
"""

from .continuous import (
    ContinuousSolution,
    arrival_rate,
    empty_probability,
    mean_queue_length,
    sojourn_time,
    solve_densities,
    time_change_density,
    time_changed_model,
    time_changed_service,
    total_mass,
    waiting_time,
    window_exp_waiting_variants,
)
from .embedded import (
    EmbeddedSolution,
    IncrementPmf,
    increment_pmf,
    mean_at_completions,
    stationary_mgf,
    stationary_q,
)
from .errors import (
    ModelError,
    NotInvertibleError,
    NumericsError,
    UnstableQueueError,
)
from .model import QueueModel, ReshapeFunction, ServiceDistribution
from .simulate import (
    MetricEstimate,
    RateMode,
    SimulationReport,
    replicate,
    run,
    sample_busy_arrival,
)

__all__ = [
    "ContinuousSolution",
    "EmbeddedSolution",
    "IncrementPmf",
    "MetricEstimate",
    "ModelError",
    "NotInvertibleError",
    "NumericsError",
    "QueueModel",
    "RateMode",
    "ReshapeFunction",
    "ServiceDistribution",
    "SimulationReport",
    "UnstableQueueError",
    "arrival_rate",
    "empty_probability",
    "increment_pmf",
    "mean_at_completions",
    "mean_queue_length",
    "replicate",
    "run",
    "sample_busy_arrival",
    "sojourn_time",
    "solve_densities",
    "stationary_mgf",
    "stationary_q",
    "time_change_density",
    "time_changed_model",
    "time_changed_service",
    "total_mass",
    "waiting_time",
    "window_exp_waiting_variants",
]

__version__ = "0.1.0"
