"""Multi-channel real-time wireless link scheduling with local deadline partitions.

The package is organized as:

* :mod:`ldpsched.conflict_graph`: conflict graphs, neighborhoods, clique and
  maximal-independent-set enumeration;
* :mod:`ldpsched.traffic`: periodic traffic with reliability targets and the
  random topology/traffic generators;
* :mod:`ldpsched.schedulability`: feasible sets, the per-link schedulability
  test and approximation-ratio bounds;
* :mod:`ldpsched.ldp`: the slot-level scheduler and simulation engine;
* :mod:`ldpsched.experiments` and :mod:`ldpsched.cli`: experiment pipeline and
  command-line front end.
"""

from .conflict_graph import CliqueFamily, ConflictGraph, eight_link_example, load_graph, save_graph
from .errors import CapacityError, GenerationError, InputError, InvariantViolation, LDPError
from .experiments import (
    ExperimentConfig,
    MetricsTable,
    deadline_bin_report,
    ratio_histogram,
    run_experiment,
    schedulable_instance,
)
from .ldp import (
    ChannelState,
    LinkRuntimeState,
    Partition,
    ScheduleSlot,
    SimulationReport,
    edf_baseline_slot,
    local_demand,
    local_density,
    partition_bounds,
    run_simulation,
    schedule_slot,
)
from .schedulability import (
    FeasibleSetResult,
    LocalAnalyzer,
    SchedulabilityVerdict,
    approximation_ratios,
    is_feasible_set,
    min_density_feasible_set,
    min_scheduling_rate,
    necessary_condition,
    network_verdicts,
    schedulability_test,
)
from .traffic import (
    DeploymentParams,
    LinkTraffic,
    Topology,
    arrival_and_deadline,
    generate_topology,
    generate_traffic,
    load_topology,
    load_traffic,
    required_transmissions,
    save_topology,
    save_traffic,
)

__version__ = "0.1.0"

__all__ = [
    "CliqueFamily",
    "ConflictGraph",
    "eight_link_example",
    "load_graph",
    "save_graph",
    "CapacityError",
    "GenerationError",
    "InputError",
    "InvariantViolation",
    "LDPError",
    "ExperimentConfig",
    "MetricsTable",
    "deadline_bin_report",
    "ratio_histogram",
    "run_experiment",
    "schedulable_instance",
    "ChannelState",
    "LinkRuntimeState",
    "Partition",
    "ScheduleSlot",
    "SimulationReport",
    "edf_baseline_slot",
    "local_demand",
    "local_density",
    "partition_bounds",
    "run_simulation",
    "schedule_slot",
    "FeasibleSetResult",
    "LocalAnalyzer",
    "SchedulabilityVerdict",
    "approximation_ratios",
    "is_feasible_set",
    "min_density_feasible_set",
    "min_scheduling_rate",
    "necessary_condition",
    "network_verdicts",
    "schedulability_test",
    "DeploymentParams",
    "LinkTraffic",
    "Topology",
    "arrival_and_deadline",
    "generate_topology",
    "generate_traffic",
    "load_topology",
    "load_traffic",
    "required_transmissions",
    "save_topology",
    "save_traffic",
]
