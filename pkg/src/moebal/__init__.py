"""Planner and timeline simulator for load balancing in expert-parallel
MoE training."""

from .core import (
    ClusterSpec,
    DeviceLoads,
    DimensionMismatchError,
    ExpertPlacement,
    LoadMatrix,
    ModelSpec,
    ValidationError,
    derive_loads,
)
from .perf_model import LayerCost, layer_cost_scheduled, layer_cost_unscheduled
from .planner import PlannerConfig, greedy_search, is_balanced, plan_for_iteration
from .scheduler import (
    IterationTimeline,
    ScheduledOp,
    build_iteration_timeline,
    build_serial_timeline,
    partition_agg,
    partition_trans,
)
from .simulator import Policy, PolicyKind, RunReport, balance_degree, parse_policy, rb_ratio, run
from .workload import (
    GeneratorConfig,
    TraceRecord,
    generate_trace,
    locality_score,
    read_trace,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterSpec",
    "DeviceLoads",
    "DimensionMismatchError",
    "ExpertPlacement",
    "GeneratorConfig",
    "IterationTimeline",
    "LayerCost",
    "LoadMatrix",
    "ModelSpec",
    "PlannerConfig",
    "Policy",
    "PolicyKind",
    "RunReport",
    "ScheduledOp",
    "TraceRecord",
    "ValidationError",
    "balance_degree",
    "build_iteration_timeline",
    "build_serial_timeline",
    "derive_loads",
    "generate_trace",
    "greedy_search",
    "is_balanced",
    "layer_cost_scheduled",
    "layer_cost_unscheduled",
    "locality_score",
    "parse_policy",
    "partition_agg",
    "partition_trans",
    "plan_for_iteration",
    "rb_ratio",
    "read_trace",
    "run",
    "write_trace",
]
