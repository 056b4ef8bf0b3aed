"""Trace replay under load-balancing policies.

A run walks a gating trace iteration by iteration, obtains an expert
placement per layer according to the policy, prices every layer with the
analytic model, and assembles a per-iteration timeline: fully serialized
for policies without overlap, block-wise overlapped for the scheduled
one. Everything is deterministic given (trace, policy, configs).

Policies:

* ``vanilla``        - plain expert parallelism, no balancing.
* ``top<m>``         - broadcast the m heaviest experts of the current
                       iteration to all devices (selection overhead is
                       treated as free).
* ``greedy``         - greedy placement search driven by the previous
                       iteration's loads; search and transfers run
                       serialized.
* ``greedy-overlap`` - same search evaluated with the overlap-aware cost,
                       replayed on the overlapped timeline.

The placement search itself is charged as a Plan op lasting a configured
fraction of the iteration's mean all-to-all time, scaled by the fraction
of layers whose load was actually unbalanced (a search that exits on a
balanced load costs nothing); broadcast policies pay no search time.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    ClusterSpec,
    DimensionMismatchError,
    ExpertPlacement,
    LoadMatrix,
    ModelSpec,
    ValidationError,
    derive_loads,
)
from .perf_model import LayerCost, layer_cost_scheduled, layer_cost_unscheduled
from .planner import PlannerConfig, greedy_search, is_balanced
from .scheduler import IterationTimeline, build_iteration_timeline, build_serial_timeline
from .workload import TraceRecord


class PolicyKind(Enum):
    VANILLA_EP = "vanilla"
    TOP_M = "topm"
    GREEDY_SERIAL = "greedy"
    GREEDY_OVERLAP = "greedy-overlap"


POLICY_NAME_HELP = "vanilla, top<m> (e.g. top2, top3), greedy, greedy-overlap"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    m: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    plan_frac: float = 0.5

    def __post_init__(self) -> None:
        if self.kind is PolicyKind.TOP_M and self.m < 1:
            raise ValidationError(f"top-m policy needs m >= 1, got {self.m}")
        if self.plan_frac < 0:
            raise ValidationError(f"plan_frac must be >= 0, got {self.plan_frac}")

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.TOP_M:
            return f"top{self.m}"
        return self.kind.value


def parse_policy(name: str, planner: PlannerConfig | None = None, plan_frac: float = 0.5) -> Policy:
    """Build a Policy from its CLI name; raises ValidationError listing
    valid names when the name is unknown."""
    planner = planner or PlannerConfig()
    if name == "vanilla":
        return Policy(kind=PolicyKind.VANILLA_EP)
    if name == "greedy":
        return Policy(kind=PolicyKind.GREEDY_SERIAL, planner=planner, plan_frac=plan_frac)
    if name == "greedy-overlap":
        cfg = PlannerConfig(
            n=planner.n,
            alpha=planner.alpha,
            reuse_interval=planner.reuse_interval,
            overlap_aware=True,
        )
        return Policy(kind=PolicyKind.GREEDY_OVERLAP, planner=cfg, plan_frac=plan_frac)
    match = re.fullmatch(r"top(\d+)", name)
    if match:
        return Policy(kind=PolicyKind.TOP_M, m=int(match.group(1)))
    raise ValidationError(f"unknown policy {name!r}; valid policies: {POLICY_NAME_HELP}")


def balance_degree(H) -> float:
    """Population standard deviation of a device-load vector."""
    H = np.asarray(H, dtype=np.float64)
    if H.size == 0:
        raise ValidationError("H must be non-empty")
    return float(np.std(H))


def rb_ratio(before, after) -> float:
    """Balance-degree ratio before/after balancing.

    Returns math.inf when balancing reached a perfectly uniform load from
    a non-uniform one, and 1.0 when both are already uniform.
    """
    sb = balance_degree(before.H)
    sa = balance_degree(after.H)
    if sa == 0.0:
        return 1.0 if sb == 0.0 else math.inf
    return sb / sa


@dataclass(frozen=True)
class LayerRecord:
    iteration: int
    layer: int
    num_selected: int
    n: int
    cost: LayerCost
    sigma_before: float
    sigma_after: float
    rb: float


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    makespan: float
    search: float
    place: float
    reduce: float
    other: float


CSV_COLUMNS = (
    "iteration",
    "layer",
    "num_selected",
    "n",
    "a2a_s",
    "fec_s",
    "bec_s",
    "trans_s",
    "agg_s",
    "ptrans_s",
    "pagg_s",
    "total_unscheduled_s",
    "total_scheduled_s",
    "sigma_before",
    "sigma_after",
    "rb",
)


@dataclass(frozen=True)
class RunReport:
    policy: str
    num_devices: int
    num_experts: int
    num_iterations: int
    num_layers: int
    layer_records: tuple[LayerRecord, ...]
    iteration_records: tuple[IterationRecord, ...]
    timelines: tuple[IterationTimeline, ...] = ()

    def makespans(self) -> np.ndarray:
        return np.array([rec.makespan for rec in self.iteration_records], dtype=np.float64)

    def mean_makespan(self) -> float:
        return float(self.makespans().mean()) if self.iteration_records else 0.0

    def mean_rb(self) -> float:
        """Mean over finite per-layer RB values (inf markers excluded)."""
        finite = [rec.rb for rec in self.layer_records if math.isfinite(rec.rb)]
        return float(np.mean(finite)) if finite else 1.0

    def speedup_vs(self, baseline: "RunReport") -> float:
        """Mean-makespan speedup relative to a baseline run of the same trace."""
        own = self.mean_makespan()
        return baseline.mean_makespan() / own if own > 0 else math.inf

    def phase_percentages(self) -> dict[str, float]:
        total = sum(rec.makespan for rec in self.iteration_records)
        if total == 0.0:
            return {"search": 0.0, "place": 0.0, "reduce": 0.0, "other": 0.0}
        return {
            "search": 100.0 * sum(r.search for r in self.iteration_records) / total,
            "place": 100.0 * sum(r.place for r in self.iteration_records) / total,
            "reduce": 100.0 * sum(r.reduce for r in self.iteration_records) / total,
            "other": 100.0 * sum(r.other for r in self.iteration_records) / total,
        }

    def to_json_obj(self) -> dict:
        return {
            "policy": self.policy,
            "num_devices": self.num_devices,
            "num_experts": self.num_experts,
            "num_iterations": self.num_iterations,
            "num_layers": self.num_layers,
            "mean_makespan_s": self.mean_makespan(),
            "mean_rb": self.mean_rb(),
            "phase_percent": self.phase_percentages(),
            "iterations": [
                {
                    "iteration": r.iteration,
                    "makespan_s": r.makespan,
                    "search_s": r.search,
                    "place_s": r.place,
                    "reduce_s": r.reduce,
                    "other_s": r.other,
                }
                for r in self.iteration_records
            ],
            "layers": [
                {
                    "iteration": r.iteration,
                    "layer": r.layer,
                    "num_selected": r.num_selected,
                    "n": r.n,
                    "a2a_s": r.cost.a2a_time,
                    "fec_s": r.cost.fec_time,
                    "bec_s": r.cost.bec_time,
                    "trans_s": r.cost.trans_time,
                    "agg_s": r.cost.agg_time,
                    "ptrans_s": r.cost.ptrans_time,
                    "pagg_s": r.cost.pagg_time,
                    "total_unscheduled_s": r.cost.total_unscheduled,
                    "total_scheduled_s": r.cost.total_scheduled,
                    "sigma_before": r.sigma_before,
                    "sigma_after": r.sigma_after,
                    "rb": r.rb,
                }
                for r in self.layer_records
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in self.layer_records:
                writer.writerow(
                    [
                        r.iteration,
                        r.layer,
                        r.num_selected,
                        r.n,
                        r.cost.a2a_time,
                        r.cost.fec_time,
                        r.cost.bec_time,
                        r.cost.trans_time,
                        r.cost.agg_time,
                        r.cost.ptrans_time,
                        r.cost.pagg_time,
                        r.cost.total_unscheduled,
                        r.cost.total_scheduled,
                        r.sigma_before,
                        r.sigma_after,
                        r.rb,
                    ]
                )


def _matrices_by_iteration(
    trace: Sequence[TraceRecord], cluster: ClusterSpec, model: ModelSpec
) -> list[list[LoadMatrix]]:
    if not trace:
        raise ValidationError("trace must be non-empty")
    iters = sorted({rec.iteration for rec in trace})
    if iters != list(range(len(iters))):
        raise ValidationError(f"iterations must be contiguous from 0, got {iters[:10]}")
    layers = sorted({rec.layer for rec in trace})
    if layers != list(range(len(layers))):
        raise ValidationError(f"layers must be contiguous from 0, got {layers[:10]}")
    if len(layers) != model.num_blocks:
        raise DimensionMismatchError(
            f"trace has {len(layers)} layers but model.num_blocks={model.num_blocks}"
        )
    grid: list[list[LoadMatrix | None]] = [[None] * len(layers) for _ in iters]
    for rec in trace:
        if (rec.load.num_devices, rec.load.num_experts) != (cluster.num_devices, model.num_experts):
            raise DimensionMismatchError(
                f"trace record {rec.iteration}/{rec.layer} is "
                f"{rec.load.num_devices}x{rec.load.num_experts}, expected "
                f"{cluster.num_devices}x{model.num_experts}"
            )
        if grid[rec.iteration][rec.layer] is not None:
            raise ValidationError(
                f"duplicate record for iteration {rec.iteration}, layer {rec.layer}"
            )
        grid[rec.iteration][rec.layer] = rec.load
    for j, row in enumerate(grid):
        for layer, m in enumerate(row):
            if m is None:
                raise ValidationError(f"missing record for iteration {j}, layer {layer}")
    return grid  # type: ignore[return-value]


def _top_m_placement(load: LoadMatrix, m: int) -> ExpertPlacement:
    totals = load.expert_totals()
    order = sorted(range(load.num_experts), key=lambda e: (-int(totals[e]), e))
    chosen = tuple(order[:m])
    return ExpertPlacement(
        load.num_devices, load.num_experts, chosen, tuple(frozenset() for _ in chosen)
    )


def _search_explored(load: LoadMatrix, planner: PlannerConfig, model: ModelSpec) -> bool:
    """Whether a search on this load would explore candidates at all."""
    before = derive_loads(load, ExpertPlacement.empty(load.num_devices, load.num_experts))
    total_inputs = load.total() // model.top_k
    return not is_balanced(before.H, total_inputs, load.num_experts, planner.alpha)


def run(
    trace: Sequence[TraceRecord],
    policy: Policy,
    cluster: ClusterSpec,
    model: ModelSpec,
    keep_timelines: bool = False,
) -> RunReport:
    """Replay a trace under one policy; see module docstring."""
    grid = _matrices_by_iteration(trace, cluster, model)
    n_iters, n_layers = len(grid), len(grid[0])
    if policy.kind is PolicyKind.TOP_M and policy.m > model.num_experts:
        raise ValidationError(f"top-m with m={policy.m} > num_experts={model.num_experts}")

    adaptive = policy.kind in (PolicyKind.GREEDY_SERIAL, PolicyKind.GREEDY_OVERLAP)
    cost_fn = (
        layer_cost_scheduled
        if policy.kind is PolicyKind.GREEDY_OVERLAP
        else layer_cost_unscheduled
    )
    empty = ExpertPlacement.empty(cluster.num_devices, model.num_experts)
    search_cache: dict[tuple[int, int], ExpertPlacement] = {}

    def placement_for(j: int, layer: int) -> ExpertPlacement:
        if policy.kind is PolicyKind.VANILLA_EP:
            return empty
        if policy.kind is PolicyKind.TOP_M:
            return _top_m_placement(grid[j][layer], policy.m)
        anchor = (j // policy.planner.reuse_interval) * policy.planner.reuse_interval
        if anchor == 0:
            return empty
        key = (layer, anchor)
        if key not in search_cache:
            search_cache[key] = greedy_search(
                grid[anchor - 1][layer], policy.planner, cluster, model
            )
        return search_cache[key]

    def search_runs_at(j: int) -> bool:
        return adaptive and j >= 1 and j % policy.planner.reuse_interval == 0

    def explored_fraction(j: int) -> float:
        # Fraction of layers whose previous-iteration load was unbalanced
        # when the search for iteration j ran.
        if not search_runs_at(j):
            return 0.0
        flags = [
            _search_explored(grid[j - 1][layer], policy.planner, model)
            for layer in range(n_layers)
        ]
        return sum(flags) / n_layers

    layer_records: list[LayerRecord] = []
    iteration_records: list[IterationRecord] = []
    timelines: list[IterationTimeline] = []
    per_iter_costs: list[list[LayerCost]] = []

    for j in range(n_iters):
        costs: list[LayerCost] = []
        for layer in range(n_layers):
            load = grid[j][layer]
            placement = placement_for(j, layer)
            before = derive_loads(load, empty)
            after = before if placement is empty else derive_loads(load, placement)
            cost = cost_fn(after, placement.num_selected, placement.n, cluster, model)
            costs.append(cost)
            layer_records.append(
                LayerRecord(
                    iteration=j,
                    layer=layer,
                    num_selected=placement.num_selected,
                    n=placement.n,
                    cost=cost,
                    sigma_before=balance_degree(before.H),
                    sigma_after=balance_degree(after.H),
                    rb=rb_ratio(before, after),
                )
            )
        per_iter_costs.append(costs)

    for j in range(n_iters):
        costs = per_iter_costs[j]
        mean_a2a = float(np.mean([c.a2a_time for c in costs]))
        if policy.kind is PolicyKind.GREEDY_OVERLAP:
            # Host the next iteration's search on this iteration's A2As.
            hosted = policy.plan_frac * mean_a2a * explored_fraction(j + 1) if j + 1 < n_iters else 0.0
            timeline = build_iteration_timeline(costs, hosted, model, iteration=j)
        else:
            own = policy.plan_frac * mean_a2a * explored_fraction(j)
            timeline = build_serial_timeline(costs, own, model, iteration=j)
        phases = timeline.phase_totals()
        iteration_records.append(
            IterationRecord(
                iteration=j,
                makespan=timeline.makespan(),
                search=phases["search"],
                place=phases["place"],
                reduce=phases["reduce"],
                other=phases["other"],
            )
        )
        if keep_timelines:
            timelines.append(timeline)

    return RunReport(
        policy=policy.name,
        num_devices=cluster.num_devices,
        num_experts=model.num_experts,
        num_iterations=n_iters,
        num_layers=n_layers,
        layer_records=tuple(layer_records),
        iteration_records=tuple(iteration_records),
        timelines=tuple(timelines),
    )
