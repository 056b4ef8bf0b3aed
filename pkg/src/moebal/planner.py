"""Greedy search for a communication-efficient expert placement.

The search repeatedly picks the most loaded device, marks its expert for
transfer to every device except the ``n`` devices holding the fewest
inputs for that expert, re-derives the device loads, and keeps the
cheapest placement seen so far. It stops as soon as the load is balanced
or the heaviest device repeats. Because placements are only accepted on a
strict cost improvement, the result never models worse than vanilla
expert parallelism.

Deterministic tie-breaks: the lowest device index wins both the
heaviest-device argmax and the fewest-inputs bottom-k selection. Bottom-k
is computed on the original load matrix, and the home device is never
excluded (it always keeps the parameters).
"""

from __future__ import annotations

from dataclasses import dataclass
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
from .perf_model import layer_cost_scheduled, layer_cost_unscheduled


@dataclass(frozen=True)
class PlannerConfig:
    """Search knobs.

    n: devices each selected expert is not transferred to.
    alpha: balance coefficient; load counts as balanced when
        max(H) - min(H) < alpha * inputs_per_iteration / num_experts.
    reuse_interval: run the search every this many iterations, reusing the
        last placement in between.
    overlap_aware: evaluate candidates with the overlap-aware total
        instead of the serialized one.
    """

    n: int = 1
    alpha: float = 0.5
    reuse_interval: int = 1
    overlap_aware: bool = False

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValidationError(f"n must be >= 0, got {self.n}")
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if self.reuse_interval < 1:
            raise ValidationError(f"reuse_interval must be >= 1, got {self.reuse_interval}")


def is_balanced(H, total_inputs: int, num_experts: int, alpha: float) -> bool:
    """Balanced-load predicate: max(H) - min(H) < alpha * I / E."""
    H = np.asarray(H)
    if H.size == 0:
        raise ValidationError("H must be non-empty")
    return float(H.max() - H.min()) < alpha * total_inputs / num_experts


def bottom_devices(load: LoadMatrix, expert: int, n: int) -> frozenset[int]:
    """The n non-home devices holding the fewest inputs for ``expert``."""
    home = ExpertPlacement.home(expert)
    column = load.counts[:, expert]
    candidates = [d for d in range(load.num_devices) if d != home]
    candidates.sort(key=lambda d: (int(column[d]), d))
    return frozenset(candidates[:n])


def greedy_search(
    load: LoadMatrix, config: PlannerConfig, cluster: ClusterSpec, model: ModelSpec
) -> ExpertPlacement:
    """Search for a placement whose modeled layer cost beats vanilla EP.

    Requires one expert per device (E == D) so the heaviest device index
    doubles as the expert to transfer.
    """
    d, e = load.num_devices, load.num_experts
    if d != e:
        raise ValidationError(f"greedy search requires num_experts == num_devices, got D={d}, E={e}")
    if (cluster.num_devices, model.num_experts) != (d, e):
        raise DimensionMismatchError(
            f"cluster/model are {cluster.num_devices}/{model.num_experts}, load is {d}x{e}"
        )
    if config.n >= d:
        raise ValidationError(f"n must be < num_devices={d}, got {config.n}")

    cost_of = layer_cost_scheduled if config.overlap_aware else layer_cost_unscheduled

    def objective(loads, s: int, n: int) -> float:
        cost = cost_of(loads, s, n, cluster, model)
        return cost.total_scheduled if config.overlap_aware else cost.total_unscheduled

    total_inputs = load.total() // model.top_k
    loads = derive_loads(load, ExpertPlacement.empty(d, e))
    best = objective(loads, 0, 0)
    H = loads.H

    selected: list[int] = []
    bottoms: list[frozenset[int]] = []
    used: set[int] = set()
    cnt = 0

    while not is_balanced(H, total_inputs, e, config.alpha):
        i = int(np.argmax(H))  # first max -> lowest index
        if i in used:
            break
        used.add(i)
        selected.append(i)
        bottoms.append(bottom_devices(load, i, config.n))
        candidate = ExpertPlacement(d, e, tuple(selected), tuple(bottoms))
        loads = derive_loads(load, candidate)
        H = loads.H
        changed = objective(loads, len(selected), config.n)
        if changed < best:
            best = changed
            cnt = len(selected)

    return ExpertPlacement(d, e, tuple(selected[:cnt]), tuple(bottoms[:cnt]))


def plan_for_iteration(
    history: Sequence[LoadMatrix],
    iter_index: int,
    config: PlannerConfig,
    cluster: ClusterSpec,
    model: ModelSpec,
) -> ExpertPlacement:
    """Placement for an iteration under the reuse policy.

    Searches run at iterations that are multiples of reuse_interval, on
    the previous iteration's observed load (pure persistence predictor);
    other iterations reuse the placement from the last search. Iteration 0
    has no history and uses the empty placement.
    """
    if iter_index < 0:
        raise ValidationError(f"iter_index must be >= 0, got {iter_index}")
    anchor = (iter_index // config.reuse_interval) * config.reuse_interval
    if anchor == 0:
        return ExpertPlacement.empty(cluster.num_devices, model.num_experts)
    if len(history) < anchor:
        raise ValidationError(
            f"iteration {iter_index} needs history through iteration {anchor - 1}, "
            f"got {len(history)} entries"
        )
    return greedy_search(history[anchor - 1], config, cluster, model)
