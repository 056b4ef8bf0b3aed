"""Exhaustive optimal-placement search for small instances.

The enumeration walks every subset of experts and, for each selected
expert, every choice of n excluded (non-home) devices; with the
restriction flag it instead pins each expert's exclusion to the
fewest-inputs choice the greedy search would make, which is exactly the
greedy's search space closed under arbitrary subsets. Intended purely as
a validation harness for the greedy planner and the cost model.
"""

from __future__ import annotations

from itertools import combinations, product

from .core import ClusterSpec, ExpertPlacement, LoadMatrix, ModelSpec, ValidationError, derive_loads
from .perf_model import layer_cost_scheduled, layer_cost_unscheduled
from .planner import bottom_devices

MAX_ENUM_SIZE = 5


def brute_force_best(
    load: LoadMatrix,
    n: int,
    cluster: ClusterSpec,
    model: ModelSpec,
    scheduled: bool = False,
    restrict_to_bottomk: bool = False,
) -> tuple[ExpertPlacement, float]:
    """Minimum-cost placement over the full (or bottom-k-restricted)
    enumeration; ties resolve to the lexicographically smallest encoding
    (selection order, then exclusion sets)."""
    d, e = load.num_devices, load.num_experts
    if d != e:
        raise ValidationError(f"oracle requires num_experts == num_devices, got D={d}, E={e}")
    if d > MAX_ENUM_SIZE:
        raise ValidationError(f"instance too large for enumeration: D={d} > {MAX_ENUM_SIZE}")
    if not 0 <= n < d:
        raise ValidationError(f"n must be in [0, {d - 1}], got {n}")

    cost_fn = layer_cost_scheduled if scheduled else layer_cost_unscheduled

    def cost_of(placement: ExpertPlacement) -> float:
        loads = derive_loads(load, placement)
        cost = cost_fn(loads, placement.num_selected, n, cluster, model)
        return cost.total_scheduled if scheduled else cost.total_unscheduled

    def exclusion_choices(expert: int):
        if restrict_to_bottomk:
            return (bottom_devices(load, expert, n),)
        non_home = [dev for dev in range(d) if dev != ExpertPlacement.home(expert)]
        return tuple(frozenset(c) for c in combinations(non_home, n))

    best_placement = ExpertPlacement.empty(d, e)
    best_cost = cost_of(best_placement)
    for size in range(1, e + 1):
        for subset in combinations(range(e), size):
            for exclusions in product(*(exclusion_choices(x) for x in subset)):
                placement = ExpertPlacement(d, e, subset, exclusions)
                cost = cost_of(placement)
                if cost < best_cost:
                    best_cost = cost
                    best_placement = placement
    return best_placement, best_cost
