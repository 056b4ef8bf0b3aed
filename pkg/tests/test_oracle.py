import numpy as np
import pytest

from moebal import ClusterSpec, ExpertPlacement, LoadMatrix, ModelSpec, ValidationError, derive_loads
from moebal.oracle import brute_force_best
from moebal.perf_model import layer_cost_unscheduled, t_trans
from moebal.planner import PlannerConfig, greedy_search

from conftest import random_load_matrix

FIG8_COUNTS = [[3, 0, 0], [2, 1, 0], [0, 1, 2]]


def setup_small(d=3, param_bytes=1e5, grad_bytes=1e5):
    cluster = ClusterSpec(d, 1e9, 1000.0)
    model = ModelSpec(
        num_experts=d, num_blocks=1, top_k=1, input_bytes=1e6,
        expert_param_bytes=param_bytes, expert_grad_bytes=grad_bytes,
    )
    return cluster, model


def cost_unscheduled(load, placement, n, cluster, model):
    loads = derive_loads(load, placement)
    return layer_cost_unscheduled(loads, placement.num_selected, n, cluster, model).total_unscheduled


class TestBruteForce:
    def test_uniform_load_keeps_empty_placement(self):
        # parameter bytes priced so no transfer can pay for itself
        cluster, model = setup_small(param_bytes=1e8, grad_bytes=1e8)
        load = LoadMatrix(np.full((3, 3), 2))
        placement, cost = brute_force_best(load, 1, cluster, model)
        assert placement.selected == ()
        assert cost == cost_unscheduled(load, ExpertPlacement.empty(3, 3), 1, cluster, model)

    def test_matches_or_beats_greedy_on_spec_instance(self):
        cluster, model = setup_small()
        load = LoadMatrix(FIG8_COUNTS)
        greedy = greedy_search(load, PlannerConfig(n=1, alpha=0.5), cluster, model)
        greedy_cost = cost_unscheduled(load, greedy, 1, cluster, model)
        _, best_cost = brute_force_best(load, 1, cluster, model)
        assert best_cost <= greedy_cost
        assert best_cost == greedy_cost  # greedy is optimal here

    def test_boundary_n_equals_d_minus_one(self):
        # D - n = 1: a selected expert stays only on its home device, so the
        # transfer round moves s * 1 * bytes / (D * bandwidth).
        cluster, model = setup_small(param_bytes=3e8)
        assert t_trans(1, 2, cluster, model) == pytest.approx(
            1 * 1 * 3e8 / (3 * 1e9), rel=1e-12
        )
        load = LoadMatrix(FIG8_COUNTS)
        placement, cost = brute_force_best(load, 2, cluster, model)
        assert cost <= cost_unscheduled(load, ExpertPlacement.empty(3, 3), 2, cluster, model)

    def test_scheduled_never_above_unscheduled(self, rng):
        cluster, model = setup_small()
        for _ in range(20):
            load = random_load_matrix(rng, 3, 3, row_total=int(rng.integers(1, 15)))
            _, sched = brute_force_best(load, 1, cluster, model, scheduled=True)
            _, unsched = brute_force_best(load, 1, cluster, model, scheduled=False)
            assert sched <= unsched

    def test_sandwich_free_restricted_greedy(self, rng):
        cluster, model = setup_small(d=4)
        cfg = PlannerConfig(n=1, alpha=0.5)
        for _ in range(40):
            load = random_load_matrix(rng, 4, 4, row_total=int(rng.integers(1, 15)))
            greedy = greedy_search(load, cfg, cluster, model)
            greedy_cost = cost_unscheduled(load, greedy, 1, cluster, model)
            baseline = cost_unscheduled(load, ExpertPlacement.empty(4, 4), 1, cluster, model)
            _, free = brute_force_best(load, 1, cluster, model)
            _, restricted = brute_force_best(load, 1, cluster, model, restrict_to_bottomk=True)
            assert free <= restricted <= greedy_cost <= baseline

    def test_size_guard(self):
        cluster = ClusterSpec(6, 1e9, 1000.0)
        model = ModelSpec(num_experts=6, num_blocks=1, top_k=1, input_bytes=1,
                          expert_param_bytes=1, expert_grad_bytes=1)
        load = LoadMatrix(np.full((6, 6), 1))
        with pytest.raises(ValidationError, match="5"):
            brute_force_best(load, 1, cluster, model)

    def test_rectangular_rejected(self):
        cluster, model = setup_small()
        load = LoadMatrix([[1, 1], [1, 1], [2, 0]])
        with pytest.raises(ValidationError):
            brute_force_best(load, 1, cluster, model)
