import numpy as np
import pytest

from moebal import (
    ClusterSpec,
    ExpertPlacement,
    LoadMatrix,
    ModelSpec,
    ValidationError,
    derive_loads,
    greedy_search,
    is_balanced,
    plan_for_iteration,
)
from moebal.perf_model import layer_cost_unscheduled
from moebal.planner import PlannerConfig, bottom_devices

from conftest import random_load_matrix

FIG8_COUNTS = [[3, 0, 0], [2, 1, 0], [0, 1, 2]]


def small_setup(param_bytes=1e5, grad_bytes=1e5):
    cluster = ClusterSpec(3, 1e9, 1000.0)
    model = ModelSpec(
        num_experts=3, num_blocks=1, top_k=1, input_bytes=1e6,
        expert_param_bytes=param_bytes, expert_grad_bytes=grad_bytes,
    )
    return cluster, model


def unscheduled_total(load, placement, cluster, model):
    loads = derive_loads(load, placement)
    return layer_cost_unscheduled(
        loads, placement.num_selected, placement.n, cluster, model
    ).total_unscheduled


class TestIsBalanced:
    def test_spec_examples(self):
        assert is_balanced([5, 2, 2], 9, 3, 0.5) is False  # 3 >= 1.5
        assert is_balanced([3, 3, 3], 9, 3, 1e-9) is True
        assert is_balanced([4, 3, 2], 9, 3, 1.0) is True  # 2 < 3

    def test_empty_vector_raises(self):
        with pytest.raises(ValidationError):
            is_balanced([], 9, 3, 1.0)


class TestBottomDevices:
    def test_excludes_fewest_input_devices_never_home(self):
        load = LoadMatrix(FIG8_COUNTS)
        # expert 0 column is (3, 2, 0); device 2 holds fewest
        assert bottom_devices(load, 0, 1) == frozenset({2})
        # home 0 is protected even though other devices tie at 0 inputs
        load2 = LoadMatrix([[0, 3], [0, 3]])
        assert bottom_devices(load2, 0, 1) == frozenset({1})

    def test_tie_breaks_to_lowest_index(self):
        load = LoadMatrix([[2, 1, 0], [1, 2, 0], [1, 0, 2]])
        # expert 2 column is (0, 0, 2); devices 0 and 1 tie, 0 wins
        assert bottom_devices(load, 2, 1) == frozenset({0})


class TestGreedySearch:
    def test_uniform_load_returns_empty_placement(self):
        cluster, model = small_setup()
        load = LoadMatrix(np.full((3, 3), 2))
        placement = greedy_search(load, PlannerConfig(n=1, alpha=0.5), cluster, model)
        assert placement.selected == ()

    def test_selects_heaviest_expert_first_and_beats_baseline(self):
        cluster, model = small_setup()
        load = LoadMatrix(FIG8_COUNTS)
        placement = greedy_search(load, PlannerConfig(n=1, alpha=0.5), cluster, model)
        assert placement.selected[0] == 0  # heaviest device/expert: H=(5,2,2)
        baseline = unscheduled_total(load, ExpertPlacement.empty(3, 3), cluster, model)
        chosen = unscheduled_total(load, placement, cluster, model)
        assert chosen <= baseline

    def test_prohibitive_transfer_cost_keeps_placement_empty(self):
        cluster, model = small_setup(param_bytes=1e12, grad_bytes=1e12)
        load = LoadMatrix(FIG8_COUNTS)
        placement = greedy_search(load, PlannerConfig(n=1, alpha=0.5), cluster, model)
        assert placement.selected == ()

    def test_requires_square_instance(self):
        cluster, model = small_setup()
        load = LoadMatrix([[1, 1], [1, 1], [2, 0]])  # 3 devices, 2 experts
        with pytest.raises(ValidationError):
            greedy_search(load, PlannerConfig(n=1), cluster, model)

    def test_cost_dominance_on_random_instances(self, rng):
        cluster, model = small_setup()
        cfg = PlannerConfig(n=1, alpha=0.5)
        for _ in range(100):
            load = random_load_matrix(rng, 3, 3, row_total=int(rng.integers(1, 20)))
            placement = greedy_search(load, cfg, cluster, model)
            assert len(set(placement.selected)) == len(placement.selected)
            assert placement.num_selected <= 3
            baseline = unscheduled_total(load, ExpertPlacement.empty(3, 3), cluster, model)
            assert unscheduled_total(load, placement, cluster, model) <= baseline

    def test_overlap_aware_objective_accepts_hidable_transfers(self):
        # Transfer slightly above what Eq-7 tolerates but fully hidden by
        # the non-expert window under the overlap-aware objective.
        cluster = ClusterSpec(3, 1e9, 1000.0)
        model = ModelSpec(
            num_experts=3, num_blocks=1, top_k=1, input_bytes=1e6,
            expert_param_bytes=1.2e7, expert_grad_bytes=1.2e7,
            fnec_time=1.0, bnec_time=1.0,
        )
        load = LoadMatrix(FIG8_COUNTS)
        plain = greedy_search(load, PlannerConfig(n=1, alpha=0.5), cluster, model)
        aware = greedy_search(
            load, PlannerConfig(n=1, alpha=0.5, overlap_aware=True), cluster, model
        )
        assert plain.selected == ()
        assert aware.num_selected >= 1


class TestPlanForIteration:
    def test_iteration_zero_is_empty(self):
        cluster, model = small_setup()
        placement = plan_for_iteration([], 0, PlannerConfig(), cluster, model)
        assert placement.selected == ()

    def test_reuse_interval_one_searches_every_iteration(self):
        cluster, model = small_setup()
        cfg = PlannerConfig(n=1, alpha=0.5, reuse_interval=1)
        history = [LoadMatrix(FIG8_COUNTS), LoadMatrix(np.full((3, 3), 2))]
        p1 = plan_for_iteration(history, 1, cfg, cluster, model)
        p2 = plan_for_iteration(history, 2, cfg, cluster, model)
        assert p1 == greedy_search(history[0], cfg, cluster, model)
        assert p2 == greedy_search(history[1], cfg, cluster, model)

    def test_placement_reused_between_search_points(self):
        cluster, model = small_setup()
        cfg = PlannerConfig(n=1, alpha=0.5, reuse_interval=5)
        history = [LoadMatrix(FIG8_COUNTS)] * 10
        empty = ExpertPlacement.empty(3, 3)
        for i in range(1, 5):
            assert plan_for_iteration(history, i, cfg, cluster, model) == empty
        p5 = plan_for_iteration(history, 5, cfg, cluster, model)
        assert p5 == greedy_search(history[4], cfg, cluster, model)
        for i in range(6, 10):
            assert plan_for_iteration(history, i, cfg, cluster, model) == p5

    def test_identical_history_gives_identical_plan(self):
        cluster, model = small_setup()
        cfg = PlannerConfig(n=1, alpha=0.5, reuse_interval=1)
        history = [LoadMatrix(FIG8_COUNTS), LoadMatrix(FIG8_COUNTS), LoadMatrix(FIG8_COUNTS)]
        assert plan_for_iteration(history, 2, cfg, cluster, model) == greedy_search(
            history[2], cfg, cluster, model
        )

    def test_missing_history_raises(self):
        cluster, model = small_setup()
        with pytest.raises(ValidationError):
            plan_for_iteration([], 1, PlannerConfig(), cluster, model)


class TestPlannerConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            PlannerConfig(n=-1)
        with pytest.raises(ValidationError):
            PlannerConfig(alpha=0.0)
        with pytest.raises(ValidationError):
            PlannerConfig(reuse_interval=0)
