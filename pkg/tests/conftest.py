import numpy as np
import pytest

from moebal import ClusterSpec, GeneratorConfig, LoadMatrix, ModelSpec
from moebal.planner import PlannerConfig

# Cluster/model constants used by the simulator-level tests: sized so that
# balancing a skewed load saves far more compute time than the parameter
# transfers cost, with non-expert windows wide enough to hide them.
CAL_DEVICES = 8
CAL_INPUTS = 2048


def calibrated_cluster(num_devices: int = CAL_DEVICES) -> ClusterSpec:
    return ClusterSpec(
        num_devices=num_devices, avg_bandwidth=25e9, compute_throughput=1e6
    )


def calibrated_model(num_experts: int = CAL_DEVICES, num_blocks: int = 4, top_k: int = 1) -> ModelSpec:
    return ModelSpec(
        num_experts=num_experts,
        num_blocks=num_blocks,
        top_k=top_k,
        input_bytes=4096,
        expert_param_bytes=4e6,
        expert_grad_bytes=4e6,
        fnec_time=2e-4,
        bnec_time=4e-4,
    )


def calibrated_planner(**overrides) -> PlannerConfig:
    args = {"n": 1, "alpha": 0.5, "reuse_interval": 1}
    args.update(overrides)
    return PlannerConfig(**args)


def skewed_generator(seed: int, num_devices: int = CAL_DEVICES, num_experts: int = CAL_DEVICES,
                     skew: float = 1.2, drift: float = 0.05) -> GeneratorConfig:
    return GeneratorConfig(
        num_devices=num_devices,
        num_experts=num_experts,
        inputs_per_iteration=CAL_INPUTS,
        top_k=1,
        skew=skew,
        drift=drift,
        seed=seed,
    )


def uniform_matrix(num_devices: int, num_experts: int, per_cell: int) -> LoadMatrix:
    return LoadMatrix(np.full((num_devices, num_experts), per_cell, dtype=np.int64))


def random_load_matrix(rng: np.random.Generator, num_devices: int, num_experts: int,
                       row_total: int) -> LoadMatrix:
    """Equal-row-sum random matrix (every device holds row_total inputs)."""
    probs = rng.dirichlet(np.ones(num_experts))
    counts = np.stack([rng.multinomial(row_total, probs) for _ in range(num_devices)])
    return LoadMatrix(counts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
