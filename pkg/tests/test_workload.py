import numpy as np
import pytest

from moebal import GeneratorConfig, LoadMatrix, ValidationError, generate_trace, locality_score
from moebal.workload import (
    TraceFormatError,
    TraceRecord,
    mean_adjacent_locality,
    read_trace,
    write_trace,
)


def small_config(**overrides):
    args = dict(
        num_devices=4, num_experts=8, inputs_per_iteration=512,
        top_k=1, skew=1.2, drift=0.05, seed=11,
    )
    args.update(overrides)
    return GeneratorConfig(**args)


class TestGeneratorConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            small_config(drift=1.5)
        with pytest.raises(ValidationError):
            small_config(drift=-0.1)
        with pytest.raises(ValidationError):
            small_config(skew=-1.0)
        with pytest.raises(ValidationError):
            small_config(inputs_per_iteration=10)  # not divisible by D
        with pytest.raises(ValidationError):
            small_config(top_k=9)


class TestGenerateTrace:
    def test_deterministic_given_seed(self):
        a = generate_trace(small_config(), iterations=5, layers=2)
        b = generate_trace(small_config(), iterations=5, layers=2)
        assert len(a) == len(b) == 10
        for x, y in zip(a, b):
            assert (x.iteration, x.layer) == (y.iteration, y.layer)
            assert x.load == y.load

    def test_different_seeds_differ(self):
        a = generate_trace(small_config(seed=1), iterations=3)
        b = generate_trace(small_config(seed=2), iterations=3)
        assert any(x.load != y.load for x, y in zip(a, b))

    def test_row_sums_and_total(self):
        cfg = small_config(top_k=2)
        recs = generate_trace(cfg, iterations=4)
        per_device = cfg.inputs_per_iteration // cfg.num_devices * cfg.top_k
        for rec in recs:
            rows = rec.load.counts.sum(axis=1)
            assert (rows == per_device).all()
            assert rec.load.total() == cfg.inputs_per_iteration * cfg.top_k

    def test_zero_drift_repeats_matrices_exactly(self):
        recs = generate_trace(small_config(drift=0.0), iterations=6)
        first = recs[0].load
        assert all(rec.load == first for rec in recs)

    def test_zero_skew_is_uniform_in_expectation(self):
        cfg = small_config(skew=0.0, drift=0.0, inputs_per_iteration=200_000, seed=5)
        recs = generate_trace(cfg, iterations=1)
        totals = recs[0].load.expert_totals().astype(float)
        assert totals.max() / totals.min() < 1.05

    def test_ordered_by_iteration_then_layer(self):
        recs = generate_trace(small_config(), iterations=3, layers=2)
        assert [(r.iteration, r.layer) for r in recs] == [
            (i, l) for i in range(3) for l in range(2)
        ]


class TestLocalityScore:
    def test_identical_matrices(self):
        m = LoadMatrix([[3, 0, 0], [2, 1, 0], [0, 1, 2]])
        assert locality_score(m, m) == 1.0

    def test_hand_computed_pearson(self):
        a = LoadMatrix([[10, 0, 0]])
        b = LoadMatrix([[0, 10, 0]])
        assert locality_score(a, b) == pytest.approx(-0.5, rel=1e-12)

    def test_zero_variance_conventions(self):
        const_a = LoadMatrix([[2, 2, 2]])
        const_b = LoadMatrix([[4, 4, 4]])
        skewed = LoadMatrix([[3, 2, 1]])
        assert locality_score(const_a, const_a) == 1.0
        assert locality_score(const_a, const_b) == 0.0
        assert locality_score(const_a, skewed) == 0.0

    def test_generator_locality_at_low_drift(self):
        recs = generate_trace(small_config(num_experts=16, num_devices=8,
                                           inputs_per_iteration=4096, seed=3),
                              iterations=100)
        assert mean_adjacent_locality(recs) >= 0.9

    def test_locality_non_increasing_in_drift(self):
        drifts = [0.0, 0.05, 0.3, 0.9]
        means = []
        for drift in drifts:
            scores = []
            for seed in range(20):
                recs = generate_trace(
                    small_config(drift=drift, seed=seed, num_experts=16,
                                 num_devices=8, inputs_per_iteration=4096),
                    iterations=12,
                )
                scores.append(mean_adjacent_locality(recs))
            means.append(np.mean(scores))
        for lo, hi in zip(means[1:], means[:-1]):
            assert lo <= hi + 1e-9


class TestTraceIO:
    def test_round_trip_identity(self, tmp_path):
        recs = generate_trace(small_config(), iterations=4, layers=2)
        path = tmp_path / "trace.jsonl"
        write_trace(recs, path)
        back = read_trace(path)
        assert back == recs

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert read_trace(path) == []

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"iter":0,"layer":0,"counts":[[1,1],[1,1]]}\n'
            "not json\n"
        )
        with pytest.raises(TraceFormatError, match="line 2"):
            read_trace(path)

    def test_dimension_mismatch_names_line_number(self, tmp_path):
        path = tmp_path / "dims.jsonl"
        path.write_text(
            '{"iter":0,"layer":0,"counts":[[1,1],[1,1]]}\n'
            '{"iter":1,"layer":0,"counts":[[1,1,0],[0,1,1]]}\n'
        )
        with pytest.raises(TraceFormatError, match="line 2"):
            read_trace(path)

    def test_missing_key_and_bad_counts(self, tmp_path):
        path = tmp_path / "k.jsonl"
        path.write_text('{"iter":0,"counts":[[1]]}\n')
        with pytest.raises(TraceFormatError, match="layer"):
            read_trace(path)
        path.write_text('{"iter":0,"layer":0,"counts":[[1,-2],[0,0]]}\n')
        with pytest.raises(TraceFormatError, match="line 1"):
            read_trace(path)

    def test_non_contiguous_iterations_rejected(self, tmp_path):
        path = tmp_path / "gap.jsonl"
        path.write_text(
            '{"iter":0,"layer":0,"counts":[[1,1],[1,1]]}\n'
            '{"iter":2,"layer":0,"counts":[[1,1],[1,1]]}\n'
        )
        with pytest.raises(ValidationError):
            read_trace(path)
