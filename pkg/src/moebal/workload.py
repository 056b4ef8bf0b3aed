"""Synthetic gating traces with controllable skew and iteration locality.

Each layer gets a base expert popularity: Zipf-like weights assigned to a
seed-dependent permutation of the experts. The popularity vector drifts
between iterations by mixing in a fresh Dirichlet draw centered on the
base shape, so adjacent iterations stay similar (high locality at low
drift) while never losing the overall skew. Counts are then drawn per
device as a multinomial over experts, with the per-iteration stream keyed
to the popularity vector itself: identical distributions yield identical
matrices, so drift 0 means a perfectly repeating trace.

Trace files are JSON Lines, one record per line:
``{"iter": int, "layer": int, "counts": [[int, ...], ...]}`` with counts
row-major devices x experts, UTF-8, LF terminated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionMismatchError, LoadMatrix, ValidationError

# Concentration of the Dirichlet redraw around the base popularity; higher
# values keep iteration-to-iteration fluctuation small relative to skew.
_DIRICHLET_CONCENTRATION = 10.0


class TraceFormatError(ValidationError):
    """A trace file line failed to parse or validate."""

    def __init__(self, line_number: int, message: str) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    layer: int
    load: LoadMatrix


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic trace generator.

    skew is the Zipf-like exponent of the base expert popularity (0 means
    uniform). drift is the fraction of per-expert probability mass
    re-sampled each iteration; 0 keeps the distribution frozen.
    """

    num_devices: int
    num_experts: int
    inputs_per_iteration: int
    top_k: int = 1
    skew: float = 1.2
    drift: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_devices < 1:
            raise ValidationError(f"num_devices must be >= 1, got {self.num_devices}")
        if self.num_experts < 1:
            raise ValidationError(f"num_experts must be >= 1, got {self.num_experts}")
        if self.inputs_per_iteration < 1:
            raise ValidationError(
                f"inputs_per_iteration must be >= 1, got {self.inputs_per_iteration}"
            )
        if self.inputs_per_iteration % self.num_devices != 0:
            raise ValidationError(
                f"inputs_per_iteration={self.inputs_per_iteration} must divide evenly "
                f"across num_devices={self.num_devices}"
            )
        if not 1 <= self.top_k <= self.num_experts:
            raise ValidationError(
                f"top_k must be in [1, num_experts={self.num_experts}], got {self.top_k}"
            )
        if self.skew < 0:
            raise ValidationError(f"skew must be >= 0, got {self.skew}")
        if not 0.0 <= self.drift <= 1.0:
            raise ValidationError(f"drift must be in [0, 1], got {self.drift}")


def _base_popularity(num_experts: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    weights = np.arange(1, num_experts + 1, dtype=np.float64) ** -skew
    weights /= weights.sum()
    perm = rng.permutation(num_experts)
    base = np.empty(num_experts, dtype=np.float64)
    base[perm] = weights
    return base


def _matrix_rng(seed: int, layer: int, popularity: np.ndarray) -> np.random.Generator:
    # Keyed to the popularity vector so equal distributions give equal draws.
    digest = hashlib.sha256()
    digest.update(str(seed).encode())
    digest.update(str(layer).encode())
    digest.update(popularity.tobytes())
    return np.random.default_rng(int.from_bytes(digest.digest()[:8], "little"))


def generate_trace(config: GeneratorConfig, iterations: int, layers: int = 1) -> list[TraceRecord]:
    """Deterministic synthetic trace, ordered by (iteration, layer)."""
    if iterations < 0:
        raise ValidationError(f"iterations must be >= 0, got {iterations}")
    if layers < 1:
        raise ValidationError(f"layers must be >= 1, got {layers}")
    per_device = config.inputs_per_iteration // config.num_devices * config.top_k
    master = np.random.default_rng(config.seed)
    layer_state = []
    for layer in range(layers):
        rng = np.random.default_rng(master.integers(0, 2**63 - 1))
        base = _base_popularity(config.num_experts, config.skew, rng)
        layer_state.append((rng, base, base.copy()))

    records: list[TraceRecord] = []
    for t in range(iterations):
        for layer in range(layers):
            rng, base, p = layer_state[layer]
            draw = _matrix_rng(config.seed, layer, p)
            counts = np.stack(
                [draw.multinomial(per_device, p) for _ in range(config.num_devices)]
            )
            records.append(TraceRecord(iteration=t, layer=layer, load=LoadMatrix(counts)))
            # Drift the popularity toward a fresh draw around the base shape.
            # The draw always happens so traces with the same seed share one
            # fresh-sample sequence regardless of the drift setting.
            fresh = rng.dirichlet(base * _DIRICHLET_CONCENTRATION * config.num_experts)
            if config.drift > 0.0:
                p = (1.0 - config.drift) * p + config.drift * fresh
                p /= p.sum()
            layer_state[layer] = (rng, base, p)
    return records


def locality_score(a: LoadMatrix, b: LoadMatrix) -> float:
    """Pearson correlation of the two per-expert count vectors.

    Degenerate convention: if either vector has zero variance the score is
    1.0 when both are constant and equal, else 0.0.
    """
    if (a.num_devices, a.num_experts) != (b.num_devices, b.num_experts):
        raise DimensionMismatchError(
            f"matrices are {a.num_devices}x{a.num_experts} and {b.num_devices}x{b.num_experts}"
        )
    x = a.expert_totals().astype(np.float64)
    y = b.expert_totals().astype(np.float64)
    xs = x - x.mean()
    ys = y - y.mean()
    vx = float(xs @ xs)
    vy = float(ys @ ys)
    if vx == 0.0 or vy == 0.0:
        if vx == 0.0 and vy == 0.0 and np.array_equal(x, y):
            return 1.0
        return 0.0
    return float((xs @ ys) / np.sqrt(vx * vy))


def mean_adjacent_locality(records: Sequence[TraceRecord]) -> float:
    """Mean locality score over adjacent-iteration pairs, all layers."""
    by_layer: dict[int, list[TraceRecord]] = {}
    for rec in records:
        by_layer.setdefault(rec.layer, []).append(rec)
    scores = []
    for recs in by_layer.values():
        recs = sorted(recs, key=lambda r: r.iteration)
        for prev, cur in zip(recs, recs[1:]):
            scores.append(locality_score(prev.load, cur.load))
    return float(np.mean(scores)) if scores else 1.0


def write_trace(records: Sequence[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            line = json.dumps(
                {"iter": rec.iteration, "layer": rec.layer, "counts": rec.load.counts.tolist()},
                separators=(",", ":"),
            )
            fh.write(line + "\n")


def read_trace(path) -> list[TraceRecord]:
    """Parse a JSONL trace; validates dimensions and iteration numbering."""
    records: list[TraceRecord] = []
    shape: tuple[int, int] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise TraceFormatError(lineno, "record must be a JSON object")
            for key in ("iter", "layer", "counts"):
                if key not in obj:
                    raise TraceFormatError(lineno, f"missing key {key!r}")
            if not isinstance(obj["iter"], int) or not isinstance(obj["layer"], int):
                raise TraceFormatError(lineno, "iter and layer must be integers")
            try:
                load = LoadMatrix(obj["counts"])
            except (ValidationError, ValueError) as exc:
                raise TraceFormatError(lineno, f"bad counts: {exc}") from exc
            if shape is None:
                shape = (load.num_devices, load.num_experts)
            elif shape != (load.num_devices, load.num_experts):
                raise TraceFormatError(
                    lineno,
                    f"dimensions {load.num_devices}x{load.num_experts} do not match "
                    f"earlier records ({shape[0]}x{shape[1]})",
                )
            records.append(TraceRecord(iteration=obj["iter"], layer=obj["layer"], load=load))
    _check_iterations_contiguous(records)
    return records


def _check_iterations_contiguous(records: Sequence[TraceRecord]) -> None:
    iters = sorted({rec.iteration for rec in records})
    if iters and iters != list(range(len(iters))):
        raise ValidationError(f"iterations must be contiguous from 0, got {iters[:10]}...")
