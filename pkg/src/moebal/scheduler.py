"""Block-wise overlap scheduling of one training iteration.

The iteration is modeled as one compute lane and one network lane (the
per-layer costs are already cluster-wide maxima, so a per-device Gantt
would add nothing). Time advances slot by slot; a slot holds at most one
compute op and one network op which start together, and the slot ends
when the longer of the two finishes. That construction makes lane
exclusivity structural and guarantees the overlapped makespan never
exceeds the serialized one.

Per forward block i the slots are::

    [A2A | Plan(next iter)] [FEC | SubTrans1(i+1)] [A2A] [FNEC | SubTrans2(i+1)]

and the backward pass walks blocks in reverse::

    [BNEC | SubAgg1(i+1)] [A2A] [BEC | SubAgg2(i+1)] [A2A]

so a block's parameter traffic rides on the compute of the block executed
just before it, finishing before the block itself needs the parameters
(and after its gradients exist, on the backward side). Boundary blocks
have no earlier host: the first block's Trans is charged serialized at
the start of the iteration, and its Agg at the very end of the backward
pass.

Trans is split so the statically known non-expert forward window (FNEC)
is filled first and only the remainder contends with expert compute;
Agg mirrors this with the backward windows, BNEC first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .core import ModelSpec, ValidationError
from .perf_model import LayerCost


class Lane(str, Enum):
    COMPUTE = "compute"
    NETWORK = "network"


class OpKind(str, Enum):
    A2A = "A2A"
    FEC = "FEC"
    BEC = "BEC"
    FNEC = "FNEC"
    BNEC = "BNEC"
    PLAN = "Plan"
    SUB_TRANS1 = "SubTrans1"
    SUB_TRANS2 = "SubTrans2"
    SUB_AGG1 = "SubAgg1"
    SUB_AGG2 = "SubAgg2"


LANE_OF = {
    OpKind.A2A: Lane.NETWORK,
    OpKind.SUB_TRANS1: Lane.NETWORK,
    OpKind.SUB_TRANS2: Lane.NETWORK,
    OpKind.SUB_AGG1: Lane.NETWORK,
    OpKind.SUB_AGG2: Lane.NETWORK,
    OpKind.FEC: Lane.COMPUTE,
    OpKind.BEC: Lane.COMPUTE,
    OpKind.FNEC: Lane.COMPUTE,
    OpKind.BNEC: Lane.COMPUTE,
    OpKind.PLAN: Lane.COMPUTE,
}

TRANS_KINDS = frozenset((OpKind.SUB_TRANS1, OpKind.SUB_TRANS2))
AGG_KINDS = frozenset((OpKind.SUB_AGG1, OpKind.SUB_AGG2))


@dataclass(frozen=True)
class ScheduledOp:
    kind: OpKind
    block: int
    iteration: int
    lane: Lane
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


def partition_trans(trans_time: float, fec_time: float, fnec_time: float) -> tuple[float, float]:
    """Split Trans into (sub1, sub2): sub2 fills the non-expert forward
    window first, sub1 is the remainder that rides on expert compute."""
    for name, v in (("trans_time", trans_time), ("fec_time", fec_time), ("fnec_time", fnec_time)):
        if v < 0:
            raise ValidationError(f"{name} must be >= 0, got {v}")
    sub2 = min(trans_time, fnec_time)
    return trans_time - sub2, sub2


def partition_agg(agg_time: float, bec_time: float, bnec_time: float) -> tuple[float, float]:
    """Split Agg into (sub1, sub2): sub1 fills the non-expert backward
    window (scheduled first on the backward pass), sub2 the remainder."""
    for name, v in (("agg_time", agg_time), ("bec_time", bec_time), ("bnec_time", bnec_time)):
        if v < 0:
            raise ValidationError(f"{name} must be >= 0, got {v}")
    sub1 = min(agg_time, bnec_time)
    return sub1, agg_time - sub1


def _overlap_with(start: float, end: float, intervals: Iterable[tuple[float, float]]) -> float:
    covered = 0.0
    for s, e in intervals:
        lo = max(start, s)
        hi = min(end, e)
        if hi > lo:
            covered += hi - lo
    return covered


@dataclass(frozen=True)
class IterationTimeline:
    """Scheduled op intervals for one training iteration."""

    iteration: int
    ops: tuple[ScheduledOp, ...]

    def makespan(self) -> float:
        return max((op.end for op in self.ops), default=0.0)

    def lane_ops(self, lane: Lane) -> list[ScheduledOp]:
        return [op for op in self.ops if op.lane is lane]

    def exposed_seconds(self, op: ScheduledOp) -> float:
        """Portion of an op not overlapped by the other lane."""
        other = Lane.COMPUTE if op.lane is Lane.NETWORK else Lane.NETWORK
        intervals = [(o.start, o.end) for o in self.lane_ops(other)]
        return max(0.0, op.duration - _overlap_with(op.start, op.end, intervals))

    def exposed_comm_seconds(self) -> float:
        """Network time not hidden behind any compute."""
        return sum((self.exposed_seconds(op) for op in self.lane_ops(Lane.NETWORK)), 0.0)

    def exposed_trans_seconds(self, block: int) -> float:
        return sum(
            self.exposed_seconds(op)
            for op in self.ops
            if op.kind in TRANS_KINDS and op.block == block
        )

    def exposed_agg_seconds(self, block: int) -> float:
        return sum(
            self.exposed_seconds(op)
            for op in self.ops
            if op.kind in AGG_KINDS and op.block == block
        )

    def phase_totals(self) -> dict[str, float]:
        """Makespan split into search/place/reduce/other contributions.

        Each phase gets the exposed (unhidden) seconds of its ops; fully
        overlapped work costs nothing. The four values add up to the
        makespan.
        """
        search = sum((self.exposed_seconds(op) for op in self.ops if op.kind is OpKind.PLAN), 0.0)
        place = sum((self.exposed_seconds(op) for op in self.ops if op.kind in TRANS_KINDS), 0.0)
        reduce_ = sum((self.exposed_seconds(op) for op in self.ops if op.kind in AGG_KINDS), 0.0)
        other = self.makespan() - search - place - reduce_
        return {"search": search, "place": place, "reduce": reduce_, "other": other}

    def to_json_obj(self) -> dict:
        return {
            "iteration": self.iteration,
            "makespan": self.makespan(),
            "ops": [
                {
                    "kind": op.kind.value,
                    "block": op.block,
                    "iteration": op.iteration,
                    "lane": op.lane.value,
                    "start": op.start,
                    "duration": op.duration,
                }
                for op in self.ops
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True)

    def to_svg(self) -> str:
        return render_gantt_svg(self)


class _Builder:
    def __init__(self, iteration: int) -> None:
        self.iteration = iteration
        self.t = 0.0
        self.ops: list[ScheduledOp] = []

    def slot(
        self,
        compute: tuple[OpKind, int, float] | None = None,
        network: tuple[OpKind, int, float] | None = None,
        iteration_override: dict[Lane, int] | None = None,
    ) -> None:
        advance = 0.0
        for lane, entry in ((Lane.COMPUTE, compute), (Lane.NETWORK, network)):
            if entry is None:
                continue
            kind, block, duration = entry
            if duration <= 0.0:
                continue
            it = self.iteration
            if iteration_override and lane in iteration_override:
                it = iteration_override[lane]
            self.ops.append(
                ScheduledOp(kind=kind, block=block, iteration=it, lane=lane, start=self.t, duration=duration)
            )
            advance = max(advance, duration)
        self.t += advance

    def build(self) -> IterationTimeline:
        return IterationTimeline(iteration=self.iteration, ops=tuple(self.ops))


def _validate_costs(per_block_costs: Sequence[LayerCost], plan_time: float, model: ModelSpec) -> None:
    if len(per_block_costs) != model.num_blocks:
        raise ValidationError(
            f"expected {model.num_blocks} block costs, got {len(per_block_costs)}"
        )
    if plan_time < 0:
        raise ValidationError(f"plan_time must be >= 0, got {plan_time}")


def build_iteration_timeline(
    per_block_costs: Sequence[LayerCost],
    plan_time: float,
    model: ModelSpec,
    iteration: int = 0,
) -> IterationTimeline:
    """Overlapped timeline for one iteration (see module docstring).

    plan_time is the modeled duration of one placement search; it rides on
    each block's first all-to-all and stands for the next iteration's
    search. The first block's Trans and Agg have no host windows and are
    charged serialized at the iteration boundaries.
    """
    _validate_costs(per_block_costs, plan_time, model)
    costs = list(per_block_costs)
    l = len(costs)
    b = _Builder(iteration)

    # No block precedes block 0: its parameter transfer heads the iteration.
    b.slot(network=(OpKind.SUB_TRANS1, 0, costs[0].trans_time))

    for i in range(l):
        c = costs[i]
        st1 = st2 = 0.0
        if i + 1 < l:
            st1, st2 = partition_trans(costs[i + 1].trans_time, c.fec_time, model.fnec_time)
        b.slot(
            network=(OpKind.A2A, i, c.a2a_time),
            compute=(OpKind.PLAN, i, plan_time),
            iteration_override={Lane.COMPUTE: iteration + 1},
        )
        b.slot(compute=(OpKind.FEC, i, c.fec_time), network=(OpKind.SUB_TRANS1, i + 1, st1))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(compute=(OpKind.FNEC, i, model.fnec_time), network=(OpKind.SUB_TRANS2, i + 1, st2))

    for i in range(l - 1, -1, -1):
        c = costs[i]
        sa1 = sa2 = 0.0
        if i + 1 < l:
            sa1, sa2 = partition_agg(costs[i + 1].agg_time, c.bec_time, model.bnec_time)
        b.slot(compute=(OpKind.BNEC, i, model.bnec_time), network=(OpKind.SUB_AGG1, i + 1, sa1))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(compute=(OpKind.BEC, i, c.bec_time), network=(OpKind.SUB_AGG2, i + 1, sa2))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))

    # No block follows block 0 on the backward pass: its aggregation tails.
    b.slot(network=(OpKind.SUB_AGG2, 0, costs[0].agg_time))
    return b.build()


def build_serial_timeline(
    per_block_costs: Sequence[LayerCost],
    plan_time: float,
    model: ModelSpec,
    iteration: int = 0,
) -> IterationTimeline:
    """Fully serialized timeline: every primitive in its own slot.

    Models execution without any communication/computation overlap; the
    placement search blocks its own iteration here.
    """
    _validate_costs(per_block_costs, plan_time, model)
    costs = list(per_block_costs)
    l = len(costs)
    b = _Builder(iteration)

    for i in range(l):
        c = costs[i]
        b.slot(compute=(OpKind.PLAN, i, plan_time))
        b.slot(network=(OpKind.SUB_TRANS1, i, c.trans_time))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(compute=(OpKind.FEC, i, c.fec_time))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(compute=(OpKind.FNEC, i, model.fnec_time))

    for i in range(l - 1, -1, -1):
        c = costs[i]
        b.slot(compute=(OpKind.BNEC, i, model.bnec_time))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(compute=(OpKind.BEC, i, c.bec_time))
        b.slot(network=(OpKind.A2A, i, c.a2a_time))
        b.slot(network=(OpKind.SUB_AGG2, i, c.agg_time))

    return b.build()


_SVG_COLORS = {
    OpKind.A2A: "#4c78a8",
    OpKind.FEC: "#59a14f",
    OpKind.BEC: "#8cd17d",
    OpKind.FNEC: "#b6992d",
    OpKind.BNEC: "#e7ba52",
    OpKind.PLAN: "#b279a2",
    OpKind.SUB_TRANS1: "#e45756",
    OpKind.SUB_TRANS2: "#ff9d98",
    OpKind.SUB_AGG1: "#f28e2b",
    OpKind.SUB_AGG2: "#ffbe7d",
}

_LANE_Y = {Lane.COMPUTE: 30, Lane.NETWORK: 80}


def render_gantt_svg(timeline: IterationTimeline, width: int = 1000) -> str:
    """Two-lane Gantt chart; x axis in milliseconds, ops colored by kind."""
    span = timeline.makespan()
    scale = (width - 120) / span if span > 0 else 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="150" '
        f'font-family="monospace" font-size="10">',
        '<style>rect{stroke:#333;stroke-width:0.5}</style>',
        f'<text x="10" y="{_LANE_Y[Lane.COMPUTE] + 14}">compute</text>',
        f'<text x="10" y="{_LANE_Y[Lane.NETWORK] + 14}">network</text>',
        f'<text x="70" y="140">iteration {timeline.iteration}: '
        f"makespan {span * 1e3:.3f} ms</text>",
    ]
    for op in timeline.ops:
        x = 70 + op.start * scale
        w = max(op.duration * scale, 0.5)
        y = _LANE_Y[op.lane]
        color = _SVG_COLORS[op.kind]
        label = f"{op.kind.value}[{op.block}]"
        lines.append(
            f'<rect class="{op.kind.value}" x="{x:.2f}" y="{y}" width="{w:.2f}" '
            f'height="22" fill="{color}"><title>{label} '
            f"{op.start * 1e3:.3f}-{op.end * 1e3:.3f} ms</title></rect>"
        )
        if w > 30:
            lines.append(f'<text x="{x + 2:.2f}" y="{y + 14}">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines)
