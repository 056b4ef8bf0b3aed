"""Analytic execution-time model for one MoE layer.

All communication and computation terms are device maxima, so a single
LayerCost describes the whole cluster for one layer. Two totals are
carried side by side: the plain serialized total, and the overlap-aware
total where parameter transfer (Trans) hides under forward compute and
gradient aggregation (Agg) hides under backward compute.

Float care: both totals are accumulated in the same association order and
the partial terms satisfy ptrans <= trans and pagg <= agg exactly, so
``total_scheduled <= total_unscheduled`` holds bitwise, without tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import ClusterSpec, DeviceLoads, ModelSpec, ValidationError


@dataclass(frozen=True)
class LayerCost:
    """Per-layer cost components, in seconds."""

    a2a_time: float
    fec_time: float
    bec_time: float
    trans_time: float
    agg_time: float
    ptrans_time: float
    pagg_time: float
    total_unscheduled: float
    total_scheduled: float


def t_a2a(loads: DeviceLoads, cluster: ClusterSpec, model: ModelSpec) -> float:
    """All-to-all time: the slowest receiver bounds the exchange."""
    r_max = int(loads.R.max())
    return r_max * model.input_bytes / cluster.avg_bandwidth


def t_fec(loads: DeviceLoads, cluster: ClusterSpec) -> float:
    """Forward expert compute: devices run in parallel, experts within a
    device sequentially, so the busiest device bounds the step."""
    h_max = int(loads.H.max())
    return h_max / cluster.compute_throughput


def t_bec(loads: DeviceLoads, cluster: ClusterSpec) -> float:
    """Backward expert compute, modeled as twice the forward time."""
    return 2.0 * t_fec(loads, cluster)


def _check_s_n(s: int, n: int, cluster: ClusterSpec, model: ModelSpec) -> None:
    if not 0 <= s <= model.num_experts:
        raise ValidationError(f"s must be in [0, {model.num_experts}], got {s}")
    if not 0 <= n < cluster.num_devices:
        raise ValidationError(f"n must be in [0, {cluster.num_devices - 1}], got {n}")


def t_trans(s: int, n: int, cluster: ClusterSpec, model: ModelSpec) -> float:
    """Parameter-broadcast time for s selected experts, each replicated on
    D - n devices; one communication round per selected expert."""
    _check_s_n(s, n, cluster, model)
    d = cluster.num_devices
    return s * (d - n) * model.expert_param_bytes / (d * cluster.avg_bandwidth)


def t_agg(s: int, n: int, cluster: ClusterSpec, model: ModelSpec) -> float:
    """Gradient-aggregation time; mirrors t_trans with gradient bytes."""
    _check_s_n(s, n, cluster, model)
    d = cluster.num_devices
    return s * (d - n) * model.expert_grad_bytes / (d * cluster.avg_bandwidth)


def t_ptrans(trans_time: float, fec_time: float, fnec_time: float) -> float:
    """Exposed Trans time after hiding under forward compute windows."""
    return max(0.0, trans_time - fec_time - fnec_time)


def t_pagg(agg_time: float, bec_time: float, bnec_time: float) -> float:
    """Exposed Agg time after hiding under backward compute windows."""
    return max(0.0, agg_time - bec_time - bnec_time)


def _build(loads: DeviceLoads, s: int, n: int, cluster: ClusterSpec, model: ModelSpec) -> LayerCost:
    a2a = t_a2a(loads, cluster, model)
    fec = t_fec(loads, cluster)
    bec = t_bec(loads, cluster)
    trans = t_trans(s, n, cluster, model)
    agg = t_agg(s, n, cluster, model)
    ptrans = t_ptrans(trans, fec, model.fnec_time)
    pagg = t_pagg(agg, bec, model.bnec_time)
    # Keep both sums in the same association order; see module docstring.
    total_unscheduled = 4.0 * a2a + fec + bec + trans + agg
    total_scheduled = 4.0 * a2a + fec + bec + ptrans + pagg
    return LayerCost(
        a2a_time=a2a,
        fec_time=fec,
        bec_time=bec,
        trans_time=trans,
        agg_time=agg,
        ptrans_time=ptrans,
        pagg_time=pagg,
        total_unscheduled=total_unscheduled,
        total_scheduled=total_scheduled,
    )


def layer_cost_unscheduled(
    loads: DeviceLoads, s: int, n: int, cluster: ClusterSpec, model: ModelSpec
) -> LayerCost:
    """Layer cost with every primitive serialized; read total_unscheduled
    (= 4 a2a + fec + bec + trans + agg, where fec + bec = 3 x fec)."""
    return _build(loads, s, n, cluster, model)


def layer_cost_scheduled(
    loads: DeviceLoads, s: int, n: int, cluster: ClusterSpec, model: ModelSpec
) -> LayerCost:
    """Overlap-aware layer cost; read total_scheduled (= 4 a2a + fec + bec
    + exposed trans + exposed agg)."""
    return _build(loads, s, n, cluster, model)
