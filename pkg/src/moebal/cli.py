"""Command-line entry point: trace generation, simulation, comparison.

Exit codes: 0 success, 1 I/O failure, 2 validation failure.

Config files are JSON with a ``schema_version`` field and optional
sections ``generator``, ``cluster``, ``model``, ``planner`` plus a
top-level ``plan_frac``; commands read the sections they need and
command-line flags override file values. The same file can be passed to
every flag that expects a config. Set MOEBAL_LOG=DEBUG (or INFO, ...) for
log output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields

from .core import ClusterSpec, ModelSpec, ValidationError
from .planner import PlannerConfig
from .simulator import POLICY_NAME_HELP, RunReport, parse_policy, run
from .workload import (
    GeneratorConfig,
    generate_trace,
    mean_adjacent_locality,
    read_trace,
    write_trace,
)

logger = logging.getLogger("moebal")

SCHEMA_VERSION = 1


def _build_section(cls, data: dict, section: str):
    """Instantiate a config dataclass, naming the config field on error."""
    known = {f.name for f in dataclass_fields(cls)}
    required = {
        f.name
        for f in dataclass_fields(cls)
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    }
    for key in data:
        if key not in known:
            raise ValidationError(f"{section}.{key}: unknown field")
    for key in required:
        if key not in data:
            raise ValidationError(f"{section}.{key}: missing required field")
    try:
        return cls(**data)
    except ValidationError as exc:
        raise ValidationError(f"{section}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{section}: {exc}") from exc


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(
            f"schema_version: expected {SCHEMA_VERSION}, got {version!r}"
        )
    return obj


def _generator_from(config: dict, args) -> tuple[GeneratorConfig, int, int]:
    section = dict(config.get("generator") or {})
    iterations = section.pop("iterations", 100)
    layers = section.pop("layers", 1)
    if args.seed is not None:
        section["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        iterations = args.iterations
    if getattr(args, "layers", None) is not None:
        layers = args.layers
    if not isinstance(iterations, int) or iterations < 1:
        raise ValidationError(f"generator.iterations: must be a positive integer, got {iterations!r}")
    if not isinstance(layers, int) or layers < 1:
        raise ValidationError(f"generator.layers: must be a positive integer, got {layers!r}")
    return _build_section(GeneratorConfig, section, "generator"), iterations, layers


def _cluster_from(config: dict) -> ClusterSpec:
    section = config.get("cluster")
    if not section:
        raise ValidationError("cluster: missing section")
    return _build_section(ClusterSpec, section, "cluster")


def _model_from(config: dict) -> ModelSpec:
    section = config.get("model")
    if not section:
        raise ValidationError("model: missing section")
    return _build_section(ModelSpec, section, "model")


def _planner_from(config: dict, args) -> PlannerConfig:
    section = dict(config.get("planner") or {})
    if args.n is not None:
        section["n"] = args.n
    if args.alpha is not None:
        section["alpha"] = args.alpha
    if args.reuse_interval is not None:
        section["reuse_interval"] = args.reuse_interval
    section.pop("overlap_aware", None)  # chosen by the policy, not the file
    return _build_section(PlannerConfig, section, "planner")


def cmd_generate(args) -> int:
    config = load_config(args.config)
    gen, iterations, layers = _generator_from(config, args)
    records = generate_trace(gen, iterations, layers)
    write_trace(records, args.out)
    locality = mean_adjacent_locality(records)
    print(
        f"wrote {args.out}: D={gen.num_devices} E={gen.num_experts} "
        f"iterations={iterations} layers={layers} "
        f"mean_adjacent_locality={locality:.4f}"
    )
    return 0


def _parse_gantt(arg: str, num_iterations: int) -> list[int]:
    out = []
    for part in arg.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            idx = int(part)
        except ValueError:
            raise ValidationError(f"--gantt: {part!r} is not an iteration index") from None
        if not 0 <= idx < num_iterations:
            raise ValidationError(
                f"--gantt: iteration {idx} out of range [0, {num_iterations - 1}]"
            )
        out.append(idx)
    return out


def _simulation_setup(args) -> tuple[ClusterSpec, ModelSpec, PlannerConfig, float]:
    cluster_cfg = load_config(args.cluster)
    model_cfg = load_config(args.model) if args.model else cluster_cfg
    plan_frac = cluster_cfg.get("plan_frac", 0.5)
    if not isinstance(plan_frac, (int, float)) or isinstance(plan_frac, bool):
        raise ValidationError(f"plan_frac: must be a number, got {plan_frac!r}")
    return (
        _cluster_from(cluster_cfg),
        _model_from(model_cfg),
        _planner_from(cluster_cfg, args),
        float(plan_frac),
    )


def cmd_simulate(args) -> int:
    cluster, model, planner, plan_frac = _simulation_setup(args)
    policy = parse_policy(args.policy, planner=planner, plan_frac=plan_frac)
    trace = read_trace(args.trace)
    report = run(trace, policy, cluster, model, keep_timelines=bool(args.gantt))
    report.write_json(args.out + ".json")
    report.write_csv(args.out + ".csv")
    written = [args.out + ".json", args.out + ".csv"]
    if args.gantt:
        for idx in _parse_gantt(args.gantt, report.num_iterations):
            path = f"{args.out}.iter{idx:04d}.svg"
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(report.timelines[idx].to_svg())
            written.append(path)
    print(
        f"policy={report.policy} mean_makespan={report.mean_makespan() * 1e3:.4f}ms "
        f"mean_rb={report.mean_rb():.4f} -> {', '.join(written)}"
    )
    return 0


def _format_compare_table(reports: list[RunReport]) -> tuple[str, list[list[str]]]:
    header = [
        "policy",
        "mean_makespan_ms",
        "speedup_vs_first",
        "mean_rb",
        "search_pct",
        "place_pct",
        "reduce_pct",
        "other_pct",
    ]
    rows = []
    for rep in reports:
        mk = rep.mean_makespan()
        phases = rep.phase_percentages()
        rows.append(
            [
                rep.policy,
                f"{mk * 1e3:.6f}",
                f"{rep.speedup_vs(reports[0]):.4f}",
                f"{rep.mean_rb():.4f}",
                f"{phases['search']:.2f}",
                f"{phases['place']:.2f}",
                f"{phases['reduce']:.2f}",
                f"{phases['other']:.2f}",
            ]
        )
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(header))))
    return "\n".join(lines), [header] + rows


def cmd_compare(args) -> int:
    cluster, model, planner, plan_frac = _simulation_setup(args)
    names: list[str] = []
    for entry in args.policy:
        names.extend(p.strip() for p in entry.split(",") if p.strip())
    if not names:
        raise ValidationError(f"--policy: at least one policy required ({POLICY_NAME_HELP})")
    policies = [parse_policy(name, planner=planner, plan_frac=plan_frac) for name in names]
    trace = read_trace(args.trace)
    with ThreadPoolExecutor(max_workers=min(len(policies), 8)) as pool:
        reports = list(pool.map(lambda p: run(trace, p, cluster, model), policies))
    text, table = _format_compare_table(reports)
    print(text)
    if args.out:
        with open(args.out + ".csv", "w", encoding="utf-8", newline="\n") as fh:
            for row in table:
                fh.write(",".join(row) + "\n")
        with open(args.out + ".txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moebal",
        description="Expert-parallel MoE load-balance planning and simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic gating trace")
    p_gen.add_argument("config", help="config file with a generator section")
    p_gen.add_argument("--out", required=True, help="output trace path (JSONL)")
    p_gen.add_argument("--seed", type=int, default=None, help="override generator.seed")
    p_gen.add_argument("--iterations", type=int, default=None, help="override iteration count")
    p_gen.add_argument("--layers", type=int, default=None, help="override layer count")

    def add_sim_args(p):
        p.add_argument("--trace", required=True, help="input trace (JSONL)")
        p.add_argument("--cluster", required=True, help="config file with a cluster section")
        p.add_argument("--model", default=None, help="config file with a model section (defaults to --cluster)")
        p.add_argument("--seed", type=int, default=None, help="unused placeholder for symmetry")
        p.add_argument("--n", type=int, default=None, help="override planner.n")
        p.add_argument("--alpha", type=float, default=None, help="override planner.alpha")
        p.add_argument("--reuse-interval", dest="reuse_interval", type=int, default=None,
                       help="override planner.reuse_interval")

    p_sim = sub.add_parser("simulate", help="replay a trace under one policy")
    add_sim_args(p_sim)
    p_sim.add_argument("--policy", required=True, help=f"one of: {POLICY_NAME_HELP}")
    p_sim.add_argument("--out", required=True, help="report path prefix (gets .json/.csv)")
    p_sim.add_argument("--gantt", default=None,
                       help="comma-separated iteration indices to render as SVG timelines")

    p_cmp = sub.add_parser("compare", help="replay a trace under several policies")
    add_sim_args(p_cmp)
    p_cmp.add_argument("--policy", action="append", required=True,
                       help=f"policy name, repeatable or comma-separated ({POLICY_NAME_HELP})")
    p_cmp.add_argument("--out", default=None, help="table path prefix (gets .csv/.txt)")

    return parser


def main(argv=None) -> int:
    level = os.environ.get("MOEBAL_LOG")
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO))
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"generate": cmd_generate, "simulate": cmd_simulate, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
