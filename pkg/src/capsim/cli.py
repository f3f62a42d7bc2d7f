"""Command-line surface: validate scenarios, run simulations, compare against
a cloud-only baseline, and query the exact placement oracle.

Exit codes: 0 success, 1 scenario validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__, deployment
from .descriptors import Tier
from .engine import Simulation
from .scenario import Scenario, ScenarioParseError
from .workload import generate_arrivals

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

TRACE_COLUMNS = [
    "timestamp_us",
    "seq",
    "kind",
    "request_id",
    "node_id",
    "realization_id",
    "state_id",
    "bytes",
    "detail",
]


def frac_decimal(value: Fraction, places: int = 6) -> str:
    scale = 10**places
    sign = "-" if value < 0 else ""
    scaled = abs(value.numerator) * scale // value.denominator
    return f"{sign}{scaled // scale}.{scaled % scale:0{places}d}"


def _load_scenario(path: str) -> Scenario | None:
    try:
        scenario = Scenario.load(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        return None
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    return scenario


def _validate_or_report(scenario: Scenario) -> bool:
    errors = scenario.validate()
    for err in errors:
        print(f"invalid: {err}", file=sys.stderr)
    return not errors


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario)
    if scenario is None:
        return EXIT_VALIDATION
    if not _validate_or_report(scenario):
        return EXIT_VALIDATION
    print(f"ok: {scenario.name}")
    return EXIT_OK


def _write_outputs(out_dir: Path, scenario: Scenario, sim: Simulation, result, trace: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(result.metrics.to_json())
    (out_dir / "receipts.jsonl").write_text(result.receipts_jsonl())
    manifest = {
        "scenario": scenario.name,
        "scenario_digest": scenario.digest,
        "seed": sim.seed,
        "duration_us": sim.duration_us,
        "tool_version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    if trace:
        lines = [",".join(TRACE_COLUMNS)]
        for row in result.trace:
            known = {c: row.get(c, "") for c in TRACE_COLUMNS}
            detail = {k: v for k, v in row.items() if k not in TRACE_COLUMNS}
            known["detail"] = ";".join(f"{k}={detail[k]}" for k in sorted(detail))
            lines.append(",".join(str(known[c]) for c in TRACE_COLUMNS))
        (out_dir / "trace.csv").write_text("\n".join(lines) + "\n")


def _summary_line(metrics_doc: dict) -> str:
    cache = metrics_doc["cache"]["tensor_state"]
    return (
        f"requests={metrics_doc['arrivals']} "
        f"completion_rate={metrics_doc['completion_rate']} "
        f"p95_ttft_us={metrics_doc['ttft_us']['p95']} "
        f"cache_hit_ratio={cache['ratio']} "
        f"core_bytes={metrics_doc['core_bytes']['total']}"
    )


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario)
    if scenario is None:
        return EXIT_VALIDATION
    if not _validate_or_report(scenario):
        return EXIT_VALIDATION
    try:
        sim = Simulation(scenario, seed=args.seed, duration_us=args.duration_us, trace=args.trace)
        result = sim.run()
        if args.out:
            _write_outputs(Path(args.out), scenario, sim, result, args.trace)
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_summary_line(result.metrics.to_dict()))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario)
    if scenario is None:
        return EXIT_VALIDATION
    if not _validate_or_report(scenario):
        return EXIT_VALIDATION
    try:
        sim_full = Simulation(scenario, seed=args.seed, duration_us=args.duration_us)
        full = sim_full.run().metrics.to_dict()
        sim_base = Simulation(
            scenario, seed=args.seed, duration_us=args.duration_us, placement_tiers={Tier.CLOUD}
        )
        base = sim_base.run().metrics.to_dict()
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    def pick(doc: dict) -> dict:
        return {
            "served": doc["served"],
            "completion_rate": doc["completion_rate"],
            "p95_ttft_us": doc["ttft_us"]["p95"],
            "mean_ttft_us": doc["ttft_us"]["mean"],
            "core_bytes": doc["core_bytes"]["total"],
            "cache_hit_ratio": doc["cache"]["tensor_state"]["ratio"],
        }

    report = {
        "hierarchical": pick(full),
        "cloud_only": pick(base),
        "delta": {
            "p95_ttft_us": full["ttft_us"]["p95"] - base["ttft_us"]["p95"],
            "mean_ttft_us": full["ttft_us"]["mean"] - base["ttft_us"]["mean"],
            "core_bytes": full["core_bytes"]["total"] - base["core_bytes"]["total"],
        },
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(
        "hierarchical: "
        f"p95_ttft_us={report['hierarchical']['p95_ttft_us']} core_bytes={report['hierarchical']['core_bytes']}"
    )
    print(
        "cloud_only:   "
        f"p95_ttft_us={report['cloud_only']['p95_ttft_us']} core_bytes={report['cloud_only']['core_bytes']}"
    )
    print(
        "delta:        "
        f"p95_ttft_us={report['delta']['p95_ttft_us']} core_bytes={report['delta']['core_bytes']}"
    )
    return EXIT_OK


def cmd_oracle_place(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario)
    if scenario is None:
        return EXIT_VALIDATION
    if not _validate_or_report(scenario):
        return EXIT_VALIDATION
    try:
        sim = Simulation(scenario)
        at = args.at if args.at is not None else int(scenario.deployment_config.get("epoch_us", 60_000_000))
        window = int(scenario.deployment_config.get("window_us", 300_000_000))
        arrivals = generate_arrivals(scenario.workload, min(at, sim.duration_us), sim.seed)
        requests = [a.request for a in arrivals] + [s.request for s in scenario.scripted_requests]
        cells = deployment.cells_from_requests(requests, max(0, at - window), at)
        residency = {
            node_id: set(state.residency) for node_id, state in sim.broker.nodes.items()
        }
        problem = deployment.build_problem(sim.router, cells, scenario.weights, residency, now=0)
        placement = deployment.solve_exact(problem)
        objective = deployment.objective(problem, placement)
    except deployment.InstanceTooLarge as exc:
        print(f"error: InstanceTooLarge: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    doc = {
        "at_us": at,
        "demand_cells": len(cells),
        "placement": sorted([rid, node] for rid, node in placement),
        "objective": frac_decimal(objective),
    }
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capsim",
        description="Deterministic simulator for hierarchical AI capability serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="parse and validate a scenario file")
    p_validate.add_argument("scenario")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a scenario and write metrics/receipts")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--duration-us", type=int, default=None, help="override the scenario duration")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--trace", action="store_true", help="also write the event trace table")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="paired run against a cloud-only placement baseline")
    p_cmp.add_argument("scenario")
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--duration-us", type=int, default=None)
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_oracle = sub.add_parser(
        "oracle-place",
        help="exact placement for the demand window ending at --at, against initial residency",
    )
    p_oracle.add_argument("scenario")
    p_oracle.add_argument("--at", type=int, default=None, help="window end, microseconds (default: one epoch)")
    p_oracle.set_defaults(func=cmd_oracle_place)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
