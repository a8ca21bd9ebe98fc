#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command-line entry point.

```
swapdp scenario build --hospitals data/rwanda_hospitals.csv --config data/rwanda_config.json --out rwanda.json
swapdp solve bi --scenario rwanda.json --out runs/bi
swapdp solve rl --scenario rwanda.json --out runs/rl --rl-config rl.json
swapdp evaluate --scenario rwanda.json --policy runs/bi/tables.bin --paths 500 --seed 0 --out bi.csv
swapdp sweep --scenario desk.json --param fleet_size --from 2 --to 8 --step 1 --solver bi --out fleet.csv
swapdp report --scenario rwanda.json
```

Exit codes: 0 success, 1 unexpected failure, 2 invalid input, 3 capacity guard, 4 incompatible
artifacts.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

import tracing
from artifacts import (
    approx_frame,
    check_compatible,
    load_tables,
    metrics_frame,
    paths_frame,
    policy_frame,
    record_artifacts,
    save_approx,
    save_tables,
    trace_frame,
    value_frame,
    write_csv,
    write_manifest,
)
from errors import CapacityError, IncompatibleArtifactError, InvalidInputError, SwapDPError
from exact import (
    BenchmarkPolicy,
    PolicyTable,
    backward_induction,
    check_capacity,
    default_threads,
    evaluate_fixed_policy,
)
from flat import flat_backward_induction, flat_start_state
from mdp import State
from models import RLConfig, RunManifest
from rl import GreedyPolicy, train
from scenario import Scenario, build_scenario, load_config
from simulation import (
    SOLVERS,
    SWEEP_PARAMS,
    mean_demand_path,
    optimality_gap,
    param_range,
    resolve_policy,
    run_path,
    simulate_paths,
    solve_policy,
    sweep,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-9s %(module)s:%(filename)s:%(lineno)d %(message)s"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_CAPACITY = 3
EXIT_INCOMPATIBLE = 4

# published reference values for the 15-drone Rwanda scenario; trend targets only
REFERENCE_RESULTS = {
    "bi": {"expected_total_reward": 115.1, "avg_met_pct": 63.7},
    "rl": {"expected_total_reward": 109.0, "avg_met_pct": 60.9, "gap_pct": 5.3},
    "benchmark": {"expected_total_reward": 105.6, "avg_met_pct": 58.5},
}


def _peak_memory_mb() -> Optional[float]:
    try:
        import resource
    except ImportError:  # not available on Windows
        return None
    # ru_maxrss is in KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def _resolve_threads(value: Optional[int]) -> int:
    if value is None:
        env = os.getenv("SWAPDP_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError:
                raise InvalidInputError(f"SWAPDP_THREADS must be an integer, got {env!r}")
    if value is None:
        return default_threads()
    if value < 1:
        raise InvalidInputError(f"--threads must be >= 1, got {value}")
    return value


def _load_rl_config(path: Optional[str]) -> RLConfig:
    if path is None:
        return RLConfig()
    return RLConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def _manifest(args: argparse.Namespace, **fields) -> RunManifest:
    arguments = {k: v for k, v in vars(args).items() if k != "handler"}
    return RunManifest(command=args.command_path, arguments=arguments, **fields)


def _finish(manifest: RunManifest, outputs: List[Path], manifest_path: Path, started: float):
    record_artifacts(manifest, outputs)
    manifest.timings["wall_seconds"] = round(time.perf_counter() - started, 3)
    manifest.peak_memory_mb = _peak_memory_mb()
    write_manifest(manifest, manifest_path)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_scenario_build(args: argparse.Namespace) -> int:
    """Build a scenario document from a hospital file and a configuration."""
    started = time.perf_counter()
    config = load_config(args.config)
    scenario = build_scenario(Path(args.hospitals), config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scenario.save(out)
    rates_path = _sibling(out, ".rates.csv")
    write_csv(scenario.rates_frame(), rates_path)
    manifest = _manifest(
        args, config=config.model_dump(mode="json"), scenario_hash=scenario.hash
    )
    _finish(manifest, [out, rates_path], _sibling(out, ".manifest.json"), started)
    print(
        f"class 1: {scenario.class_daily_flights[0]:g} flights/day, "
        f"class 2: {scenario.class_daily_flights[1]:g} flights/day"
    )
    return EXIT_OK


def _materialize(policy: Callable, scenario: Scenario, states, solver: str) -> PolicyTable:
    N = scenario.model.horizon
    actions = np.array(
        [[tuple(policy(t, s)) for s in states] for t in range(1, N)], dtype=np.int64
    ).reshape(N - 1, len(states), 3)
    return PolicyTable(actions, tuple(states), scenario.hash, solver)


def cmd_solve(args: argparse.Namespace) -> int:
    """Solve a scenario and write value and policy artifacts."""
    started = time.perf_counter()
    scenario = Scenario.load(args.scenario)
    threads = _resolve_threads(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: List[Path] = []
    manifest = _manifest(
        args,
        config=scenario.config.model_dump(mode="json"),
        scenario_hash=scenario.hash,
        solver=args.solver,
    )

    with tracing.span(f"solve {args.solver}", fleet_size=scenario.model.fleet_size):
        if args.solver in ("bi", "flat", "benchmark"):
            if args.solver == "bi":
                values, policy = backward_induction(scenario, threads=threads)
            elif args.solver == "flat":
                values, policy = flat_backward_induction(scenario)
            else:
                benchmark = BenchmarkPolicy(scenario.model)
                values = evaluate_fixed_policy(scenario, benchmark, "benchmark", threads)
                policy = _materialize(benchmark, scenario, values.states, "benchmark")
            outputs += [out / "values.csv", out / "policy.csv", out / "tables.bin"]
            write_csv(value_frame(values), outputs[0])
            write_csv(policy_frame(policy), outputs[1])
            save_tables(outputs[2], values, policy)
            if args.solver == "flat":
                start = State(flat_start_state(scenario), 0)
            else:
                start = scenario.start_state
            manifest.results["v1"] = values.value(1, start)
        else:
            rl_config = _load_rl_config(args.rl_config)
            manifest.config["rl"] = rl_config.model_dump(mode="json")
            manifest.seeds["rl"] = rl_config.seed
            table = train(scenario, rl_config)
            greedy = GreedyPolicy(
                table, scenario, rl_config.greedy_mode, rl_config.tau2, rl_config.seed
            )
            manifest.config["greedy_mode"] = greedy.mode
            policy = _materialize(greedy, scenario, table.states, "rl")
            outputs += [
                out / "approx_values.csv",
                out / "trace.csv",
                out / "policy.csv",
                out / "tables.bin",
            ]
            write_csv(approx_frame(table), outputs[0])
            write_csv(trace_frame(table), outputs[1])
            write_csv(policy_frame(policy), outputs[2])
            save_approx(
                outputs[3], table, {"mode": greedy.mode, "tau2": greedy.tau2, "seed": greedy.seed}
            )

    manifest.timings["solve_seconds"] = round(time.perf_counter() - started, 3)
    _finish(manifest, outputs, out / "manifest.json", started)
    logger.info(f"Wrote {len(outputs)} artifacts to {out}")
    return EXIT_OK


def _policy_from_artifact(args: argparse.Namespace, scenario: Scenario, rl_config: RLConfig):
    if args.policy == "benchmark":
        return resolve_policy(scenario, "benchmark"), "benchmark"
    artifact = load_tables(args.policy)
    check_compatible(artifact.scenario_hash, scenario.hash, args.policy)
    if artifact.approx is not None:
        if artifact.greedy is not None:
            # act as the policy written by `solve rl`, whatever --rl-config says now
            rl_config = rl_config.model_copy(
                update={
                    "greedy_mode": artifact.greedy["mode"],
                    "tau2": artifact.greedy["tau2"],
                    "seed": artifact.greedy["seed"],
                }
            )
        return resolve_policy(scenario, artifact.approx, rl_config), artifact.solver
    if artifact.policy is None:
        raise IncompatibleArtifactError(f"{args.policy} holds values but no policy")
    return resolve_policy(scenario, artifact.policy), artifact.solver


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Simulate a policy on sample paths and write the metrics row."""
    started = time.perf_counter()
    scenario = Scenario.load(args.scenario)
    threads = _resolve_threads(args.threads)
    rl_config = _load_rl_config(args.rl_config)
    (policy, runner), solver = _policy_from_artifact(args, scenario, rl_config)

    summary, paths = simulate_paths(
        scenario, policy, args.paths, args.seed, solver, None, threads, runner
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outputs = [out]
    write_csv(metrics_frame([summary]), out)
    if args.dump:
        outputs.append(Path(args.dump))
        write_csv(paths_frame(paths), outputs[-1])
    if args.mean_demand:
        outputs.append(Path(args.mean_demand))
        write_csv(paths_frame([mean_demand_path(scenario, policy, runner)]), outputs[-1])

    manifest = _manifest(
        args,
        config=scenario.config.model_dump(mode="json"),
        scenario_hash=scenario.hash,
        solver=solver,
        seeds={"paths": args.seed},
    )
    _finish(manifest, outputs, _sibling(out, ".manifest.json"), started)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Simulate one solver over a range of one parameter."""
    started = time.perf_counter()
    scenario = Scenario.load(args.scenario)
    threads = _resolve_threads(args.threads)
    rl_config = _load_rl_config(args.rl_config)
    values = param_range(args.start, args.stop, args.step)
    rows = sweep(
        scenario, args.param, values, args.solver, args.paths, args.seed, rl_config, threads
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(metrics_frame(rows), out)
    manifest = _manifest(
        args,
        config={
            "scenario": scenario.config.model_dump(mode="json"),
            "rl": rl_config.model_dump(mode="json"),
        },
        scenario_hash=scenario.hash,
        solver=args.solver,
        seeds={"paths": args.seed, "rl": rl_config.seed},
    )
    _finish(manifest, [out], _sibling(out, ".manifest.json"), started)
    return EXIT_OK


def report_rows(
    scenario: Scenario, rl_config: RLConfig, n_paths: int, seed: int, threads: int
) -> pd.DataFrame:
    """Expected total reward and met demand of the three policies next to published values."""
    start = scenario.start_state
    rows: Dict[str, Dict[str, float]] = {}
    policies = {}
    exact_ok = True
    try:
        check_capacity(scenario)
    except CapacityError:
        exact_ok = False
        logger.warning("Fleet above the exact-solver limit: BI skipped, RL valued by simulation")

    if exact_ok:
        values, policies["bi"] = backward_induction(scenario, threads=threads)
        rows["bi"] = {"expected_total_reward": values.value(1, start)}
    policies["rl"], _ = solve_policy(scenario, "rl", rl_config, threads)
    policies["benchmark"] = BenchmarkPolicy(scenario.model)
    for name in ("rl", "benchmark"):
        if exact_ok:
            table = evaluate_fixed_policy(scenario, policies[name], name, threads)
            rows[name] = {"expected_total_reward": table.value(1, start)}
        else:
            rows[name] = {}

    for name, policy in policies.items():
        summary, _ = simulate_paths(scenario, policy, n_paths, seed, name, None, threads, run_path)
        rows[name]["avg_met_pct"] = summary.avg_met_pct
        rows[name].setdefault("expected_total_reward", summary.mean_reward)
    if "bi" in rows:
        for name in ("rl", "benchmark"):
            rows[name]["gap_pct"] = optimality_gap(
                rows["bi"]["expected_total_reward"], rows[name]["expected_total_reward"]
            )

    records = []
    for name in ("bi", "rl", "benchmark"):
        if name not in rows:
            continue
        reference = REFERENCE_RESULTS[name]
        records.append(
            {
                "policy": name,
                "expected_total_reward": rows[name]["expected_total_reward"],
                "avg_met_pct": rows[name]["avg_met_pct"],
                "gap_pct": rows[name].get("gap_pct"),
                "reference_expected_total_reward": reference["expected_total_reward"],
                "reference_avg_met_pct": reference["avg_met_pct"],
                "reference_gap_pct": reference.get("gap_pct"),
            }
        )
    return pd.DataFrame(records)


def cmd_report(args: argparse.Namespace) -> int:
    """Print this build's results next to the published reference values."""
    started = time.perf_counter()
    scenario = Scenario.load(args.scenario)
    threads = _resolve_threads(args.threads)
    rl_config = _load_rl_config(args.rl_config)
    frame = report_rows(scenario, rl_config, args.paths, args.seed, threads)
    print("Reference values come from a different arrival shape and are trend targets only.")
    print(frame.to_string(index=False, float_format=lambda x: f"{x:.2f}"))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(frame, out)
        manifest = _manifest(
            args,
            config={
                "scenario": scenario.config.model_dump(mode="json"),
                "rl": rl_config.model_dump(mode="json"),
            },
            scenario_hash=scenario.hash,
            seeds={"paths": args.seed, "rl": rl_config.seed},
        )
        _finish(manifest, [out], _sibling(out, ".manifest.json"), started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every command."""
    parser = argparse.ArgumentParser(prog="swapdp", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None, help="worker threads (env SWAPDP_THREADS)")
    parser.add_argument(
        "--tracing-endpoint",
        default=os.getenv("SWAPDP_TRACING_ENDPOINT"),
        help="OTLP HTTP endpoint (env SWAPDP_TRACING_ENDPOINT)",
    )
    parser.add_argument(
        "--log-level",
        default=os.getenv("SWAPDP_LOG_LEVEL", "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        help="log level (env SWAPDP_LOG_LEVEL)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    scenario = commands.add_parser("scenario", help="scenario documents")
    scenario_commands = scenario.add_subparsers(dest="scenario_command", required=True)
    build = scenario_commands.add_parser("build", help="build a scenario from a hospital file")
    build.add_argument("--hospitals", required=True)
    build.add_argument("--config", required=True)
    build.add_argument("--out", required=True)
    build.set_defaults(handler=cmd_scenario_build, command_path="scenario build")

    solve = commands.add_parser("solve", help="solve a scenario")
    solve.add_argument("solver", choices=["bi", "rl", "flat", "benchmark"])
    solve.add_argument("--scenario", required=True)
    solve.add_argument("--out", required=True, help="output directory")
    solve.add_argument("--rl-config", default=None)
    solve.set_defaults(handler=cmd_solve, command_path="solve")

    evaluate = commands.add_parser("evaluate", help="simulate a policy")
    evaluate.add_argument("--scenario", required=True)
    evaluate.add_argument("--policy", required=True, help="tables.bin from solve, or 'benchmark'")
    evaluate.add_argument("--paths", type=int, default=500)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", required=True, help="metrics CSV")
    evaluate.add_argument("--dump", default=None, help="per-path CSV")
    evaluate.add_argument("--mean-demand", default=None, help="mean-demand path CSV")
    evaluate.add_argument("--rl-config", default=None)
    evaluate.set_defaults(handler=cmd_evaluate, command_path="evaluate")

    sweep_parser = commands.add_parser("sweep", help="sweep one parameter")
    sweep_parser.add_argument("--scenario", required=True)
    sweep_parser.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep_parser.add_argument("--from", dest="start", type=float, required=True)
    sweep_parser.add_argument("--to", dest="stop", type=float, required=True)
    sweep_parser.add_argument("--step", type=float, default=1.0)
    sweep_parser.add_argument("--solver", choices=SOLVERS, default="bi")
    sweep_parser.add_argument("--paths", type=int, default=500)
    sweep_parser.add_argument("--seed", type=int, default=0)
    sweep_parser.add_argument("--out", required=True)
    sweep_parser.add_argument("--rl-config", default=None)
    sweep_parser.set_defaults(handler=cmd_sweep, command_path="sweep")

    report = commands.add_parser("report", help="compare against published values")
    report.add_argument("--scenario", required=True)
    report.add_argument("--rl-config", default=None)
    report.add_argument("--paths", type=int, default=500)
    report.add_argument("--seed", type=int, default=0)
    report.add_argument("--out", default=None)
    report.set_defaults(handler=cmd_report, command_path="report")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, force=True)
    try:
        tracing.setup(endpoint=args.tracing_endpoint)
        with tracing.span(args.command_path):
            return args.handler(args)
    except (ValidationError, InvalidInputError, FileNotFoundError) as e:
        logger.error(f"invalid input: {e}")
        return EXIT_INVALID
    except CapacityError as e:
        logger.error(str(e))
        return EXIT_CAPACITY
    except IncompatibleArtifactError as e:
        logger.error(f"incompatible artifact: {e}")
        return EXIT_INCOMPATIBLE
    except SwapDPError as e:
        logger.error(str(e))
        return EXIT_FAILURE
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_FAILURE
    finally:
        tracing.shutdown()


if __name__ == "__main__":
    sys.exit(main())
