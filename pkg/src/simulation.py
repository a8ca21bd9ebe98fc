# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Monte Carlo sample-path evaluation of policies.

Path k draws all of its demands up front from `numpy.random.default_rng(seed + k)`, one uniform
per (epoch, class) mapped through the truncated demand law. Every policy and every swept
parameter value therefore sees the same demand stream for the same path index, and the result
does not depend on how paths are spread over threads.

Met-demand percentages are computed per path and then averaged over paths. A path (or a class on
a path) with no realized demand counts as 100% met.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidInputError
from exact import BenchmarkPolicy, PolicyFn, PolicyTable, backward_induction
from flat import flat_backward_induction, flat_next_state, flat_start_state
from mdp import (
    Action,
    Demand,
    IntermediateState,
    State,
    TransitionOutcome,
    next_state,
    realized_reward,
    terminal_reward,
    validate_action,
)
from models import MetricsSummary, RLConfig
from rl import ApproxValueTable, GreedyPolicy, train
from scenario import Scenario
from tracing import span

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("fleet_size", "rho21", "tau2")
SOLVERS = ("bi", "rl", "benchmark", "flat")


class PathStep(NamedTuple):
    """One epoch of a sample path."""

    t: int
    state: State
    action: Action
    demand: Demand
    outcome: TransitionOutcome
    reward: float


@dataclass
class SamplePathResult:
    """A simulated trajectory with its service totals."""

    path_index: int
    steps: List[PathStep] = field(default_factory=list)
    terminal_state: Optional[State] = None
    terminal_reward: float = 0.0

    @property
    def demand_c1(self) -> int:
        """Realized class-1 requests."""
        return sum(step.demand.d1 for step in self.steps)

    @property
    def demand_c2(self) -> int:
        """Realized class-2 requests."""
        return sum(step.demand.d2 for step in self.steps)

    @property
    def met_c1_lvl1(self) -> int:
        """Class-1 requests served with level-1 batteries."""
        return sum(step.outcome.met_c1_lvl1 for step in self.steps)

    @property
    def met_c1_lvl2(self) -> int:
        """Class-1 requests served with level-2 batteries."""
        return sum(step.outcome.met_c1_lvl2 for step in self.steps)

    @property
    def met_c2(self) -> int:
        """Class-2 requests served."""
        return sum(step.outcome.met_c2_lvl2 for step in self.steps)

    @property
    def total_reward(self) -> float:
        """Epoch rewards plus the terminal reward."""
        return math.fsum(step.reward for step in self.steps) + self.terminal_reward

    @property
    def action_totals(self) -> Tuple[int, int, int]:
        """Sum of each action component over the path."""
        return (
            sum(step.action.a01 for step in self.steps),
            sum(step.action.a02 for step in self.steps),
            sum(step.action.a12 for step in self.steps),
        )


PathRunner = Callable[[Scenario, PolicyFn, np.ndarray, int], SamplePathResult]


def draw_demands(scenario: Scenario, seed: int, path_index: int) -> np.ndarray:
    """Demands of one path as an (N - 1, 2) integer array."""
    schedule = scenario.schedule
    rng = np.random.default_rng(seed + path_index)
    uniforms = rng.random((schedule.n_epochs, 2))
    demands = np.zeros((schedule.n_epochs, 2), dtype=np.int64)
    for t in range(1, schedule.n_epochs + 1):
        for c in (1, 2):
            demands[t - 1, c - 1] = schedule.distribution(c, t).quantile(uniforms[t - 1, c - 1])
    return demands


def mean_demands(scenario: Scenario) -> np.ndarray:
    """Per-epoch class rates rounded half up."""
    rates = np.array(scenario.rates).T
    return np.floor(rates + 0.5).astype(np.int64)


def run_path(
    scenario: Scenario, policy: PolicyFn, demands: np.ndarray, path_index: int = 0
) -> SamplePathResult:
    """Follow a policy on the classified model against given demands."""
    cfg = scenario.model
    result = SamplePathResult(path_index=path_index)
    s = scenario.start_state
    for t in cfg.decision_epochs:
        a = validate_action(s, policy(t, s), cfg)
        d = Demand(int(demands[t - 1, 0]), int(demands[t - 1, 1]))
        outcome = next_state(s, a, d)
        result.steps.append(PathStep(t, s, a, d, outcome, realized_reward(s, a, outcome, cfg)))
        s = outcome.next_state
    result.terminal_state = s
    result.terminal_reward = terminal_reward(s, cfg)
    return result


def run_flat_path(
    scenario: Scenario, policy: PolicyFn, demands: np.ndarray, path_index: int = 0
) -> SamplePathResult:
    """Follow a flat-model policy; served requests count toward class 1 first."""
    cfg = scenario.model
    M = cfg.fleet_size
    result = SamplePathResult(path_index=path_index)
    s = flat_start_state(scenario)
    for t in cfg.decision_epochs:
        charge = policy(t, State(s, 0)).a01
        d = Demand(int(demands[t - 1, 0]), int(demands[t - 1, 1]))
        flat = flat_next_state(s, charge, d.d1 + d.d2, M)
        met_c1 = min(flat.served, d.d1)
        met_c2 = flat.served - met_c1
        outcome = TransitionOutcome(
            next_state=State(flat.next_state, 0),
            intermediate=IntermediateState(flat.next_state, 0),
            met_c1_lvl1=met_c1,
            met_c1_lvl2=0,
            met_c2_lvl2=met_c2,
            unmet_c1=d.d1 - met_c1,
            unmet_c2=d.d2 - met_c2,
        )
        result.steps.append(
            PathStep(t, State(s, 0), Action(charge, 0, 0), d, outcome, float(flat.served))
        )
        s = flat.next_state
    result.terminal_state = State(s, 0)
    result.terminal_reward = float(s)
    return result


def simulate_path(
    scenario: Scenario,
    policy: PolicyFn,
    path_index: int,
    seed: int,
    runner: PathRunner = run_path,
) -> SamplePathResult:
    """Simulate path `path_index` of the stream seeded by `seed`."""
    return runner(scenario, policy, draw_demands(scenario, seed, path_index), path_index)


def mean_demand_path(
    scenario: Scenario, policy: PolicyFn, runner: PathRunner = run_path
) -> SamplePathResult:
    """The path on which each class's demand equals its rounded mean at every epoch."""
    return runner(scenario, policy, mean_demands(scenario), 0)


def pct_met_demand(met: float, realized: float) -> float:
    """100 * met / realized, and 100 when nothing was requested."""
    if met < 0 or realized < 0:
        raise InvalidInputError(f"met ({met}) and realized ({realized}) must be nonnegative")
    if met > realized:
        raise InvalidInputError(f"met demand {met} exceeds realized demand {realized}")
    if realized == 0:
        return 100.0
    return 100.0 * met / realized


def optimality_gap(exact_value: float, approx_value: float) -> float:
    """Relative distance of an approximate value to the exact optimum, in percent."""
    if exact_value <= 0:
        raise InvalidInputError(f"exact value must be positive, got {exact_value}")
    return 100.0 * abs(exact_value - approx_value) / exact_value


def avg_actions(paths: Sequence[SamplePathResult]) -> Tuple[float, float, float]:
    """Mean total of each action component per path."""
    if not paths:
        raise InvalidInputError("at least one path is required")
    totals = np.array([p.action_totals for p in paths], dtype=float).sum(axis=0)
    return tuple(float(x) for x in totals / len(paths))  # type: ignore


def path_percentages(path: SamplePathResult) -> Tuple[float, float, float, float, float]:
    """(total, class 1, class 2, class 1 by level 1, class 1 by level 2) met percentages."""
    met_c1 = path.met_c1_lvl1 + path.met_c1_lvl2
    total = pct_met_demand(met_c1 + path.met_c2, path.demand_c1 + path.demand_c2)
    c1 = pct_met_demand(met_c1, path.demand_c1)
    c2 = pct_met_demand(path.met_c2, path.demand_c2)
    if path.demand_c1 == 0:
        by_lvl1, by_lvl2 = 100.0, 0.0
    else:
        by_lvl1 = 100.0 * path.met_c1_lvl1 / path.demand_c1
        by_lvl2 = 100.0 * path.met_c1_lvl2 / path.demand_c1
    return total, c1, c2, by_lvl1, by_lvl2


def _std_error(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(len(samples)))


def summarize(
    paths: Sequence[SamplePathResult], solver: str, seed: int, param: Optional[float] = None
) -> MetricsSummary:
    """Aggregate per-path percentages and action counts."""
    if not paths:
        raise InvalidInputError("at least one path is required")
    pct = np.array([path_percentages(p) for p in paths])
    means = pct.mean(axis=0)
    rewards = np.array([p.total_reward for p in paths])
    a01, a02, a12 = avg_actions(paths)
    return MetricsSummary(
        param=param,
        solver=solver,
        n_paths=len(paths),
        seed=seed,
        avg_met_pct=min(100.0, float(means[0])),
        avg_met_pct_c1=min(100.0, float(means[1])),
        avg_met_pct_c2=min(100.0, float(means[2])),
        met_c1_lvl1_pct=min(100.0, float(means[3])),
        met_c1_lvl2_pct=min(100.0, float(means[4])),
        avg_a01=a01,
        avg_a02=a02,
        avg_a12=a12,
        mean_reward=float(rewards.mean()),
        reward_std_error=_std_error(rewards),
        met_pct_std_error=_std_error(pct[:, 0]),
        a12_std_error=_std_error(np.array([p.action_totals[2] for p in paths], dtype=float)),
    )


def simulate_paths(
    scenario: Scenario,
    policy: PolicyFn,
    n_paths: int,
    seed: int,
    solver: str = "",
    param: Optional[float] = None,
    threads: Optional[int] = None,
    runner: PathRunner = run_path,
) -> Tuple[MetricsSummary, List[SamplePathResult]]:
    """Simulate `n_paths` paths and summarize them."""
    if n_paths < 1:
        raise InvalidInputError(f"n_paths must be >= 1, got {n_paths}")

    def one(k: int) -> SamplePathResult:
        return simulate_path(scenario, policy, k, seed, runner)

    with span("simulate_paths", n_paths=n_paths, seed=seed, solver=solver):
        if threads is not None and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                paths = list(pool.map(one, range(n_paths)))
        else:
            paths = [one(k) for k in range(n_paths)]
    summary = summarize(paths, solver, seed, param)
    logger.info(
        f"{solver or 'policy'}: {n_paths} paths, avg met {summary.avg_met_pct:.2f}%, "
        f"mean reward {summary.mean_reward:.4f}"
    )
    return summary, paths


PolicySource = Union[PolicyTable, ApproxValueTable, str]


def resolve_policy(
    scenario: Scenario, source: PolicySource, rl_config: Optional[RLConfig] = None
) -> Tuple[PolicyFn, PathRunner]:
    """Turn a policy table, a learned value table or "benchmark" into a policy callable."""
    if isinstance(source, str):
        if source != "benchmark":
            raise InvalidInputError(f"unknown policy rule {source!r}")
        return BenchmarkPolicy(scenario.model), run_path
    if isinstance(source, ApproxValueTable):
        rl_config = rl_config or RLConfig()
        greedy = GreedyPolicy(
            source, scenario, rl_config.greedy_mode, rl_config.tau2, rl_config.seed
        )
        return greedy, run_path
    if isinstance(source, PolicyTable):
        return source, run_flat_path if source.solver == "flat" else run_path
    raise InvalidInputError(f"cannot build a policy from {type(source).__name__}")


def solve_policy(
    scenario: Scenario,
    solver: str,
    rl_config: Optional[RLConfig] = None,
    threads: Optional[int] = None,
) -> Tuple[PolicyFn, PathRunner]:
    """Solve a scenario with one of the solvers and return its policy."""
    if solver == "bi":
        _, policy = backward_induction(scenario, threads=threads)
        return policy, run_path
    if solver == "rl":
        rl_config = rl_config or RLConfig()
        return resolve_policy(scenario, train(scenario, rl_config), rl_config)
    if solver == "benchmark":
        return resolve_policy(scenario, "benchmark")
    if solver == "flat":
        _, policy = flat_backward_induction(scenario)
        return policy, run_flat_path
    raise InvalidInputError(f"solver must be one of {SOLVERS}, got {solver!r}")


def param_range(start: float, stop: float, step: float) -> List[float]:
    """Inclusive arithmetic range, robust to float steps."""
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    if stop < start:
        raise InvalidInputError(f"range end {stop} is below its start {start}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


def sweep(
    scenario: Scenario,
    param: str,
    values: Sequence[float],
    solver: str,
    n_paths: int,
    seed: int,
    rl_config: Optional[RLConfig] = None,
    threads: Optional[int] = None,
) -> List[MetricsSummary]:
    """One metrics row per parameter value, all rows on the same demand streams."""
    if param not in SWEEP_PARAMS:
        raise InvalidInputError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")
    if param == "tau2" and solver != "rl":
        raise InvalidInputError("the tau2 sweep needs the rl solver")
    rl_config = rl_config or RLConfig()

    rows = []
    for value in values:
        variant, variant_rl = scenario, rl_config
        if param == "fleet_size":
            if value != int(value) or value < 0:
                raise InvalidInputError(f"fleet size must be a nonnegative integer, got {value}")
            variant = scenario.with_config(fleet_size=int(value), initial_state=None)
        elif param == "rho21":
            variant = scenario.with_config(rho21=float(value))
        else:
            variant_rl = rl_config.model_copy(update={"tau2": int(value)})
        logger.info(f"Sweep {param}={value} with solver {solver}")
        policy, runner = solve_policy(variant, solver, variant_rl, threads)
        summary, _ = simulate_paths(
            variant, policy, n_paths, seed, solver, float(value), threads, runner
        )
        rows.append(summary)
    return rows
