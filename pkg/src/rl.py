# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Lookup-table value learning with descending epsilon-greedy exploration.

Each iteration walks one trajectory forward from the initial state. At every epoch the learner
either explores (a uniformly random feasible action and one sampled demand) with probability
epsilon_n, or exploits: it scores every feasible action on `tau2` sampled demands against the
current estimate of the next epoch's values and takes the best. The observed value is smoothed
into the table entry of the visited (t, s) with a stepsize, and the trajectory moves on with a
freshly sampled demand.

The terminal row holds the terminal reward and is never updated.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from demand import DemandSchedule
from errors import InvalidInputError
from exact import ValueTable, lookahead
from mdp import (
    Action,
    Demand,
    State,
    action_array,
    all_states,
    next_state,
    realized_reward,
    state_index,
    terminal_reward,
    transition_arrays,
)
from models import (
    AdaptiveStepsize,
    ConstantEpsilon,
    EpsilonSchedule,
    HarmonicStepsize,
    ModelConfig,
    ReciprocalEpsilon,
    RLConfig,
    Stepsize,
)
from scenario import Scenario
from tracing import span

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9


@dataclass
class StepsizeState:
    """Per-entry auxiliaries of the adaptive stepsize rule."""

    n: int = 0
    beta: float = 0.0
    delta: float = 0.0
    lam: float = 0.0
    nu: float = 1.0
    alpha: float = 1.0


@dataclass
class ApproxValueTable:
    """Learned values V_t(s) for t = 1..N, visit counts and stepsize auxiliaries."""

    values: np.ndarray
    visits: np.ndarray
    states: Tuple[State, ...]
    start_state: State
    scenario_hash: str = ""
    beta: np.ndarray = field(default=None, repr=False)  # type: ignore
    delta: np.ndarray = field(default=None, repr=False)  # type: ignore
    lam: np.ndarray = field(default=None, repr=False)  # type: ignore
    nu: np.ndarray = field(default=None, repr=False)  # type: ignore
    trace: List[Tuple[int, float]] = field(default_factory=list)
    decisions: int = 0
    explore_decisions: int = 0

    def __post_init__(self):
        for name in ("beta", "delta", "lam"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.values))
        if self.nu is None:
            self.nu = np.ones_like(self.values)

    @classmethod
    def initial(cls, cfg: ModelConfig, start_state: State, scenario_hash: str = "") -> "ApproxValueTable":
        """Zero values before the horizon, terminal rewards at epoch N."""
        states = tuple(all_states(cfg.fleet_size))
        values = np.zeros((cfg.horizon, len(states)))
        values[-1] = [terminal_reward(s, cfg) for s in states]
        return cls(
            values=values,
            visits=np.zeros((cfg.horizon, len(states)), dtype=np.int64),
            states=states,
            start_state=State(*start_state),
            scenario_hash=scenario_hash,
        )

    @property
    def fleet_size(self) -> int:
        """Fleet size M, recovered from the number of states."""
        return self.states[-1].s1

    @property
    def horizon(self) -> int:
        """Number of epochs N."""
        return self.values.shape[0]

    def column(self, s: State) -> int:
        """Column of a state."""
        s1, s2 = s
        M = self.fleet_size
        if s1 < 0 or s2 < 0 or s1 + s2 > M:
            raise InvalidInputError(f"{tuple(s)} is not a state of a fleet of {M}")
        return int(state_index(s1, s2, M))

    def value(self, t: int, s: State) -> float:
        """Current estimate of V_t(s)."""
        return float(self.values[t - 1, self.column(s)])

    def epoch(self, t: int) -> np.ndarray:
        """All estimates of epoch t, in state order."""
        return self.values[t - 1]

    def stepsize_state(self, t: int, s: State) -> StepsizeState:
        """Stepsize auxiliaries of one entry."""
        i = self.column(s)
        return StepsizeState(
            n=int(self.visits[t - 1, i]),
            beta=float(self.beta[t - 1, i]),
            delta=float(self.delta[t - 1, i]),
            lam=float(self.lam[t - 1, i]),
            nu=float(self.nu[t - 1, i]),
        )

    def as_value_table(self) -> ValueTable:
        """The estimates in exact-solver form."""
        return ValueTable(self.values.copy(), self.states, self.scenario_hash, "rl")


def epsilon_at(n: int, schedule: EpsilonSchedule) -> float:
    """Exploration probability at iteration n (1-based)."""
    if n < 1:
        raise InvalidInputError(f"iteration must be >= 1, got {n}")
    if isinstance(schedule, ReciprocalEpsilon):
        return 1.0 / n
    if isinstance(schedule, ConstantEpsilon):
        return schedule.value
    raise InvalidInputError(f"unknown epsilon schedule {schedule!r}")


def harmonic_stepsize(n: int, a: float) -> float:
    """a / (a + n - 1) for the n-th observation of an entry."""
    if n < 1:
        raise InvalidInputError(f"observation count must be >= 1, got {n}")
    return a / (a + n - 1)


def stepsize_next(state: StepsizeState, error: float, rule: Stepsize) -> StepsizeState:
    """Advance an entry's stepsize state by one observation.

    `error` is the observation minus the current estimate. The returned state's `alpha` is the
    stepsize to smooth this observation with.
    """
    n = state.n + 1
    if isinstance(rule, HarmonicStepsize):
        return StepsizeState(n=n, alpha=harmonic_stepsize(n, rule.a))
    if not isinstance(rule, AdaptiveStepsize):
        raise InvalidInputError(f"unknown stepsize rule {rule!r}")
    if n == 1:
        return StepsizeState(n=1, beta=error, delta=error * error, lam=1.0, nu=1.0, alpha=1.0)

    nu = state.nu / (1.0 + state.nu - rule.mcclain_target)
    beta = (1.0 - nu) * state.beta + nu * error
    delta = (1.0 - nu) * state.delta + nu * error * error
    if delta <= 0.0:
        alpha = rule.floor
    else:
        sigma2 = max(0.0, delta - beta * beta) / (1.0 + state.lam)
        alpha = min(1.0, max(rule.floor, 1.0 - sigma2 / delta))
    lam = (1.0 - alpha) ** 2 * state.lam + alpha * alpha
    return StepsizeState(n=n, beta=beta, delta=delta, lam=lam, nu=nu, alpha=alpha)


def smooth(previous: float, observed: float, alpha: float) -> float:
    """(1 - alpha) * previous + alpha * observed."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"stepsize must be in [0, 1], got {alpha}")
    return (1.0 - alpha) * previous + alpha * observed


def smooth_update(table: ApproxValueTable, t: int, s: State, observed: float, alpha: float) -> float:
    """Smooth an observation into V_t(s) and return the new estimate."""
    if t >= table.horizon:
        raise InvalidInputError(f"epoch {t} is terminal and never updated")
    i = table.column(s)
    z = smooth(float(table.values[t - 1, i]), observed, alpha)
    table.values[t - 1, i] = z
    return z


def select_action(
    table: ApproxValueTable,
    s: State,
    t: int,
    schedule: DemandSchedule,
    tau2: int,
    rng: np.random.Generator,
    cfg: ModelConfig,
    actions: Optional[np.ndarray] = None,
) -> Tuple[Action, float]:
    """Score every feasible action on `tau2` sampled demands and return the best with its score.

    All actions see the same demand samples. Ties go to the preferred action order.
    """
    if tau2 < 1:
        raise InvalidInputError(f"tau2 must be >= 1, got {tau2}")
    if actions is None:
        actions = action_array(s, cfg)
    d1 = schedule.distribution(1, t).sample(rng, tau2)[None, :]
    d2 = schedule.distribution(2, t).sample(rng, tau2)[None, :]
    a = actions[:, :, None]
    n1, n2, met11, spill, met22 = transition_arrays(
        s[0], s[1], a[:, 0], a[:, 1], a[:, 2], d1, d2
    )
    v_next = table.epoch(t + 1)
    observed = (
        cfg.rho11 * met11
        + cfg.rho21 * spill
        + cfg.rho22 * met22
        + v_next[state_index(n1, n2, cfg.fleet_size)]
    )
    scores = observed.mean(axis=1)
    best = scores.max()
    k = int(np.flatnonzero(scores >= best - TIE_TOLERANCE * max(1.0, abs(best)))[0])
    return Action(*(int(x) for x in actions[k])), float(scores[k])


def _sample_demand(schedule: DemandSchedule, t: int, rng: np.random.Generator) -> Demand:
    return Demand(
        int(schedule.distribution(1, t).sample(rng)), int(schedule.distribution(2, t).sample(rng))
    )


def train(scenario: Scenario, rl_config: RLConfig) -> ApproxValueTable:
    """Run the learner for `tau1` iterations; deterministic for a fixed seed."""
    cfg = scenario.model
    schedule = scenario.schedule
    rng = np.random.default_rng(rl_config.seed)
    start = scenario.start_state
    table = ApproxValueTable.initial(cfg, start, scenario.hash)
    actions_of = [action_array(s, cfg) for s in table.states]
    start_column = table.column(start)
    interval = rl_config.trace_interval
    N = cfg.horizon

    logger.info(
        f"Training for {rl_config.tau1} iterations, tau2={rl_config.tau2}, "
        f"stepsize={rl_config.stepsize.kind}, seed={rl_config.seed}"
    )
    with span("train", fleet_size=cfg.fleet_size, tau1=rl_config.tau1, tau2=rl_config.tau2):
        for n in range(1, rl_config.tau1 + 1):
            epsilon = epsilon_at(n, rl_config.epsilon)
            if rl_config.initial_state_rule == "uniform_random":
                s = table.states[int(rng.integers(len(table.states)))]
            else:
                s = start
            for t in range(1, N):
                i = table.column(s)
                table.decisions += 1
                if rng.random() < epsilon:
                    table.explore_decisions += 1
                    feasible = actions_of[i]
                    a = Action(*(int(x) for x in feasible[int(rng.integers(len(feasible)))]))
                    outcome = next_state(s, a, _sample_demand(schedule, t, rng))
                    observed = realized_reward(s, a, outcome, cfg) + table.values[
                        t, table.column(outcome.next_state)
                    ]
                else:
                    a, observed = select_action(
                        table, s, t, schedule, rl_config.tau2, rng, cfg, actions_of[i]
                    )
                    outcome = next_state(s, a, _sample_demand(schedule, t, rng))

                error = observed - table.values[t - 1, i]
                step = stepsize_next(table.stepsize_state(t, s), error, rl_config.stepsize)
                table.visits[t - 1, i] = step.n
                table.beta[t - 1, i] = step.beta
                table.delta[t - 1, i] = step.delta
                table.lam[t - 1, i] = step.lam
                table.nu[t - 1, i] = step.nu
                smooth_update(table, t, s, observed, step.alpha)
                s = outcome.next_state

            if n % interval == 0 or n == rl_config.tau1:
                value = float(table.values[0, start_column])
                table.trace.append((n, value))
                logger.debug(f"iteration {n}: V_1{tuple(start)} = {value:.6f}")

    logger.info(
        f"Training done, V_1{tuple(start)} = {table.values[0, start_column]:.6f}, "
        f"explored {table.explore_decisions}/{table.decisions} decisions"
    )
    return table


class GreedyPolicy:
    """Greedy policy of a learned table, with per-(t, s) caching.

    `exact` mode looks one step ahead with the exact demand laws; `sampled` mode scores actions
    on `tau2` demand samples drawn from a generator seeded by (seed, t, s), so the chosen action
    does not depend on the order states are queried in.
    """

    def __init__(
        self,
        table: ApproxValueTable,
        scenario: Scenario,
        mode: str = "auto",
        tau2: int = 30,
        seed: int = 0,
    ):
        if mode not in ("auto", "exact", "sampled"):
            raise InvalidInputError(f"unknown greedy mode {mode!r}")
        if mode == "auto":
            exact_ok = scenario.model.fleet_size <= scenario.config.max_exact_fleet_size
            mode = "exact" if exact_ok else "sampled"
        self.mode = mode
        self.table = table
        self.scenario = scenario
        self.tau2 = tau2
        self.seed = seed
        self._cache: Dict[Tuple[int, State], Action] = {}

    def __call__(self, t: int, s: State) -> Action:
        """Greedy action at epoch t in state s."""
        key = (t, State(*s))
        if key not in self._cache:
            self._cache[key] = self._decide(t, key[1])
        return self._cache[key]

    def _decide(self, t: int, s: State) -> Action:
        cfg = self.scenario.model
        schedule = self.scenario.schedule
        if self.mode == "exact":
            action, _ = lookahead(
                s,
                self.table.epoch(t + 1),
                schedule.distribution(1, t),
                schedule.distribution(2, t),
                cfg,
            )
            return action
        rng = np.random.default_rng([self.seed, t, s.s1, s.s2])
        action, _ = select_action(self.table, s, t, schedule, self.tau2, rng, cfg)
        return action
