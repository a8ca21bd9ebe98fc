# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exact backward induction and exact evaluation of fixed policies.

The Bellman backup is vectorized over (state, action) pairs. Service depends on demand only
through min(D, M), so each class's truncated law is folded onto 0..M and the expectation is
one (M+1) x (M+1) contraction per pair. Pairs are processed in chunks that may be spread over
a thread pool; results are concatenated in pair order, so the output does not depend on the
number of threads.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from demand import EpochDemandDistribution
from errors import CapacityError, InvalidInputError
from mdp import (
    Action,
    State,
    action_array,
    all_states,
    state_index,
    terminal_reward,
    transition_arrays,
    validate_action,
)
from models import ModelConfig
from scenario import Scenario
from tracing import span

logger = logging.getLogger(__name__)

PolicyFn = Callable[[int, State], Action]

# pairs per backup chunk, sized so one chunk's (pairs, M+1, M+1) arrays stay small
DEFAULT_CHUNK_SIZE = 2048
TIE_TOLERANCE = 1e-9


@dataclass
class ValueTable:
    """Values V_t(s) for t = 1..N; row t - 1 holds epoch t."""

    values: np.ndarray
    states: Tuple[State, ...]
    scenario_hash: str = ""
    solver: str = ""
    _index: Dict[State, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index = {State(*s): i for i, s in enumerate(self.states)}

    @property
    def horizon(self) -> int:
        """Number of epochs N."""
        return self.values.shape[0]

    def column(self, s: State) -> int:
        """Column of a state."""
        try:
            return self._index[State(*s)]
        except KeyError:
            raise InvalidInputError(f"{tuple(s)} is not a state of this table")

    def value(self, t: int, s: State) -> float:
        """V_t(s)."""
        if not 1 <= t <= self.horizon:
            raise InvalidInputError(f"epoch {t} outside 1..{self.horizon}")
        return float(self.values[t - 1, self.column(s)])

    def epoch(self, t: int) -> np.ndarray:
        """All values of epoch t, in state order."""
        return self.values[t - 1]


@dataclass
class PolicyTable:
    """Decision rules d_t(s) for t = 1..N-1; `actions[t - 1, i]` is (a01, a02, a12)."""

    actions: np.ndarray
    states: Tuple[State, ...]
    scenario_hash: str = ""
    solver: str = ""
    _index: Dict[State, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index = {State(*s): i for i, s in enumerate(self.states)}

    def action(self, t: int, s: State) -> Action:
        """Action prescribed at epoch t in state s."""
        if not 1 <= t <= self.actions.shape[0]:
            raise InvalidInputError(f"epoch {t} outside 1..{self.actions.shape[0]}")
        try:
            column = self._index[State(*s)]
        except KeyError:
            raise InvalidInputError(f"{tuple(s)} is not a state of this policy")
        return Action(*(int(x) for x in self.actions[t - 1, column]))

    def __call__(self, t: int, s: State) -> Action:
        """Policies are callables of (t, s)."""
        return self.action(t, s)


def benchmark_action(s: State, cfg: ModelConfig) -> Action:
    """Charge every empty battery straight to level 2."""
    s1, s2 = s
    if s1 < 0 or s2 < 0 or s1 + s2 > cfg.fleet_size:
        raise InvalidInputError(f"{tuple(s)} is not a state of a fleet of {cfg.fleet_size}")
    return Action(0, cfg.fleet_size - s1 - s2, 0)


class BenchmarkPolicy:
    """The benchmark rule as a policy callable."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg

    def __call__(self, t: int, s: State) -> Action:
        """Same action at every epoch."""
        return benchmark_action(s, self.cfg)


def zero_policy(t: int, s: State) -> Action:
    """Never recharge anything."""
    return Action(0, 0, 0)


@dataclass(frozen=True)
class _Pairs:
    """Flattened (state, action) pairs, grouped by state, preferred action first."""

    s1: np.ndarray
    s2: np.ndarray
    a: np.ndarray
    owner: np.ndarray
    starts: np.ndarray


def _all_pairs(cfg: ModelConfig) -> _Pairs:
    states = all_states(cfg.fleet_size)
    blocks = [action_array(s, cfg) for s in states]
    counts = np.array([len(b) for b in blocks])
    owner = np.repeat(np.arange(len(states)), counts)
    s = np.array(states, dtype=np.int64)
    return _Pairs(
        s1=s[owner, 0],
        s2=s[owner, 1],
        a=np.concatenate(blocks),
        owner=owner,
        starts=np.concatenate([[0], np.cumsum(counts)[:-1]]),
    )


def _policy_pairs(cfg: ModelConfig, actions: np.ndarray) -> _Pairs:
    states = np.array(all_states(cfg.fleet_size), dtype=np.int64)
    n = len(states)
    return _Pairs(
        s1=states[:, 0],
        s2=states[:, 1],
        a=actions,
        owner=np.arange(n),
        starts=np.arange(n),
    )


def _q_values(
    pairs: _Pairs,
    v_next: np.ndarray,
    law1: np.ndarray,
    law2: np.ndarray,
    cfg: ModelConfig,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Expected reward plus expected next value of every pair."""
    M = cfg.fleet_size
    d1 = np.arange(M + 1)[None, :, None]
    d2 = np.arange(M + 1)[None, None, :]

    def backup(bounds: Tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        s1 = pairs.s1[lo:hi, None, None]
        s2 = pairs.s2[lo:hi, None, None]
        a = pairs.a[lo:hi]
        n1, n2, met11, spill, met22 = transition_arrays(
            s1, s2, a[:, 0, None, None], a[:, 1, None, None], a[:, 2, None, None], d1, d2
        )
        total = (
            cfg.rho11 * met11
            + cfg.rho21 * spill
            + cfg.rho22 * met22
            + v_next[state_index(n1, n2, M)]
        )
        return np.einsum("pij,i,j->p", total, law1, law2)

    n_pairs = len(pairs.owner)
    chunks = [(lo, min(lo + chunk_size, n_pairs)) for lo in range(0, n_pairs, chunk_size)]
    if threads is not None and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(backup, chunks))
    else:
        parts = [backup(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


def _best_per_state(q: np.ndarray, pairs: _Pairs) -> Tuple[np.ndarray, np.ndarray]:
    """Segment max and the first (most preferred) pair within tolerance of it."""
    best = np.maximum.reduceat(q, pairs.starts)
    tolerance = TIE_TOLERANCE * np.maximum(1.0, np.abs(best))
    near = np.flatnonzero(q >= best[pairs.owner] - tolerance[pairs.owner])
    _, first = np.unique(pairs.owner[near], return_index=True)
    return best, near[first]


def _laws(dist1: EpochDemandDistribution, dist2: EpochDemandDistribution, cap: int):
    return dist1.capped_pmf(cap), dist2.capped_pmf(cap)


def check_capacity(scenario: Scenario, max_fleet_size: Optional[int] = None):
    """Refuse exact solves above the configured fleet size."""
    limit = scenario.config.max_exact_fleet_size if max_fleet_size is None else max_fleet_size
    M = scenario.model.fleet_size
    if M > limit:
        raise CapacityError(
            f"fleet size {M} exceeds the exact-solver limit of {limit} "
            f"({math.comb(M + 5, 5)} state-action pairs); use `solve rl` instead"
        )


def _terminal_row(cfg: ModelConfig, states: Sequence[State]) -> np.ndarray:
    return np.array([terminal_reward(s, cfg) for s in states])


def backward_induction(
    scenario: Scenario,
    threads: Optional[int] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    max_fleet_size: Optional[int] = None,
) -> Tuple[ValueTable, PolicyTable]:
    """Solve the Bellman equations exactly, sweeping from epoch N - 1 down to 1."""
    check_capacity(scenario, max_fleet_size)
    cfg = scenario.model
    schedule = scenario.schedule
    states = tuple(all_states(cfg.fleet_size))
    N = cfg.horizon
    values = np.zeros((N, len(states)))
    actions = np.zeros((N - 1, len(states), 3), dtype=np.int64)
    values[N - 1] = _terminal_row(cfg, states)

    with span("backward_induction", fleet_size=cfg.fleet_size, horizon=N):
        pairs = _all_pairs(cfg)
        logger.info(
            f"Backward induction over {len(states)} states and {len(pairs.owner)} "
            f"state-action pairs, {N - 1} epochs"
        )
        for t in range(N - 1, 0, -1):
            law1, law2 = _laws(schedule.distribution(1, t), schedule.distribution(2, t), cfg.fleet_size)
            q = _q_values(pairs, values[t], law1, law2, cfg, chunk_size, threads)
            best, chosen = _best_per_state(q, pairs)
            values[t - 1] = best
            actions[t - 1] = pairs.a[chosen]
            logger.debug(f"epoch {t}: max value {best.max():.6f}")
    start = scenario.start_state
    v1 = values[0, state_index(start.s1, start.s2, cfg.fleet_size)]
    logger.info(f"Backward induction done, V_1{tuple(start)} = {v1:.6f}")
    return (
        ValueTable(values, states, scenario.hash, "bi"),
        PolicyTable(actions, states, scenario.hash, "bi"),
    )


def evaluate_fixed_policy(
    scenario: Scenario,
    policy_fn: PolicyFn,
    solver: str = "fixed",
    threads: Optional[int] = None,
    max_fleet_size: Optional[int] = None,
) -> ValueTable:
    """Expected total reward of a policy from every (t, s)."""
    check_capacity(scenario, max_fleet_size)
    cfg = scenario.model
    schedule = scenario.schedule
    states = tuple(all_states(cfg.fleet_size))
    N = cfg.horizon
    values = np.zeros((N, len(states)))
    values[N - 1] = _terminal_row(cfg, states)

    with span("evaluate_fixed_policy", fleet_size=cfg.fleet_size, solver=solver):
        for t in range(N - 1, 0, -1):
            chosen = np.array(
                [validate_action(s, policy_fn(t, s), cfg) for s in states], dtype=np.int64
            ).reshape(-1, 3)
            pairs = _policy_pairs(cfg, chosen)
            law1, law2 = _laws(schedule.distribution(1, t), schedule.distribution(2, t), cfg.fleet_size)
            values[t - 1] = _q_values(pairs, values[t], law1, law2, cfg, threads=threads)
    return ValueTable(values, states, scenario.hash, solver)


def lookahead(
    s: State,
    v_next: np.ndarray,
    dist1: EpochDemandDistribution,
    dist2: EpochDemandDistribution,
    cfg: ModelConfig,
) -> Tuple[Action, float]:
    """Best action of one state against a next-epoch value vector in state-index order."""
    actions = action_array(s, cfg)
    n = len(actions)
    pairs = _Pairs(
        s1=np.full(n, s[0]),
        s2=np.full(n, s[1]),
        a=actions,
        owner=np.zeros(n, dtype=np.int64),
        starts=np.zeros(1, dtype=np.int64),
    )
    law1, law2 = _laws(dist1, dist2, cfg.fleet_size)
    q = _q_values(pairs, np.asarray(v_next, dtype=float), law1, law2, cfg)
    best, chosen = _best_per_state(q, pairs)
    return Action(*(int(x) for x in actions[chosen[0]])), float(best[0])


def default_threads() -> int:
    """Worker threads when none are configured."""
    return os.cpu_count() or 1
