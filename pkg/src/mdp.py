# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""#Swap station MDP.

States, actions, transitions and rewards of the two-class battery swap station.

##States and actions

A state `State(s1, s2)` counts the batteries charged to level 1 and level 2; the remaining
`M - s1 - s2` batteries are empty. An action `Action(a01, a02, a12)` sends empty batteries to
level 1 or level 2 and tops level-1 batteries up to level 2. Batteries put on charge at epoch t
do not serve epoch-t demand.

```
cfg = ModelConfig(fleet_size=10, horizon=17)
outcome = next_state(State(3, 6), Action(0, 1, 2), Demand(5, 2))
outcome.intermediate   # IntermediateState(L1=0, L2=7)
outcome.next_state     # State(s1=4, s2=3)
```

##Demand service order

Class-1 requests are served by level-1 batteries and class-2 requests by level-2 batteries
first. Level-2 batteries left over after class 2 then cover the remaining class-1 requests and
come back at level 1. Unmet requests are dropped.

##Transition law

`transition_distribution` evaluates the closed-form law from the truncated demand pmf and tail
caches. The demand space splits into five cases (spare stock in both classes, class 2
exhausted, both exhausted, class-1 spillover partly absorbed, spillover exhausting level 2);
different cases can reach the same next state, so their contributions are summed per state.
"""

import logging
import math
from collections import defaultdict
from typing import Dict, List, NamedTuple

import numpy as np

from demand import EpochDemandDistribution
from errors import InvalidInputError
from models import ModelConfig

logger = logging.getLogger(__name__)


class State(NamedTuple):
    """Battery counts at charge level 1 and level 2."""

    s1: int
    s2: int


class Action(NamedTuple):
    """Recharge moves 0->1, 0->2 and 1->2."""

    a01: int
    a02: int
    a12: int


class Demand(NamedTuple):
    """Realized requests of class 1 and class 2."""

    d1: int
    d2: int


class IntermediateState(NamedTuple):
    """Battery counts after same-level service, before level-2 spillover."""

    L1: int
    L2: int


class TransitionOutcome(NamedTuple):
    """Next state plus the service accounting of one epoch."""

    next_state: State
    intermediate: IntermediateState
    met_c1_lvl1: int
    met_c1_lvl2: int
    met_c2_lvl2: int
    unmet_c1: int
    unmet_c2: int

    @property
    def spill(self) -> int:
        """Class-1 requests served by level-2 batteries."""
        return self.met_c1_lvl2


def n_states(fleet_size: int) -> int:
    """Number of states of a fleet of M batteries."""
    return (fleet_size + 1) * (fleet_size + 2) // 2


def state_index(s1, s2, fleet_size: int):
    """Triangular encoding of (s1, s2) into 0..n_states - 1; works on numpy arrays too."""
    return s1 * (fleet_size + 1) - (s1 * (s1 - 1)) // 2 + s2


def all_states(fleet_size: int) -> List[State]:
    """Every state, in `state_index` order."""
    return [
        State(s1, s2) for s1 in range(fleet_size + 1) for s2 in range(fleet_size - s1 + 1)
    ]


def validate_state(s: State, cfg: ModelConfig) -> State:
    """Reject states with negative counts or more batteries than the fleet."""
    s1, s2 = s
    if s1 < 0 or s2 < 0 or s1 + s2 > cfg.fleet_size:
        raise InvalidInputError(f"{tuple(s)} is not a state of a fleet of {cfg.fleet_size}")
    return State(int(s1), int(s2))


def _check_action(s: State, a: Action):
    s1, s2 = s
    a01, a02, a12 = a
    if min(s1, s2, a01, a02, a12) < 0:
        raise InvalidInputError(f"negative component in state {tuple(s)} or action {tuple(a)}")
    if a12 > s1:
        raise InvalidInputError(f"action {tuple(a)} recharges more than the {s1} level-1 batteries")


def validate_action(s: State, a: Action, cfg: ModelConfig) -> Action:
    """Reject actions that charge batteries the state does not have."""
    validate_state(s, cfg)
    _check_action(s, a)
    empty = cfg.fleet_size - s.s1 - s.s2
    if a[0] + a[1] > empty:
        raise InvalidInputError(f"action {tuple(a)} charges more than the {empty} empty batteries")
    return Action(*(int(x) for x in a))


def _check_demand(d: Demand):
    if d[0] < 0 or d[1] < 0:
        raise InvalidInputError(f"demand {tuple(d)} has a negative component")


def feasible_actions(s: State, cfg: ModelConfig) -> List[Action]:
    """All feasible actions of a state, in lexicographic (a01, a02, a12) order."""
    s1, s2 = validate_state(s, cfg)
    empty = cfg.fleet_size - s1 - s2
    return [
        Action(a01, a02, a12)
        for a01 in range(empty + 1)
        for a02 in range(empty - a01 + 1)
        for a12 in range(s1 + 1)
    ]


def preference_key(a: Action):
    """Tie-break key: among equally good actions the largest (a02, a12, a01) wins."""
    return (a.a02, a.a12, a.a01)


def intermediate_state(s: State, a: Action, d: Demand) -> IntermediateState:
    """Battery counts after same-level demand service."""
    _check_action(s, a)
    _check_demand(d)
    s1, s2 = s
    a01, a02, a12 = a
    d1, d2 = d
    return IntermediateState(
        L1=s1 + a01 - a12 - min(s1 - a12, d1),
        L2=s2 + a02 + a12 - min(s2, d2),
    )


def next_state(s: State, a: Action, d: Demand) -> TransitionOutcome:
    """Apply an action and a demand realization to a state."""
    L = intermediate_state(s, a, d)
    s1, s2 = s
    a12 = a[2]
    d1, d2 = d
    met_c1_lvl1 = min(s1 - a12, d1)
    met_c2_lvl2 = min(s2, d2)
    unserved_c1 = max(0, d1 - (s1 - a12))
    spare_lvl2 = max(0, s2 - d2)
    spill = min(unserved_c1, spare_lvl2)
    return TransitionOutcome(
        next_state=State(L.L1 + spill, L.L2 - spill),
        intermediate=L,
        met_c1_lvl1=met_c1_lvl1,
        met_c1_lvl2=spill,
        met_c2_lvl2=met_c2_lvl2,
        unmet_c1=d1 - met_c1_lvl1 - spill,
        unmet_c2=d2 - met_c2_lvl2,
    )


def realized_reward(s: State, a: Action, outcome: TransitionOutcome, cfg: ModelConfig) -> float:
    """Weighted met demand of one epoch, from the intermediate and next states."""
    s1, s2 = s
    a01, a02, a12 = a
    L1, L2 = outcome.intermediate
    j2 = outcome.next_state.s2
    return (
        cfg.rho11 * (s1 + a01 - a12 - L1)
        + cfg.rho21 * (L2 - j2)
        + cfg.rho22 * (s2 + a02 + a12 - L2)
    )


def terminal_reward(s: State, cfg: ModelConfig) -> float:
    """Value of the batteries left charged at the end of the horizon."""
    s1, s2 = validate_state(s, cfg)
    return cfg.rho11 * s1 + cfg.rho22 * s2


def transition_distribution(
    s: State, a: Action, dist1: EpochDemandDistribution, dist2: EpochDemandDistribution
) -> Dict[State, float]:
    """Closed-form law of the next state given a state and an action."""
    _check_action(s, a)
    s1, s2 = s
    a01, a02, a12 = a
    k1 = s1 - a12  # level-1 stock able to serve class 1
    k2 = s2  # level-2 stock able to serve class 2
    base1 = a01
    base2 = a02 + a12
    p1, q1 = dist1.pmf_or_zero, dist1.tail_or_zero
    p2, q2 = dist2.pmf_or_zero, dist2.tail_or_zero

    terms = defaultdict(list)
    # class 1 and class 2 both below their stock
    for d1 in range(k1):
        for d2 in range(k2):
            terms[State(base1 + k1 - d1, base2 + k2 - d2)].append(p1(d1) * p2(d2))
    # class 2 takes all level-2 stock, class 1 does not
    for d1 in range(k1):
        terms[State(base1 + k1 - d1, base2)].append(p1(d1) * q2(k2))
    # both classes exhaust their stock and nothing is left to spill
    terms[State(base1, base2)].append(q1(k1) * q2(k2))
    for d2 in range(k2):
        spare = k2 - d2
        L2 = base2 + spare
        # class-1 overflow fully absorbed by spare level-2 stock
        for spill in range(spare):
            terms[State(base1 + spill, L2 - spill)].append(p1(k1 + spill) * p2(d2))
        # class-1 overflow uses every spare level-2 battery
        terms[State(base1 + spare, base2)].append(q1(k1 + spare) * p2(d2))

    law = {}
    for j, contributions in terms.items():
        probability = math.fsum(contributions)
        if probability > 0.0:
            law[j] = probability
    return law


def expected_reward(
    s: State,
    a: Action,
    dist1: EpochDemandDistribution,
    dist2: EpochDemandDistribution,
    cfg: ModelConfig,
) -> float:
    """Expected weighted met demand of one epoch."""
    a = validate_action(s, a, cfg)
    # service depends on demand only through min(D, M)
    cap = cfg.fleet_size
    law1 = dist1.capped_pmf(cap)
    law2 = dist2.capped_pmf(cap)
    terms = []
    for d1 in range(cap + 1):
        if law1[d1] == 0.0:
            continue
        for d2 in range(cap + 1):
            if law2[d2] == 0.0:
                continue
            outcome = next_state(s, a, Demand(d1, d2))
            terms.append(law1[d1] * law2[d2] * realized_reward(s, a, outcome, cfg))
    return math.fsum(terms)


def transition_arrays(s1, s2, a01, a02, a12, d1, d2):
    """Vectorized `next_state` over broadcastable integer arrays.

    Returns (n1, n2, met_c1_lvl1, met_c1_lvl2, met_c2_lvl2).
    """
    k1 = s1 - a12
    met11 = np.minimum(k1, d1)
    met22 = np.minimum(s2, d2)
    spill = np.minimum(np.maximum(0, d1 - k1), np.maximum(0, s2 - d2))
    n1 = s1 + a01 - a12 - met11 + spill
    n2 = s2 + a02 + a12 - met22 - spill
    return n1, n2, met11, spill, met22


def action_array(s: State, cfg: ModelConfig) -> np.ndarray:
    """Feasible actions as an (A, 3) integer array, most preferred first."""
    actions = sorted(feasible_actions(s, cfg), key=preference_key, reverse=True)
    return np.array(actions, dtype=np.int64).reshape(-1, 3)
