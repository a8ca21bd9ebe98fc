# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Single-class baseline without demand classification.

Batteries are either full or empty and every request, near or far, takes a full battery that
comes back empty. Demand is the sum of both class streams. The value and policy tables reuse the
classified formats with the full-battery count in `s1` (`s2 = 0`) and the recharge count in
`a01` (`a02 = a12 = 0`).
"""

import logging
import math
from collections import defaultdict
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from demand import EpochDemandDistribution
from errors import InvalidInputError
from exact import TIE_TOLERANCE, PolicyTable, ValueTable
from mdp import State
from scenario import Scenario
from tracing import span

logger = logging.getLogger(__name__)

# the flat model has no state-space blow-up; this only bounds memory of one epoch sweep
MAX_FLAT_FLEET_SIZE = 5000


class FlatOutcome(NamedTuple):
    """Next full-battery count and the requests served."""

    next_state: int
    served: int


def _check(s: int, a: int, fleet_size: Optional[int] = None):
    if s < 0 or a < 0:
        raise InvalidInputError(f"flat state {s} and action {a} must be nonnegative")
    if fleet_size is not None and s + a > fleet_size:
        raise InvalidInputError(f"flat action {a} charges more than the {fleet_size - s} empty batteries")


def flat_next_state(s: int, a: int, d_total: int, fleet_size: Optional[int] = None) -> FlatOutcome:
    """Serve min(s, d) requests; recharged batteries are usable next epoch."""
    _check(s, a, fleet_size)
    if d_total < 0:
        raise InvalidInputError(f"demand must be nonnegative, got {d_total}")
    served = min(s, d_total)
    return FlatOutcome(next_state=s + a - served, served=served)


def flat_transition_distribution(s: int, a: int, dist: EpochDemandDistribution) -> Dict[int, float]:
    """Law of the next full-battery count."""
    _check(s, a)
    terms = defaultdict(list)
    for d in range(s):
        terms[s + a - d].append(dist.pmf_or_zero(d))
    terms[a].append(dist.tail_or_zero(s))
    law = {}
    for j, contributions in terms.items():
        probability = math.fsum(contributions)
        if probability > 0.0:
            law[j] = probability
    return law


def flat_states(fleet_size: int) -> Tuple[State, ...]:
    """Flat states in the classified table layout."""
    return tuple(State(s, 0) for s in range(fleet_size + 1))


def flat_backward_induction(scenario: Scenario) -> Tuple[ValueTable, PolicyTable]:
    """Exact optimum of the flat model: one unit per served request and per full battery left."""
    M = scenario.model.fleet_size
    if M > MAX_FLAT_FLEET_SIZE:
        raise InvalidInputError(f"flat fleet size {M} above {MAX_FLAT_FLEET_SIZE}")
    N = scenario.model.horizon
    laws = scenario.schedule.aggregated()
    values = np.zeros((N, M + 1))
    actions = np.zeros((N - 1, M + 1, 3), dtype=np.int64)
    values[N - 1] = np.arange(M + 1)
    x = np.arange(M + 1)[None, :]

    with span("flat_backward_induction", fleet_size=M, horizon=N):
        for t in range(N - 1, 0, -1):
            law = laws[t - 1].capped_pmf(M)
            v_next = values[t]
            for s in range(M + 1):
                a = np.arange(M - s + 1)[:, None]
                served = np.minimum(s, x)
                q = (served + v_next[s + a - served]) @ law
                best = q.max()
                near = np.flatnonzero(q >= best - TIE_TOLERANCE * max(1.0, abs(best)))
                # ties go to charging more batteries
                actions[t - 1, s, 0] = near[-1]
                values[t - 1, s] = best
    logger.info(f"Flat backward induction done, V_1({M}) = {values[0, M]:.6f}")
    states = flat_states(M)
    return (
        ValueTable(values, states, scenario.hash, "flat"),
        PolicyTable(actions, states, scenario.hash, "flat"),
    )


def flat_start_state(scenario: Scenario) -> int:
    """Full batteries at the start: every charged battery of the classified start state."""
    return sum(scenario.start_state)
