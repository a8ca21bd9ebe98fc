#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import itertools

import numpy as np
import pytest

from errors import CapacityError, InvalidInputError
from exact import (
    BenchmarkPolicy,
    backward_induction,
    benchmark_action,
    check_capacity,
    evaluate_fixed_policy,
    lookahead,
    zero_policy,
)
from mdp import (
    Action,
    State,
    all_states,
    expected_reward,
    feasible_actions,
    state_index,
    transition_distribution,
)
from models import ModelConfig


def q_value(s, a, t, scenario, v_next):
    """Expected reward plus expected next value, from the closed-form law."""
    cfg = scenario.model
    dist1 = scenario.schedule.distribution(1, t)
    dist2 = scenario.schedule.distribution(2, t)
    law = transition_distribution(s, a, dist1, dist2)
    future = sum(p * v_next[state_index(j.s1, j.s2, cfg.fleet_size)] for j, p in law.items())
    return expected_reward(s, a, dist1, dist2, cfg) + future


def best_over_all_policies(scenario):
    """V_1 of every state, maximized over every deterministic Markov policy of a 3-epoch model."""
    cfg = scenario.model
    assert cfg.horizon == 3
    states = all_states(cfg.fleet_size)
    terminal = np.array([cfg.rho11 * s.s1 + cfg.rho22 * s.s2 for s in states])
    actions = [feasible_actions(s, cfg) for s in states]
    # value at epoch 2 of every decision rule, one row per rule
    q2 = [[q_value(s, a, 2, scenario, terminal) for a in actions[i]] for i, s in enumerate(states)]
    rules = list(itertools.product(*[range(len(a)) for a in actions]))
    v2 = np.array([[q2[i][k] for i, k in enumerate(rule)] for rule in rules])
    best = []
    for s, feasible in zip(states, actions):
        dist1 = scenario.schedule.distribution(1, 1)
        dist2 = scenario.schedule.distribution(2, 1)
        candidates = []
        for a in feasible:
            law = transition_distribution(s, a, dist1, dist2)
            reward = expected_reward(s, a, dist1, dist2, cfg)
            for row in v2:
                future = sum(p * row[state_index(j.s1, j.s2, cfg.fleet_size)] for j, p in law.items())
                candidates.append(reward + future)
        best.append(max(candidates))
    return np.array(best), len(rules)


@pytest.mark.parametrize(
    "s, fleet_size, expected",
    [
        (State(3, 6), 15, Action(0, 6, 0)),
        (State(0, 15), 15, Action(0, 0, 0)),
        (State(0, 0), 15, Action(0, 15, 0)),
    ],
)
def test_benchmark_action(s, fleet_size, expected):
    assert benchmark_action(s, ModelConfig(fleet_size=fleet_size, horizon=17)) == expected


def test_benchmark_action_rejects_invalid_state():
    with pytest.raises(InvalidInputError):
        benchmark_action(State(3, 3), ModelConfig(fleet_size=5, horizon=17))


def test_single_battery_two_epochs(make_scenario):
    scenario = make_scenario(1, [[0.0], [0.0]], initial_state=(0, 0))
    values, policy = backward_induction(scenario)
    assert values.value(1, State(0, 0)) == pytest.approx(1.0)
    # charging to level 1 or level 2 ties; level 2 is preferred
    assert policy.action(1, State(0, 0)) == Action(0, 1, 0)


@pytest.mark.parametrize("fleet_size", [1, 3, 5])
def test_zero_demand_full_fleet(make_scenario, steady_rates, fleet_size):
    scenario = make_scenario(fleet_size, steady_rates(0.0, 0.0, 4), rho22=1.5)
    values, policy = backward_induction(scenario)
    full = State(0, fleet_size)
    assert values.value(1, full) == pytest.approx(1.5 * fleet_size)
    for t in range(1, 5):
        assert policy.action(t, full) == Action(0, 0, 0)
    zero = evaluate_fixed_policy(scenario, zero_policy)
    assert zero.value(1, full) == pytest.approx(1.5 * fleet_size)


def test_zero_demand_charges_everything_to_level_two(make_scenario, steady_rates):
    scenario = make_scenario(3, steady_rates(0.0, 0.0, 2))
    values, policy = backward_induction(scenario)
    assert np.allclose(values.epoch(1), 3.0)
    assert np.allclose(values.epoch(2), 3.0)
    for t in (1, 2):
        for s in all_states(3):
            assert policy.action(t, s) == Action(0, 3 - s.s1 - s.s2, s.s1)


@pytest.mark.parametrize(
    "rates",
    [
        [[0.3, 0.3], [0.3, 0.3]],
        [[1.0, 1.0], [1.0, 1.0]],
        [[3.0, 0.5], [0.5, 2.0]],
    ],
)
def test_matches_policy_enumeration(make_scenario, rates):
    scenario = make_scenario(2, rates)
    values, _ = backward_induction(scenario)
    oracle, n_rules = best_over_all_policies(scenario)
    assert n_rules == 648
    assert values.epoch(1) == pytest.approx(oracle, abs=1e-9)


def test_policy_value_reproduces_optimum(make_scenario, steady_rates):
    scenario = make_scenario(4, steady_rates(1.2, 0.8, 4))
    values, policy = backward_induction(scenario)
    evaluated = evaluate_fixed_policy(scenario, policy)
    assert np.allclose(evaluated.values, values.values, atol=1e-9)


def test_values_satisfy_bellman_equation(make_scenario):
    scenario = make_scenario(2, [[0.7, 1.9], [1.4, 0.2]])
    values, policy = backward_induction(scenario)
    for t in (1, 2):
        v_next = values.epoch(t + 1)
        for s in all_states(2):
            q = [q_value(s, a, t, scenario, v_next) for a in feasible_actions(s, scenario.model)]
            assert values.value(t, s) == pytest.approx(max(q), abs=1e-9)
            chosen = q_value(s, policy.action(t, s), t, scenario, v_next)
            assert chosen == pytest.approx(max(q), abs=1e-9)


@pytest.mark.parametrize("fleet_size", range(1, 6))
def test_dominance(make_scenario, steady_rates, fleet_size):
    scenario = make_scenario(fleet_size, steady_rates(1.0, 0.8, 4))
    optimal, _ = backward_induction(scenario)
    benchmark = evaluate_fixed_policy(scenario, BenchmarkPolicy(scenario.model))
    idle = evaluate_fixed_policy(scenario, zero_policy)
    assert np.all(optimal.values >= benchmark.values - 1e-9)
    assert np.all(benchmark.values >= idle.values - 1e-9)


@pytest.mark.parametrize("fleet_size", range(1, 6))
def test_values_grow_with_fleet_size(make_scenario, steady_rates, fleet_size):
    # the larger station can leave its extra battery empty and match the smaller one
    smaller, _ = backward_induction(make_scenario(fleet_size, steady_rates(1.5, 1.0, 4)))
    larger, _ = backward_induction(make_scenario(fleet_size + 1, steady_rates(1.5, 1.0, 4)))
    for t in range(1, 6):
        for s in all_states(fleet_size):
            assert larger.value(t, s) >= smaller.value(t, s) - 1e-9


def test_extra_level_two_battery_can_lower_the_value(make_scenario, steady_rates):
    # a spare level-2 battery must spill onto near requests at rho21 < rho11 and returns at level 1
    values, _ = backward_induction(make_scenario(5, steady_rates(1.5, 1.0, 4)))
    assert values.value(1, State(1, 4)) < values.value(1, State(1, 3)) - 1e-5
    assert values.value(1, State(1, 4)) == pytest.approx(11.135053089424193, abs=1e-9)
    assert values.value(1, State(1, 3)) == pytest.approx(11.135297360223547, abs=1e-9)


@pytest.mark.parametrize("fleet_size", range(1, 6))
def test_no_level_one_charging_when_spillover_pays_as_much(make_scenario, steady_rates, fleet_size):
    scenario = make_scenario(fleet_size, steady_rates(1.5, 1.0, 4), rho21=1.0)
    _, policy = backward_induction(scenario)
    assert not policy.actions[:, :, 0].any()


def test_capacity_guard(make_scenario, steady_rates):
    scenario = make_scenario(3, steady_rates(1.0, 1.0, 2), max_exact_fleet_size=2)
    with pytest.raises(CapacityError, match="solve rl"):
        backward_induction(scenario)
    with pytest.raises(CapacityError):
        evaluate_fixed_policy(scenario, zero_policy)
    check_capacity(scenario, max_fleet_size=3)


def test_threads_and_chunks_do_not_change_the_result(make_scenario, steady_rates):
    scenario = make_scenario(6, steady_rates(2.0, 1.5, 4))
    serial, serial_policy = backward_induction(scenario)
    threaded, threaded_policy = backward_induction(scenario, threads=4, chunk_size=17)
    assert np.allclose(serial.values, threaded.values, rtol=0, atol=1e-12)
    assert np.array_equal(serial_policy.actions, threaded_policy.actions)


def test_lookahead_agrees_with_backward_induction(make_scenario, steady_rates):
    scenario = make_scenario(3, steady_rates(1.0, 2.0, 4))
    values, policy = backward_induction(scenario)
    for s in all_states(3):
        action, value = lookahead(
            s,
            values.epoch(3),
            scenario.schedule.distribution(1, 2),
            scenario.schedule.distribution(2, 2),
            scenario.model,
        )
        assert action == policy.action(2, s)
        assert value == pytest.approx(values.value(2, s))


def test_tables_reject_unknown_entries(make_scenario, steady_rates):
    values, policy = backward_induction(make_scenario(2, steady_rates(1.0, 1.0, 2)))
    assert values.horizon == 3
    with pytest.raises(InvalidInputError):
        values.value(4, State(0, 0))
    with pytest.raises(InvalidInputError):
        policy.action(1, State(2, 2))
    with pytest.raises(InvalidInputError):
        policy(3, State(0, 0))


def test_invalid_policy_is_rejected(make_scenario, steady_rates):
    scenario = make_scenario(2, steady_rates(1.0, 1.0, 2))
    with pytest.raises(InvalidInputError):
        evaluate_fixed_policy(scenario, lambda t, s: Action(0, 3, 0))


def test_solver_emits_span(make_scenario, steady_rates, span_exporter):
    backward_induction(make_scenario(2, steady_rates(1.0, 1.0, 2)))
    (span,) = span_exporter.get_finished_spans()
    assert span.name == "backward_induction"
    assert span.attributes["fleet_size"] == 2
