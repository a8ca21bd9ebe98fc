#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import logging

import pytest
from pydantic import ValidationError

from models import (
    METRICS_COLUMNS,
    AdaptiveStepsize,
    ConstantEpsilon,
    HarmonicStepsize,
    MetricsSummary,
    ModelConfig,
    ReciprocalEpsilon,
    RLConfig,
    ScenarioConfig,
    hash_model,
)


def test_model_config_defaults():
    cfg = ModelConfig(fleet_size=15, horizon=17)
    assert (cfg.rho11, cfg.rho21, cfg.rho22) == (1.0, 0.5, 1.0)
    assert cfg.n_states == 136
    assert list(cfg.decision_epochs) == list(range(1, 17))


@pytest.mark.parametrize(
    "fields",
    [
        {"fleet_size": -1, "horizon": 17},
        {"fleet_size": 3, "horizon": 1},
        {"fleet_size": 3, "horizon": 17, "rho21": -0.5},
        {"fleet_size": 3, "horizon": 17, "num_classes": 3},
    ],
)
def test_model_config_rejects(fields):
    with pytest.raises(ValidationError):
        ModelConfig(**fields)


def test_model_config_is_frozen():
    cfg = ModelConfig(fleet_size=3, horizon=3)
    with pytest.raises(ValidationError):
        cfg.fleet_size = 4


@pytest.mark.parametrize(
    "fields",
    [
        {"epoch_minutes": 90, "horizon_epochs": 16},
        {"bands": [80.0, 40.0]},
        {"bands": [0.0, 40.0]},
        {"bands": [10.0, 20.0, 30.0]},
        {"initial_state": (3, 2)},
        {"arrival_shape": [1.0, 2.0]},
        {"unknown_field": 1},
    ],
)
def test_scenario_config_rejects(fields):
    with pytest.raises(ValidationError):
        ScenarioConfig(fleet_size=4, **fields)


def test_scenario_config_allows_horizon_of_odd_epochs():
    # 7-minute epochs do not divide the day, so the horizon is taken as given
    config = ScenarioConfig(fleet_size=2, epoch_minutes=7, horizon_epochs=5)
    assert config.to_model().horizon == 5
    assert len(config.shape()) == 4


def test_arrival_shape_is_renormalized(caplog):
    with caplog.at_level(logging.WARNING):
        config = ScenarioConfig(
            fleet_size=2, epoch_minutes=720, horizon_epochs=3, arrival_shape=[1.0, 3.0]
        )
    assert config.shape() == [0.25, 0.75]
    assert "renormalizing" in caplog.text


def test_start_state_defaults_to_full_fleet():
    assert ScenarioConfig(fleet_size=4).start_state() == (0, 4)
    assert ScenarioConfig(fleet_size=4, initial_state=(1, 2)).start_state() == (1, 2)


def test_rl_config_defaults():
    config = RLConfig()
    assert (config.tau1, config.tau2) == (200000, 30)
    assert isinstance(config.epsilon, ReciprocalEpsilon)
    assert config.stepsize == AdaptiveStepsize(floor=0.05, mcclain_target=0.1)
    assert config.trace_interval == 200


def test_rl_config_parses_tagged_rules():
    config = RLConfig.model_validate_json(
        '{"tau1": 50, "epsilon": {"kind": "constant", "value": 0.0},'
        ' "stepsize": {"kind": "harmonic", "a": 5}, "trace_every": 7}'
    )
    assert config.epsilon == ConstantEpsilon(value=0.0)
    assert config.stepsize == HarmonicStepsize(a=5.0)
    assert config.trace_interval == 7


def test_rl_config_rejects_unknown_rule():
    with pytest.raises(ValidationError):
        RLConfig.model_validate({"stepsize": {"kind": "polynomial"}})


def test_metrics_row_has_published_columns():
    summary = MetricsSummary(
        solver="bi",
        n_paths=10,
        seed=0,
        avg_met_pct=60.0,
        avg_met_pct_c1=55.0,
        avg_met_pct_c2=65.0,
        met_c1_lvl1_pct=40.0,
        met_c1_lvl2_pct=15.0,
        avg_a01=1.0,
        avg_a02=2.0,
        avg_a12=0.5,
        mean_reward=100.0,
    )
    assert list(summary.csv_row()) == METRICS_COLUMNS


def test_hash_model_ignores_field_order():
    one = ScenarioConfig.model_validate({"fleet_size": 4, "rho21": 0.7})
    two = ScenarioConfig.model_validate({"rho21": 0.7, "fleet_size": 4})
    assert hash_model(one) == hash_model(two)
    assert hash_model(one) != hash_model(ScenarioConfig(fleet_size=5, rho21=0.7))
