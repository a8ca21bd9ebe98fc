#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

from typing import Sequence

import pytest
from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter

import tracing
from models import ScenarioConfig
from scenario import Scenario

MINUTES_PER_DAY = 1440


def scenario_from_rates(fleet_size: int, rates: Sequence[Sequence[float]], **config) -> Scenario:
    """Scenario with explicit class rates; the epoch length follows the number of rates."""
    n_epochs = len(rates[0])
    assert MINUTES_PER_DAY % n_epochs == 0, "pick a number of epochs that divides a day"
    config.setdefault("epoch_minutes", MINUTES_PER_DAY // n_epochs)
    config.setdefault("horizon_epochs", n_epochs + 1)
    return Scenario.from_rates(ScenarioConfig(fleet_size=fleet_size, **config), rates)


def constant_rates(lam1: float, lam2: float, n_epochs: int):
    return [[lam1] * n_epochs, [lam2] * n_epochs]


@pytest.fixture()
def make_scenario():
    return scenario_from_rates


@pytest.fixture(autouse=True)
def tracing_off():
    """Every test starts and ends without a tracer installed."""
    tracing.shutdown()
    yield
    tracing.shutdown()


@pytest.fixture()
def span_exporter():
    exporter = InMemorySpanExporter()
    tracing.setup(exporter=exporter)
    yield exporter
    tracing.shutdown()


@pytest.fixture()
def steady_rates():
    return constant_rates
