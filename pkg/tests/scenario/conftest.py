#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
from pathlib import Path

import pytest

import tracing
from scenario import build_scenario, load_config

DATA_DIR = Path(__file__).parents[2] / "data"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(autouse=True)
def tracing_off():
    tracing.shutdown()
    yield
    tracing.shutdown()


@pytest.fixture()
def data_dir():
    yield DATA_DIR


@pytest.fixture()
def golden_dir():
    yield GOLDEN_DIR


@pytest.fixture(scope="module")
def rwanda_scenario():
    yield build_scenario(DATA_DIR / "rwanda_hospitals.csv", load_config(DATA_DIR / "rwanda_config.json"))


@pytest.fixture(scope="module")
def desk_scenario():
    yield build_scenario(DATA_DIR / "desk_hospitals.csv", load_config(DATA_DIR / "desk_config.json"))
