#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import logging
from datetime import datetime

import pytest
from helpers import DATA_DIR, swapdp

logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def desk_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "desk.json"
    start_time = datetime.now()
    swapdp(
        "scenario",
        "build",
        "--hospitals",
        DATA_DIR / "desk_hospitals.csv",
        "--config",
        DATA_DIR / "desk_config.json",
        "--out",
        out,
    )
    logger.info("Built {} in: {} seconds".format(out, datetime.now() - start_time))
    return out
