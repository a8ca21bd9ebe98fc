#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import os
import sys
from pathlib import Path

import sh

ROOT = Path(__file__).parents[2]
DATA_DIR = ROOT / "data"


def swapdp(*args, ok_code=0, log_level: str = "INFO") -> sh.RunningCommand:
    """Run the command line in a fresh interpreter, the way a user would."""
    env = {**os.environ, "PYTHONPATH": str(ROOT / "src"), "SWAPDP_LOG_LEVEL": log_level}
    python = sh.Command(sys.executable)
    return python(
        "-m", "cli", *map(str, args), _env=env, _ok_code=[ok_code], _cwd=str(ROOT), _return_cmd=True
    )
