# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions raised by swapdp.

The CLI maps each family to its own exit code, so library code raises the most specific class
it can and never calls ``sys.exit`` itself.
"""

from typing import Optional


class SwapDPError(Exception):
    """Base class for errors raised by this project."""


class InvalidInputError(SwapDPError, ValueError):
    """Raised when a state, action, demand or argument violates the model's constraints."""


class ScenarioParseError(InvalidInputError):
    """Raised when a hospital file or scenario document cannot be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class CapacityError(SwapDPError, RuntimeError):
    """Raised when an exact solve would exceed the configured state-space guard."""


class IncompatibleArtifactError(SwapDPError):
    """Raised when an artifact does not belong to the scenario it is used with."""
