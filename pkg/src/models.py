#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
"""This module defines Pydantic schemas for the configuration documents and reports used by swapdp."""

import hashlib
import json
import logging
import math
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from demand import default_arrival_shape

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 24 * 60


class ModelConfig(BaseModel):
    """ModelConfig holds the parameters of the two-class swap station MDP."""

    model_config = ConfigDict(frozen=True)

    fleet_size: int = Field(ge=0)
    horizon: int = Field(ge=2)
    rho11: float = Field(default=1.0, ge=0)
    rho21: float = Field(default=0.5, ge=0)
    rho22: float = Field(default=1.0, ge=0)
    num_classes: int = 2

    @field_validator("num_classes")
    @classmethod
    def validate_num_classes(cls, value: int) -> int:
        """Only the two-class transition law is implemented."""
        if value != 2:
            raise ValueError(f"num_classes must be 2, got {value}")
        return value

    @property
    def n_states(self) -> int:
        """Number of states (s1, s2) with s1 + s2 <= M."""
        return (self.fleet_size + 1) * (self.fleet_size + 2) // 2

    @property
    def decision_epochs(self) -> range:
        """Decision epochs t = 1..N-1."""
        return range(1, self.horizon)


class ReciprocalEpsilon(BaseModel):
    """Exploration rate 1/n at iteration n."""

    kind: Literal["reciprocal"] = "reciprocal"


class ConstantEpsilon(BaseModel):
    """Fixed exploration rate, mostly useful to switch exploration off."""

    kind: Literal["constant"] = "constant"
    value: float = Field(ge=0, le=1)


class HarmonicStepsize(BaseModel):
    """Stepsize a / (a + n - 1) where n counts visits of the updated entry."""

    kind: Literal["harmonic"] = "harmonic"
    a: float = Field(default=20.0, gt=0)


class AdaptiveStepsize(BaseModel):
    """Bias-adjusted Kalman filter stepsize with a McClain-smoothed tracking rate."""

    kind: Literal["adaptive"] = "adaptive"
    floor: float = Field(default=0.05, ge=0, le=1)
    mcclain_target: float = Field(default=0.1, gt=0, le=1)


EpsilonSchedule = Union[ReciprocalEpsilon, ConstantEpsilon]
Stepsize = Union[HarmonicStepsize, AdaptiveStepsize]


class RLConfig(BaseModel):
    """RLConfig defines the parameters of the descending epsilon-greedy learner."""

    tau1: int = Field(default=200000, ge=1)
    tau2: int = Field(default=30, ge=1)
    epsilon: EpsilonSchedule = Field(default_factory=ReciprocalEpsilon, discriminator="kind")
    stepsize: Stepsize = Field(default_factory=AdaptiveStepsize, discriminator="kind")
    seed: int = 0
    initial_state_rule: Literal["fixed", "uniform_random"] = "fixed"
    trace_every: Optional[int] = Field(default=None, ge=1)
    greedy_mode: Literal["auto", "exact", "sampled"] = "auto"

    @property
    def trace_interval(self) -> int:
        """Iterations between two convergence trace points."""
        return self.trace_every or max(1, self.tau1 // 1000)


class ScenarioConfig(BaseModel):
    """ScenarioConfig is the JSON document that configures a scenario build."""

    model_config = ConfigDict(extra="forbid", ser_json_inf_nan="constants")

    fleet_size: int = Field(ge=0)
    horizon_epochs: int = Field(default=17, ge=2)
    epoch_minutes: int = Field(default=90, gt=0)
    rho11: float = Field(default=1.0, ge=0)
    rho21: float = Field(default=0.5, ge=0)
    rho22: float = Field(default=1.0, ge=0)
    bands: List[float] = Field(default_factory=lambda: [40.0, 80.0], min_length=1)
    blood_need_fraction: float = Field(default=0.02, gt=0, le=1)
    units_per_flight: int = Field(default=2, ge=1)
    arrival_shape: Optional[List[float]] = None
    truncation_eps: float = Field(default=1e-9, gt=0, lt=1)
    initial_state: Optional[Tuple[int, int]] = None
    station_lat: Optional[float] = Field(default=None, ge=-90, le=90)
    station_lon: Optional[float] = Field(default=None, ge=-180, le=180)
    max_exact_fleet_size: int = Field(default=24, ge=0)

    @field_validator("bands")
    @classmethod
    def validate_bands(cls, bands: List[float]) -> List[float]:
        """Bands are upper bounds and must be positive and strictly increasing."""
        if len(bands) > 2:
            raise ValueError(f"at most one band per demand class (2), got {len(bands)}")
        if bands[0] <= 0:
            raise ValueError("the first band upper bound must be positive")
        if any(upper <= lower for lower, upper in zip(bands, bands[1:])):
            raise ValueError(f"bands must be strictly increasing, got {bands}")
        return bands

    @model_validator(mode="after")
    def validate_horizon_and_shape(self):
        """Tie the horizon to the epoch length and normalize the arrival shape."""
        if MINUTES_PER_DAY % self.epoch_minutes == 0:
            expected = MINUTES_PER_DAY // self.epoch_minutes + 1
            if self.horizon_epochs != expected:
                raise ValueError(
                    f"horizon_epochs must be {expected} for {self.epoch_minutes}-minute epochs, "
                    f"got {self.horizon_epochs}"
                )
        n_epochs = self.horizon_epochs - 1
        if self.arrival_shape is not None:
            if len(self.arrival_shape) != n_epochs:
                raise ValueError(
                    f"arrival_shape must have {n_epochs} entries, got {len(self.arrival_shape)}"
                )
            if any(w < 0 or not math.isfinite(w) for w in self.arrival_shape):
                raise ValueError("arrival_shape weights must be finite and nonnegative")
            total = math.fsum(self.arrival_shape)
            if total <= 0:
                raise ValueError("arrival_shape must have a positive sum")
            if abs(total - 1.0) > 1e-9:
                logger.warning(f"arrival_shape sums to {total}; renormalizing to 1")
                self.arrival_shape = [w / total for w in self.arrival_shape]
        if self.initial_state is not None:
            s1, s2 = self.initial_state
            if s1 < 0 or s2 < 0 or s1 + s2 > self.fleet_size:
                raise ValueError(
                    f"initial_state {self.initial_state} is not a state of a fleet of {self.fleet_size}"
                )
        return self

    def shape(self) -> List[float]:
        """Return the arrival shape, falling back to the default curve."""
        if self.arrival_shape is not None:
            return list(self.arrival_shape)
        return list(default_arrival_shape(self.horizon_epochs - 1, self.epoch_minutes))

    def start_state(self) -> Tuple[int, int]:
        """Return the configured initial state, all batteries fully charged by default."""
        return self.initial_state if self.initial_state is not None else (0, self.fleet_size)

    def to_model(self) -> ModelConfig:
        """Build the MDP parameters for this scenario."""
        return ModelConfig(
            fleet_size=self.fleet_size,
            horizon=self.horizon_epochs,
            rho11=self.rho11,
            rho21=self.rho21,
            rho22=self.rho22,
        )


class HospitalRecord(BaseModel):
    """HospitalRecord is one row of the hospital file plus the demand derived from it."""

    name: str = Field(min_length=1)
    district: str = Field(min_length=1)
    distance_km: Optional[float] = Field(default=None, ge=0)
    population: int = Field(ge=0)
    latitude: Optional[float] = Field(default=None, ge=-90, le=90)
    longitude: Optional[float] = Field(default=None, ge=-180, le=180)
    distance_override_km: Optional[float] = Field(default=None, ge=0)
    class_override: Optional[Literal["1", "2", "NA"]] = None
    # Derived during the scenario build.
    served_population: Optional[float] = None
    flights_per_day: Optional[int] = None
    demand_class: Optional[int] = None

    @model_validator(mode="after")
    def validate_distance_source(self):
        """A distance must be given or computable from coordinates."""
        has_coordinates = self.latitude is not None and self.longitude is not None
        if self.distance_km is None and self.distance_override_km is None and not has_coordinates:
            raise ValueError("one of distance_km, distance_override_km or lat/lon is required")
        return self


class MetricsSummary(BaseModel):
    """MetricsSummary aggregates the met-demand and action metrics over sample paths."""

    param: Optional[float] = None
    solver: str
    n_paths: int = Field(ge=1)
    seed: int
    avg_met_pct: float = Field(ge=0, le=100)
    avg_met_pct_c1: float = Field(ge=0, le=100)
    avg_met_pct_c2: float = Field(ge=0, le=100)
    met_c1_lvl1_pct: float = Field(ge=0, le=100)
    met_c1_lvl2_pct: float = Field(ge=0, le=100)
    avg_a01: float = Field(ge=0)
    avg_a02: float = Field(ge=0)
    avg_a12: float = Field(ge=0)
    mean_reward: float
    reward_std_error: float = Field(default=0.0, ge=0)
    met_pct_std_error: float = Field(default=0.0, ge=0)
    a12_std_error: float = Field(default=0.0, ge=0)

    def csv_row(self) -> Dict[str, Any]:
        """Columns of the metrics CSV, in order."""
        return self.model_dump(include=set(METRICS_COLUMNS))


METRICS_COLUMNS = [
    "param",
    "solver",
    "n_paths",
    "seed",
    "avg_met_pct",
    "avg_met_pct_c1",
    "avg_met_pct_c2",
    "met_c1_lvl1_pct",
    "met_c1_lvl2_pct",
    "avg_a01",
    "avg_a02",
    "avg_a12",
    "mean_reward",
]


class RunManifest(BaseModel):
    """RunManifest records what a CLI command did, with enough detail to rerun it."""

    command: str
    arguments: Dict[str, Any]
    config: Dict[str, Any] = Field(default_factory=dict)
    scenario_hash: Optional[str] = None
    solver: Optional[str] = None
    seeds: Dict[str, int] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)
    results: Dict[str, float] = Field(default_factory=dict)
    peak_memory_mb: Optional[float] = None


def hash_model(model: BaseModel) -> str:
    """Hash a pydantic BaseModel object.

    The hash covers the JSON dump of the model with sorted keys, so two models that dump to the
    same data hash the same regardless of field order. Items excluded from the dump do not affect
    the output.
    """
    data = json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(data.encode()).hexdigest()
