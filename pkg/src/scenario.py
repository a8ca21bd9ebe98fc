# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Scenario pipeline: hospital records to per-class, per-epoch demand rates.

A hospital's distance from the station decides its demand class; the population it serves
decides how many flights per day it needs. District populations are split evenly over the
district's hospitals, then the blood-need fraction and the units carried per flight turn people
into flights. The class totals spread over the day with the arrival shape give the Poisson rates.
"""

import logging
import math
from collections import Counter
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from demand import DemandSchedule
from errors import ScenarioParseError
from mdp import State
from models import HospitalRecord, ModelConfig, ScenarioConfig, hash_model

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
DAYS_PER_YEAR = 365
REQUIRED_COLUMNS = ("name", "district", "distance_km", "population")
OPTIONAL_COLUMNS = ("lat", "lon", "distance_override_km", "class_override")
# CSV header names that differ from the HospitalRecord field names
_FIELD_FOR_COLUMN = {"lat": "latitude", "lon": "longitude"}
_COLUMN_FOR_FIELD = {field: column for column, field in _FIELD_FOR_COLUMN.items()}


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two points given in degrees."""
    for lat in (lat1, lat2):
        if abs(lat) > 90:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
    for lon in (lon1, lon2):
        if abs(lon) > 180:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
    d_lat = math.radians(lat2 - lat1)
    d_lon = math.radians(lon2 - lon1)
    a = (
        math.sin(d_lat / 2.0) ** 2
        + math.cos(math.radians(lat1)) * math.cos(math.radians(lat2)) * math.sin(d_lon / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def classify(distance_km: float, bands: Sequence[float]) -> Optional[int]:
    """Return the demand class of a distance, or None (NA) beyond the last band.

    `bands` holds upper bounds: class i covers [bands[i-2], bands[i-1]), the last band includes
    its upper bound.
    """
    if distance_km < 0:
        raise ValueError(f"distance must be nonnegative, got {distance_km}")
    for demand_class, upper in enumerate(bands, start=1):
        if distance_km < upper:
            return demand_class
    if distance_km == bands[-1]:
        return len(bands)
    return None


def flights_per_day(population: float, blood_need_fraction: float, units_per_flight: int) -> int:
    """Daily flights needed to supply a population, rounded up."""
    if population < 0:
        raise ValueError(f"population must be nonnegative, got {population}")
    units_per_day = population * blood_need_fraction / DAYS_PER_YEAR
    # the guard keeps exact integers from rounding up on float noise
    return max(0, math.ceil(units_per_day / units_per_flight - 1e-9))


def _blank_to_none(value: str) -> Optional[str]:
    value = value.strip()
    return value if value else None


def load_hospitals(path: Union[str, Path]) -> List[HospitalRecord]:
    """Read and validate a hospital CSV file."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ScenarioParseError("no hospitals in range: the hospital file is empty")
    frame.columns = [str(c).strip() for c in frame.columns]
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise ScenarioParseError("missing required column", column=column)
    unknown = set(frame.columns) - set(REQUIRED_COLUMNS) - set(OPTIONAL_COLUMNS)
    if unknown:
        logger.warning(f"Ignoring unknown hospital columns: {sorted(unknown)}")

    records = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=1):
        data = {
            _FIELD_FOR_COLUMN.get(column, column): _blank_to_none(row[column])
            for column in REQUIRED_COLUMNS + OPTIONAL_COLUMNS
            if column in row
        }
        try:
            records.append(HospitalRecord.model_validate(data))
        except ValidationError as e:
            error = e.errors()[0]
            field = str(error["loc"][0]) if error["loc"] else None
            column = _COLUMN_FOR_FIELD.get(field, field) if field else None
            raise ScenarioParseError(error["msg"], row=row_number, column=column) from e
    return records


def _resolve_distance(
    record: HospitalRecord, config: ScenarioConfig, row: int
) -> Tuple[float, str]:
    if record.distance_override_km is not None:
        return record.distance_override_km, "override"
    if record.distance_km is not None:
        return record.distance_km, "table"
    if config.station_lat is None or config.station_lon is None:
        raise ScenarioParseError(
            "blank distance needs station_lat/station_lon in the scenario config",
            row=row,
            column="distance_km",
        )
    assert record.latitude is not None and record.longitude is not None
    distance = haversine_km(config.station_lat, config.station_lon, record.latitude, record.longitude)
    return distance, "haversine"


class Scenario(BaseModel):
    """A built scenario: configuration, classified hospitals and per-epoch class rates."""

    config: ScenarioConfig
    hospitals: List[HospitalRecord] = []
    class_daily_flights: Tuple[float, float]
    rates: Tuple[Tuple[float, ...], Tuple[float, ...]]

    @classmethod
    def from_rates(
        cls, config: ScenarioConfig, rates: Sequence[Sequence[float]]
    ) -> "Scenario":
        """Build a scenario directly from explicit class rates, without hospitals."""
        if len(rates) != 2 or any(len(r) != config.horizon_epochs - 1 for r in rates):
            raise ScenarioParseError(
                f"rates must be 2 rows of {config.horizon_epochs - 1} epochs", column="rates"
            )
        return cls(
            config=config,
            class_daily_flights=(math.fsum(rates[0]), math.fsum(rates[1])),
            rates=(tuple(map(float, rates[0])), tuple(map(float, rates[1]))),
        )

    @cached_property
    def schedule(self) -> DemandSchedule:
        """Demand laws of both classes over the decision epochs."""
        return DemandSchedule.from_rates(
            self.rates, eps=self.config.truncation_eps, arrival_shape=self.config.shape()
        )

    @cached_property
    def model(self) -> ModelConfig:
        """MDP parameters of this scenario."""
        return self.config.to_model()

    @property
    def start_state(self) -> State:
        """State the station starts the day in."""
        return State(*self.config.start_state())

    @cached_property
    def hash(self) -> str:
        """Content hash that artifacts use to refer to this scenario."""
        return hash_model(self)

    def with_config(self, **updates) -> "Scenario":
        """Copy with some configuration fields replaced and revalidated."""
        data = self.config.model_dump()
        data.update(updates)
        return Scenario(
            config=ScenarioConfig.model_validate(data),
            hospitals=self.hospitals,
            class_daily_flights=self.class_daily_flights,
            rates=self.rates,
        )

    def save(self, path: Union[str, Path]):
        """Write the canonical JSON form."""
        Path(path).write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        """Read a scenario written by `save`."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def rates_frame(self) -> pd.DataFrame:
        """Per-epoch rates as a table with columns t, lambda1, lambda2."""
        n = len(self.rates[0])
        return pd.DataFrame(
            {"t": range(1, n + 1), "lambda1": self.rates[0], "lambda2": self.rates[1]}
        )


def build_scenario(
    hospitals: Union[str, Path, List[HospitalRecord]], config: ScenarioConfig
) -> Scenario:
    """Classify the hospitals and derive the per-epoch class rates."""
    records = load_hospitals(hospitals) if isinstance(hospitals, (str, Path)) else hospitals
    if not records:
        raise ScenarioParseError("no hospitals in range: the hospital file has no rows")

    per_district = Counter(record.district for record in records)
    district_population: Dict[str, int] = {}
    derived = []
    totals = [0, 0]
    in_range = 0
    for row, record in enumerate(records, start=1):
        known = district_population.setdefault(record.district, record.population)
        if known != record.population:
            raise ScenarioParseError(
                f"district '{record.district}' has population {known} on an earlier row",
                row=row,
                column="population",
            )
        distance, source = _resolve_distance(record, config, row)
        if record.class_override is not None:
            demand_class = None if record.class_override == "NA" else int(record.class_override)
        else:
            demand_class = classify(distance, config.bands)
        served = record.population / per_district[record.district]
        flights = flights_per_day(served, config.blood_need_fraction, config.units_per_flight)
        if demand_class is None:
            logger.warning(f"Hospital {record.name} at {distance:.1f} km is outside every band")
        else:
            totals[demand_class - 1] += flights
            in_range += 1
        logger.debug(
            f"{record.name}: {distance:.1f} km ({source}), class {demand_class or 'NA'}, "
            f"{flights} flights/day"
        )
        derived.append(
            record.model_copy(
                update={
                    "distance_km": distance,
                    "served_population": served,
                    "flights_per_day": flights,
                    "demand_class": demand_class,
                }
            )
        )
    if in_range == 0:
        raise ScenarioParseError("no hospitals in range of the configured bands")

    shape = config.shape()
    rates = tuple(tuple(total * weight for weight in shape) for total in totals)
    logger.info(
        f"Built scenario with {in_range}/{len(records)} hospitals in range, "
        f"daily flights class 1 = {totals[0]}, class 2 = {totals[1]}"
    )
    return Scenario(
        config=config,
        hospitals=derived,
        class_daily_flights=(float(totals[0]), float(totals[1])),
        rates=rates,
    )


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read a scenario configuration JSON document."""
    return ScenarioConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
