#!/usr/bin/env python3

# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import logging
import math

import pytest

from errors import ScenarioParseError
from models import HospitalRecord, ScenarioConfig
from scenario import (
    Scenario,
    build_scenario,
    classify,
    flights_per_day,
    haversine_km,
    load_config,
    load_hospitals,
)

HEADER = "name,district,distance_km,population,lat,lon,distance_override_km,class_override\n"


@pytest.fixture()
def hospital_file(tmp_path):
    def write(*rows: str, header: str = HEADER):
        path = tmp_path / "hospitals.csv"
        path.write_text(header + "".join(row + "\n" for row in rows))
        return path

    return write


@pytest.mark.parametrize(
    "a, b, expected, tolerance",
    [
        ((0.0, 0.0), (0.0, 0.0), 0.0, 1e-9),
        ((0.0, 0.0), (0.0, 180.0), 20015.1, 0.1),
        ((36.12, -86.67), (33.94, -118.40), 2886.4, 0.5),
    ],
)
def test_haversine(a, b, expected, tolerance):
    assert haversine_km(*a, *b) == pytest.approx(expected, abs=tolerance)
    assert haversine_km(*b, *a) == pytest.approx(expected, abs=tolerance)


@pytest.mark.parametrize("point", [(91.0, 0.0), (0.0, -181.0)])
def test_haversine_rejects_out_of_range_coordinates(point):
    with pytest.raises(ValueError):
        haversine_km(*point, 0.0, 0.0)


@pytest.mark.parametrize(
    "distance, expected",
    [
        (0.0, 1),
        (34.3, 1),
        (40.0, 2),
        (73.5, 2),
        (80.0, 2),
        (80.1, None),
        (85.4, None),
    ],
)
def test_classify(distance, expected):
    assert classify(distance, [40.0, 80.0]) == expected


@pytest.mark.parametrize(
    "population, expected",
    [
        (319141, 9),
        (110603, 4),
        (0, 0),
        (36500, 1),  # exactly one flight of two units
    ],
)
def test_flights_per_day(population, expected):
    assert flights_per_day(population, 0.02, 2) == expected


def test_district_population_is_split_evenly(hospital_file):
    path = hospital_file("A,Same,10,730000,,,,", "B,Same,50,730000,,,,")
    scenario = build_scenario(path, ScenarioConfig(fleet_size=3))
    assert [h.served_population for h in scenario.hospitals] == [365000, 365000]
    # 365000 people need 20 units a day, 10 flights
    assert scenario.class_daily_flights == (10.0, 10.0)


def test_zero_population_gives_zero_rates(hospital_file):
    path = hospital_file("A,Quiet,10,0,,,,")
    scenario = build_scenario(path, ScenarioConfig(fleet_size=3))
    assert all(lam == 0.0 for lam in scenario.rates[0] + scenario.rates[1])


def test_rates_follow_arrival_shape(hospital_file):
    path = hospital_file("A,North,10,200000,,,,", "B,South,60,400000,,,,")
    config = ScenarioConfig(fleet_size=3)
    scenario = build_scenario(path, config)
    shape = config.shape()
    assert scenario.class_daily_flights == (6.0, 11.0)
    assert math.fsum(scenario.rates[0]) == pytest.approx(6.0, abs=1e-9)
    assert math.fsum(scenario.rates[1]) == pytest.approx(11.0, abs=1e-9)
    assert scenario.rates[1][3] == pytest.approx(11.0 * shape[3])
    assert scenario.schedule.distribution(1, 4).lam == pytest.approx(6.0 * shape[3])


def test_out_of_range_hospitals_are_dropped(hospital_file, caplog):
    path = hospital_file("Near,A,10,200000,,,,", "Far,B,120,200000,,,,")
    with caplog.at_level(logging.WARNING):
        scenario = build_scenario(path, ScenarioConfig(fleet_size=3))
    assert scenario.hospitals[1].demand_class is None
    assert scenario.class_daily_flights == (6.0, 0.0)
    assert "Far" in caplog.text


def test_overrides_take_precedence(hospital_file):
    path = hospital_file(
        "Moved,A,10,200000,,,70,",
        "Forced,B,10,200000,,,,NA",
        "Promoted,C,60,200000,,,,1",
    )
    scenario = build_scenario(path, ScenarioConfig(fleet_size=3))
    moved, forced, promoted = scenario.hospitals
    assert (moved.distance_km, moved.demand_class) == (70.0, 2)
    assert forced.demand_class is None
    assert promoted.demand_class == 1
    assert scenario.class_daily_flights == (6.0, 6.0)


def test_blank_distance_uses_station_coordinates(hospital_file):
    path = hospital_file("Hill,A,,60000,-1.95,30.30,,")
    config = ScenarioConfig(fleet_size=3, station_lat=-1.95, station_lon=30.06)
    (hospital,) = build_scenario(path, config).hospitals
    assert hospital.distance_km == pytest.approx(26.67, abs=0.05)
    assert hospital.demand_class == 1
    assert hospital.flights_per_day == 2


def test_blank_distance_without_station_is_a_parse_error(hospital_file):
    path = hospital_file("Hill,A,,60000,-1.95,30.30,,")
    with pytest.raises(ScenarioParseError) as e:
        build_scenario(path, ScenarioConfig(fleet_size=3))
    assert (e.value.row, e.value.column) == (1, "distance_km")


def test_single_band_collapses_to_one_class(hospital_file):
    path = hospital_file("A,N,10,200000,,,,", "B,S,60,400000,,,,", "C,E,200,200000,,,,")
    split = build_scenario(path, ScenarioConfig(fleet_size=3, bands=[40.0, 80.0]))
    merged = build_scenario(path, ScenarioConfig(fleet_size=3, bands=[1e6]))
    assert merged.class_daily_flights == (23.0, 0.0)
    assert sum(split.class_daily_flights) == 17.0
    assert sum(h.flights_per_day for h in merged.hospitals) == 23


@pytest.mark.parametrize(
    "rows, header, row, column",
    [
        (("A,N,10,-5,,,,",), HEADER, 1, "population"),
        (("A,N,10,100,,,,", "B,S,10,100,,,,3"), HEADER, 2, "class_override"),
        (("A,N,,100,,,,",), HEADER, 1, None),
        (("A,N,10,100,95,0,,",), HEADER, 1, "lat"),
        (("A,N,ten,100,,,,",), HEADER, 1, "distance_km"),
        (("A,10,100",), "name,distance_km,population\n", None, "district"),
    ],
)
def test_parse_errors_name_row_and_column(hospital_file, rows, header, row, column):
    path = hospital_file(*rows, header=header)
    with pytest.raises(ScenarioParseError) as e:
        load_hospitals(path)
    assert e.value.row == row
    assert e.value.column == column


def test_inconsistent_district_population(hospital_file):
    path = hospital_file("A,Same,10,1000,,,,", "B,Same,20,2000,,,,")
    with pytest.raises(ScenarioParseError) as e:
        build_scenario(path, ScenarioConfig(fleet_size=3))
    assert (e.value.row, e.value.column) == (2, "population")


def test_empty_file_has_no_hospitals_in_range(tmp_path, hospital_file):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ScenarioParseError, match="no hospitals in range"):
        load_hospitals(empty)
    with pytest.raises(ScenarioParseError, match="no hospitals in range"):
        build_scenario(hospital_file(), ScenarioConfig(fleet_size=3))
    with pytest.raises(ScenarioParseError, match="no hospitals in range"):
        build_scenario(hospital_file("Far,B,120,200000,,,,"), ScenarioConfig(fleet_size=3))


def test_build_accepts_records():
    records = [HospitalRecord(name="A", district="N", distance_km=5.0, population=200000)]
    scenario = build_scenario(records, ScenarioConfig(fleet_size=2))
    assert scenario.class_daily_flights == (6.0, 0.0)


def test_build_is_deterministic(hospital_file, tmp_path):
    path = hospital_file("A,N,10,200000,,,,", "B,S,60,400000,,,,")
    config = ScenarioConfig(fleet_size=3)
    build_scenario(path, config).save(tmp_path / "one.json")
    build_scenario(path, config).save(tmp_path / "two.json")
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()


def test_save_and_load_keep_the_hash(hospital_file, tmp_path):
    scenario = build_scenario(hospital_file("A,N,10,200000,,,,"), ScenarioConfig(fleet_size=3))
    scenario.save(tmp_path / "s.json")
    loaded = Scenario.load(tmp_path / "s.json")
    assert loaded.hash == scenario.hash
    assert loaded.rates == scenario.rates


def test_hash_changes_with_config(make_scenario, steady_rates):
    base = make_scenario(2, steady_rates(1.0, 1.0, 2))
    assert base.with_config(rho21=0.7).hash != base.hash
    assert base.with_config(rho21=0.5).hash == base.hash


def test_from_rates_checks_shape():
    with pytest.raises(ScenarioParseError):
        Scenario.from_rates(ScenarioConfig(fleet_size=2), [[1.0] * 3, [1.0] * 3])


def test_rates_frame(make_scenario):
    frame = make_scenario(2, [[1.0, 2.0], [0.5, 0.0]]).rates_frame()
    assert list(frame.columns) == ["t", "lambda1", "lambda2"]
    assert frame["lambda1"].tolist() == [1.0, 2.0]
    assert frame["t"].tolist() == [1, 2]


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"fleet_size": 5, "bands": [30, 60]}')
    config = load_config(path)
    assert config.fleet_size == 5
    assert config.bands == [30.0, 60.0]
