import datetime as dt
import filecmp
import logging

import numpy as np
import pytest

from raildelay import pipeline
from raildelay.domain import SectionCovariates, SpotObservation, TripRecord, WeatherSample

T0 = dt.datetime(2017, 1, 15, 10, 0)


def at(minutes):
    return None if minutes is None else T0 + dt.timedelta(minutes=minutes)


def make_trip(kms, planned, actual, train="1"):
    """``planned``/``actual`` are (arrival, departure) minute offsets per spot."""
    spots = []
    for i, (km, (pa, pd), (aa, ad)) in enumerate(zip(kms, planned, actual)):
        sec = 0.0 if i == 0 else km - kms[i - 1]
        spots.append(SpotObservation(f"S{i}", i, km, at(pa), at(pd), at(aa), at(ad), sec))
    return TripRecord(train, T0.date(), "regional", spots)


def flat_covs(n, temp=-5.0):
    return [SectionCovariates(temp, 80.0, 0.1, 0, 0.0) for _ in range(n)]


# -- classification and LOCF ------------------------------------------------


def test_classify_missing_classes():
    base = dict(spot_id="B", spot_index=1, cumulative_km=5.0, section_km=5.0,
                planned_arrival=at(5), planned_departure=at(6))
    assert pipeline.classify_missing(SpotObservation(**base, actual_arrival=at(5))) == 1
    assert pipeline.classify_missing(SpotObservation(**base, actual_departure=at(6))) == 2
    assert pipeline.classify_missing(SpotObservation(**base)) == 3
    assert pipeline.classify_missing(
        SpotObservation(**base, actual_arrival=at(5), actual_departure=at(6))) is None


def test_locf_hand_trace():
    # departure 10:00 at spot k-1, planned drive 7 min, planned dwell 2 min
    trip = make_trip([0, 10, 20], [(None, 0), (7, 9), (20, None)],
                     [(None, 0), (None, None), (21, None)])
    out, log = pipeline.impute_with_log(trip)
    s = out.spots[1]
    assert s.actual_arrival == at(7) and s.actual_departure == at(9)
    assert [(e.field, e.missing_class) for e in log] == [("actual_arrival", 3),
                                                         ("actual_departure", 3)]


def test_locf_uses_latest_imputed_values():
    trip = make_trip([0, 5, 10, 15], [(None, 0), (4, 5), (9, 9), (14, None)],
                     [(None, 2), (6, None), (None, None), (None, None)])
    out = pipeline.locf_impute(trip)
    # dep B = 6 + 1; arr C = 7 + 4; dep C = 11 + 0 (pass-through); arr D = 11 + 5
    assert [s.actual_arrival for s in out.spots[1:]] == [at(6), at(11), at(16)]
    assert out.spots[2].actual_departure == at(11)
    assert not out.has_missing()


def test_locf_noop_and_idempotent():
    full = make_trip([0, 10], [(None, 0), (10, None)], [(None, 1), (12, None)])
    assert pipeline.locf_impute(full) is full
    trip = make_trip([0, 5, 10], [(None, 0), (4, 6), (9, None)],
                     [(None, 0), (None, 7), (None, None)])
    once = pipeline.locf_impute(trip)
    assert pipeline.locf_impute(once) == once


def test_locf_requires_anchor():
    trip = make_trip([0, 10], [(None, 0), (10, None)], [(None, None), (12, None)])
    with pytest.raises(pipeline.UnanchoredTripError):
        pipeline.locf_impute(trip)


# -- weather ------------------------------------------------------------------


@pytest.mark.parametrize("minute,hour", [(29, 10), (31, 11), (30, 11), (0, 10), (59, 11)])
def test_round_to_hour(minute, hour):
    t = dt.datetime(2017, 1, 15, 10, minute)
    assert pipeline.round_to_hour(t) == dt.datetime(2017, 1, 15, hour)


def _grid(lats, lons, hour=dt.datetime(2017, 1, 15, 10)):
    return [WeatherSample(la, lo, hour, la, 80.0, 0.1, 0.0) for la in lats for lo in lons]


def test_match_on_grid_point_and_tie():
    w = _grid([63.8, 63.9], [20.2, 20.4])
    s = pipeline.match_spot_weather((63.9, 20.4), dt.datetime(2017, 1, 15, 10, 10), w)
    assert (s.grid_lat, s.grid_lon) == (63.9, 20.4)
    # symmetric in longitude about 20.3 on the same parallel: equidistant
    s = pipeline.match_spot_weather((63.8, 20.3), dt.datetime(2017, 1, 15, 10), w)
    assert (s.grid_lat, s.grid_lon) == (63.8, 20.2)


def test_match_brute_force_3km_grid():
    lat0, lon0 = 63.5, 19.8
    dlat = 3 / 111.2
    dlon = 3 / (111.2 * np.cos(np.radians(63.8)))
    lats = [lat0 + i * dlat for i in range(25)]
    lons = [lon0 + j * dlon for j in range(25)]
    w = _grid(lats, lons)
    spot = (63.83, 20.26)
    s = pipeline.match_spot_weather(spot, dt.datetime(2017, 1, 15, 9, 45), w)
    d = [pipeline.haversine_km(*spot, g.grid_lat, g.grid_lon) for g in w]
    assert pipeline.haversine_km(*spot, s.grid_lat, s.grid_lon) == min(d)
    assert abs(s.grid_lat - spot[0]) < dlat and abs(s.grid_lon - spot[1]) < dlon


def test_missing_weather_names_spot_and_hour():
    w = _grid([63.8], [20.2])
    with pytest.raises(pipeline.MissingWeatherError, match=r"spot 'X' at hour 2017-01-15 12:00"):
        pipeline.match_spot_weather((63.8, 20.2), dt.datetime(2017, 1, 15, 12, 5), w, "X")


def test_section_covariates():
    h = dt.datetime(2017, 1, 15, 10)
    a = WeatherSample(0, 0, h, -5.0, 80.0, 0.2, 0.0)
    b = WeatherSample(0, 0, h, -3.0, 90.0, 0.4, 0.0)
    c = WeatherSample(0, 0, h, -3.0, 90.0, 0.4, 0.4)
    ab = pipeline.section_covariates(a, b)
    assert ab.temperature_c == -4.0 and ab.humidity_pct == 85.0 and ab.icing_flag == 0
    ac = pipeline.section_covariates(a, c)
    assert ac.icing_mean_mm == pytest.approx(0.2) and ac.icing_flag == 1
    assert pipeline.section_covariates(c, a) == ac


# -- events and states --------------------------------------------------------


def test_event_rule():
    on_time = make_trip([0, 10], [(None, 0), (7, None)], [(None, 0), (7, None)])
    late = make_trip([0, 10], [(None, 0), (7, None)], [(None, 0), (9, None)])
    (r,) = pipeline.build_counting_process(on_time, flat_covs(1))
    assert not r.event and (r.start_km, r.stop_km) == (0, 10)
    (r,) = pipeline.build_counting_process(late, flat_covs(1))
    assert r.event and r.stop_km == 10


def _four_section_trip():
    # sections end at 30, 60, 90, 120 km; delays of +2 at 30 and +1 at 90
    planned = [(None, 0), (10, 10), (20, 20), (30, 30), (40, None)]
    actual = [(None, 0), (12, 12), (22, 22), (33, 33), (43, None)]
    return make_trip([0, 30, 60, 90, 120], planned, actual)


def test_counting_rows_between_events():
    trip = _four_section_trip()
    covs = [SectionCovariates(float(k), 80.0, 0.1, 0, 0.0) for k in range(4)]
    rows = pipeline.build_counting_process(trip, covs)
    assert [(r.start_km, r.stop_km, r.event, r.event_index) for r in rows] == [
        (0, 30, True, 1), (30, 90, True, 2), (90, 120, False, 3)]
    # covariates come from the section containing the stop position
    assert [r.covariates[0] for r in rows] == [0.0, 2.0, 3.0]
    sec = pipeline.build_counting_process(trip, covs, layout="section")
    assert [(r.start_km, r.stop_km) for r in sec] == [(0, 30), (30, 60), (60, 90), (90, 120)]
    assert [r.event for r in sec] == [True, False, True, False]
    # higher threshold drops the +1 event
    assert sum(r.event for r in pipeline.build_counting_process(trip, covs, 2)) == 1


def test_counting_rows_partition_random_trips(rng):
    for _ in range(50):
        n = rng.integers(1, 12)
        kms = np.concatenate([[0], np.cumsum(rng.uniform(0.3, 15, n))]).round(1).tolist()
        drive = rng.integers(2, 10, n)
        late = rng.integers(-1, 3, n)
        planned, actual, tp, ta = [(None, 0)], [(None, 0)], 0, 0
        for k in range(n):
            tp += int(drive[k])
            ta += int(max(1, drive[k] + late[k]))
            last = k == n - 1
            planned.append((tp, None if last else tp))
            actual.append((ta, None if last else ta))
        trip = make_trip(kms, planned, actual)
        rows = pipeline.build_counting_process(trip, flat_covs(n))
        assert rows[0].start_km == 0 and rows[-1].stop_km == trip.end_km
        assert all(a.stop_km == b.start_km for a, b in zip(rows, rows[1:]))
        assert sum(r.stop_km - r.start_km for r in rows) == pytest.approx(trip.end_km)
        expected = sum(1 for k in range(n)
                       if (actual[k + 1][0] - actual[k][1]) - (planned[k + 1][0] - planned[k][1]) >= 1)
        assert sum(r.event for r in rows) == expected


def test_non_monotone_times_are_data_errors():
    trip = make_trip([0, 10, 20], [(None, 0), (5, 6), (12, None)],
                     [(None, 0), (5, 4), (12, None)])
    with pytest.raises(pipeline.DataError, match="spot 'S1'"):
        pipeline.build_counting_process(trip, flat_covs(2))
    missing = make_trip([0, 10], [(None, 0), (7, None)], [(None, 0), (None, None)])
    with pytest.raises(pipeline.DataError, match="impute first"):
        pipeline.build_counting_process(missing, flat_covs(1))


def test_panel_states():
    trip = make_trip([0, 10, 20, 30], [(None, 0), (10, 11), (20, 21), (30, None)],
                     [(None, 0), (16, 17), (24, 25), (35, None)])
    obs = pipeline.build_panel_states(trip, flat_covs(3))
    assert [o.state for o in obs] == [2, 1, 1]
    assert [o.obs_time_min for o in obs] == [16, 24, 35]
    # 6 min late with threshold 5 -> delayed; threshold 6 -> not
    assert [o.state for o in pipeline.build_panel_states(trip, flat_covs(3), 6)] == [1, 1, 1]


def test_panel_same_minute_keeps_later_spot():
    trip = make_trip([0, 1, 2, 10], [(None, 0), (1, 1), (1, 1), (8, None)],
                     [(None, 0), (1, 1), (1, 1), (9, None)])
    covs = [SectionCovariates(float(k), 80.0, 0.1, 0, 0.0) for k in range(3)]
    obs = pipeline.build_panel_states(trip, covs)
    assert [o.obs_time_min for o in obs] == [1, 9]
    assert obs[0].covariates[0] == 1.0


# -- files --------------------------------------------------------------------


def _inputs(data_dir):
    d = data_dir / "pipeline"
    return (pipeline.read_trips(d / "trips.csv"), pipeline.read_spots(d / "spots.csv"),
            pipeline.read_weather(d / "weather.csv"))


def test_fixture_trips_parse(data_dir):
    trips, coords, weather = _inputs(data_dir)
    assert [t.trip_id for t in trips] == ["101_2017-01-15", "102_2017-01-15", "103_2017-01-15"]
    classes = [pipeline.classify_missing(s) for t in trips for s in t.spots]
    assert {1, 2, 3} <= set(classes)
    night = trips[2]
    # actual arrival just after midnight lands on the next day
    assert night.spots[1].actual_arrival == dt.datetime(2017, 1, 16, 0, 14)
    assert night.spots[0].actual_departure == dt.datetime(2017, 1, 15, 23, 58)


def test_golden_outputs_byte_identical(data_dir, tmp_path):
    data = pipeline.prepare(*_inputs(data_dir))
    pipeline.write_counting_process(tmp_path / "counting_process.csv", data.cp_rows, data.names)
    pipeline.write_panel(tmp_path / "panel.csv", data.panel_obs, data.names)
    pipeline.write_trips(tmp_path / "trips_imputed.csv", data.trips)
    pipeline.write_imputation_log(tmp_path / "imputation_log.csv", data.imputation_log)
    golden = data_dir / "pipeline" / "golden"
    for name in ("counting_process.csv", "panel.csv", "trips_imputed.csv", "imputation_log.csv"):
        assert filecmp.cmp(tmp_path / name, golden / name, shallow=False), name


def test_imputed_file_reimputes_to_itself(data_dir, tmp_path):
    data = pipeline.prepare(*_inputs(data_dir))
    pipeline.write_trips(tmp_path / "t.csv", data.trips)
    again = pipeline.read_trips(tmp_path / "t.csv")
    assert [pipeline.locf_impute(t) for t in again] == data.trips


def test_dataset_files_reload(data_dir, tmp_path):
    data = pipeline.prepare(*_inputs(data_dir))
    pipeline.write_counting_process(tmp_path / "cp.csv", data.cp_rows, data.names)
    ds = pipeline.read_counting_process(tmp_path / "cp.csv")
    assert ds.to_rows() == data.cp_rows
    pipeline.write_panel(tmp_path / "p.csv", data.panel_obs, data.names)
    panel = pipeline.read_panel(tmp_path / "p.csv")
    assert panel.time.tolist() == [o.obs_time_min / 60 for o in data.panel_obs]
    assert panel.names == SectionCovariates.NAMES


def test_unanchored_trip_dropped_with_warning(data_dir, caplog):
    trips, coords, weather = _inputs(data_dir)
    first = trips[1].spots[0]
    import dataclasses
    bad = dataclasses.replace(trips[1], spots=(dataclasses.replace(first, actual_departure=None),)
                              + trips[1].spots[1:])
    with caplog.at_level(logging.WARNING):
        data = pipeline.prepare([trips[0], bad, trips[2]], coords, weather)
    assert len(data.trips) == 2 and len(data.dropped) == 1
    assert "dropping trip" in caplog.text
    assert "trip dropped" in data.dropped[0].note


def test_missing_weather_hour_names_trip(data_dir):
    trips, coords, weather = _inputs(data_dir)
    weather = [w for w in weather if w.valid_time != dt.datetime(2017, 1, 16, 0)]
    with pytest.raises(pipeline.MissingWeatherError, match="trip 103_2017-01-15, spot 'C'"):
        pipeline.prepare(trips, coords, weather)


def test_schema_errors_carry_line_numbers(tmp_path, data_dir):
    src = (data_dir / "pipeline" / "trips.csv").read_text().splitlines()
    broken = src[:3] + [src[3].replace("08:25,08:40", "8h25,08:40")] + src[4:]
    p = tmp_path / "t.csv"
    p.write_text("\n".join(broken) + "\n")
    with pytest.raises(pipeline.SchemaError, match=r"t.csv:4: planned_departure"):
        pipeline.read_trips(p)
    p.write_text(src[0] + "\n")
    with pytest.raises(pipeline.PipelineError, match="no trips"):
        pipeline.read_trips(p)
    p.write_text("lat,lon\n1,2\n")
    with pytest.raises(pipeline.SchemaError, match="missing columns"):
        pipeline.read_weather(p)
    with pytest.raises(pipeline.PipelineError, match="no trips"):
        pipeline.prepare([], {}, [])


def test_fmt_float_is_shortest_roundtrip():
    assert pipeline.fmt_float(0.1 + 0.2) == "0.30000000000000004"
    assert pipeline.fmt_float(12.0) == "12"
    assert pipeline.fmt_float(-0.0) == "0"
    assert float(pipeline.fmt_float(1 / 3)) == 1 / 3
