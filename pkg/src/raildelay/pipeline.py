"""Raw trip and weather files to model-ready datasets.

The steps are missing-time classification, LOCF imputation along each
trip, nearest-grid-point weather matching, section aggregation, and
derivation of recurrent delay events and delay states.  Every per-trip
function is pure; file readers and writers live at the bottom.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import (CountingProcessDataset, CountingProcessRow, PanelObservation,
                     PanelStateDataset, SectionCovariates, SpotObservation, TripRecord,
                     WeatherSample, minutes_between, parse_time)

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
# Distances closer than this are treated as ties (then broken by (lat, lon)).
DISTANCE_TIE_KM = 1e-9

TRIP_COLUMNS = ("train_number", "train_type", "departure_location", "arrival_location",
                "departure_date", "arrival_date", "section_km", "planned_departure",
                "planned_arrival", "actual_departure", "actual_arrival")
SPOT_COLUMNS = ("spot_id", "lat", "lon")
WEATHER_COLUMNS = ("lat", "lon", "valid_time", "t2_c", "rh2_pct", "snowdepth_m", "icing_mm")


class PipelineError(ValueError):
    pass


class DataError(PipelineError):
    """Trip content that the pipeline cannot turn into a consistent record."""


class SchemaError(PipelineError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class MissingWeatherError(PipelineError):
    def __init__(self, spot_id, hour, trip_id=None):
        self.spot_id = spot_id
        self.hour = hour
        self.trip_id = trip_id
        where = f"trip {trip_id}, " if trip_id else ""
        super().__init__(f"no weather sample for {where}spot {spot_id!r} "
                         f"at hour {hour:%Y-%m-%d %H:%M}")


class UnanchoredTripError(DataError):
    """The origin's actual departure is missing so LOCF has nothing to start from."""


# ---------------------------------------------------------------------------
# Missing times and LOCF
# ---------------------------------------------------------------------------


def classify_missing(spot: SpotObservation) -> Optional[int]:
    """Missing-time class of a spot: None, 1 (departure), 2 (arrival) or 3 (both).

    Only times that are planned can be missing; the origin has no arrival
    and the terminus no departure.
    """
    dep = spot.planned_departure is not None and spot.actual_departure is None
    arr = spot.planned_arrival is not None and spot.actual_arrival is None
    if dep and arr:
        return 3
    if arr:
        return 2
    if dep:
        return 1
    return None


@dataclass(frozen=True)
class ImputationEntry:
    trip_id: str
    spot_id: str
    field: str
    missing_class: Optional[int]
    value: Optional[dt.datetime]
    note: str = ""

    def as_row(self):
        v = "" if self.value is None else self.value.strftime("%Y-%m-%d %H:%M")
        c = "" if self.missing_class is None else str(self.missing_class)
        return [self.trip_id, self.spot_id, self.field, c, v, self.note]


def impute_with_log(trip: TripRecord):
    """LOCF imputation returning ``(trip, entries)`` with one entry per imputed time.

    Walking the spots in order, a missing arrival becomes the latest
    departure plus the planned driving time of the preceding section and a
    missing departure becomes the latest arrival plus the planned dwell
    time.  Imputed values count as observed for later spots.
    """
    first = trip.spots[0]
    if first.actual_departure is None:
        raise UnanchoredTripError(
            f"trip {trip.trip_id}: actual departure at origin {first.spot_id!r} is missing")
    entries = []
    out = [first]
    latest_dep = first.actual_departure
    prev = first
    for s in trip.spots[1:]:
        cls = classify_missing(s)
        arr, dep = s.actual_arrival, s.actual_departure
        if arr is None:
            if prev.planned_departure is None or s.planned_arrival is None:
                raise DataError(f"trip {trip.trip_id}: planned driving time into "
                                f"{s.spot_id!r} is undefined")
            arr = latest_dep + (s.planned_arrival - prev.planned_departure)
            entries.append(ImputationEntry(trip.trip_id, s.spot_id, "actual_arrival", cls, arr))
        if s.planned_departure is not None and dep is None:
            dwell = s.planned_departure - s.planned_arrival
            dep = arr + dwell
            entries.append(ImputationEntry(trip.trip_id, s.spot_id, "actual_departure", cls, dep))
        if dep is not None:
            latest_dep = dep
        s = dataclasses.replace(s, actual_arrival=arr, actual_departure=dep)
        out.append(s)
        prev = s
    if not entries:
        return trip, entries
    return dataclasses.replace(trip, spots=tuple(out)), entries


def locf_impute(trip: TripRecord) -> TripRecord:
    """Fill every missing actual time by LOCF; see :func:`impute_with_log`."""
    return impute_with_log(trip)[0]


def check_monotone(trip: TripRecord) -> None:
    """Actual times must not decrease along the trip."""
    last = None
    for s in trip.spots:
        for label, t in (("arrival", s.actual_arrival), ("departure", s.actual_departure)):
            if t is None:
                continue
            if last is not None and t < last:
                raise DataError(f"trip {trip.trip_id}: actual {label} at spot {s.spot_id!r} "
                                f"({t:%Y-%m-%d %H:%M}) precedes the previous time "
                                f"({last:%Y-%m-%d %H:%M})")
            last = t


def _require_imputed(trip: TripRecord):
    if trip.has_missing():
        raise DataError(f"trip {trip.trip_id} still has missing actual times; impute first")
    check_monotone(trip)


# ---------------------------------------------------------------------------
# Weather
# ---------------------------------------------------------------------------


def round_to_hour(t: dt.datetime) -> dt.datetime:
    """Nearest whole hour; half past rounds up."""
    base = t.replace(minute=0, second=0, microsecond=0)
    if t - base >= dt.timedelta(minutes=30):
        base += dt.timedelta(hours=1)
    return base


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


class WeatherIndex:
    """Weather samples grouped by valid hour, each group sorted by (lat, lon)."""

    def __init__(self, samples):
        groups = {}
        for s in samples:
            groups.setdefault(s.valid_time, []).append(s)
        self._hours = {}
        for hour, group in groups.items():
            group.sort(key=lambda s: (s.grid_lat, s.grid_lon))
            lat = np.array([s.grid_lat for s in group])
            lon = np.array([s.grid_lon for s in group])
            self._hours[hour] = (lat, lon, group)

    def __len__(self):
        return sum(len(g[2]) for g in self._hours.values())

    def hours(self):
        return sorted(self._hours)

    def nearest(self, lat, lon, hour):
        entry = self._hours.get(hour)
        if entry is None:
            return None
        glat, glon, group = entry
        d = haversine_km(lat, lon, glat, glon)
        # first index within the tie band of the minimum is the lexicographic winner
        k = int(np.flatnonzero(d <= d.min() + DISTANCE_TIE_KM)[0])
        return group[k]


def match_spot_weather(spot_coords, t: dt.datetime, weather, spot_id: str = "?") -> WeatherSample:
    """Sample at the rounded hour whose grid point is closest to the spot.

    ``weather`` is a :class:`WeatherIndex` or an iterable of samples.
    Equidistant grid points resolve to the smaller ``(lat, lon)``.
    """
    index = weather if isinstance(weather, WeatherIndex) else WeatherIndex(weather)
    hour = round_to_hour(t)
    sample = index.nearest(spot_coords[0], spot_coords[1], hour)
    if sample is None:
        raise MissingWeatherError(spot_id, hour)
    return sample


def section_covariates(a: WeatherSample, b: WeatherSample) -> SectionCovariates:
    """Endpoint means; the icing flag is 0 only when the mean icing is exactly 0."""
    icing = (a.icing_mm + b.icing_mm) / 2
    return SectionCovariates(
        temperature_c=(a.temperature_c + b.temperature_c) / 2,
        humidity_pct=(a.humidity_pct + b.humidity_pct) / 2,
        snow_depth_m=(a.snow_depth_m + b.snow_depth_m) / 2,
        icing_flag=0 if icing == 0 else 1,
        icing_mean_mm=icing,
    )


def spot_time(spot: SpotObservation) -> dt.datetime:
    """Time a spot is passed: actual arrival, or actual departure at the origin."""
    return spot.actual_arrival if spot.actual_arrival is not None else spot.actual_departure


def trip_section_covariates(trip: TripRecord, coords: dict, weather) -> list:
    """Covariates for each section of an imputed trip, in travel order."""
    index = weather if isinstance(weather, WeatherIndex) else WeatherIndex(weather)
    samples = []
    for s in trip.spots:
        if s.spot_id not in coords:
            raise DataError(f"trip {trip.trip_id}: spot {s.spot_id!r} has no coordinates")
        try:
            samples.append(match_spot_weather(coords[s.spot_id], spot_time(s), index, s.spot_id))
        except MissingWeatherError as e:
            raise MissingWeatherError(e.spot_id, e.hour, trip.trip_id) from None
    return [section_covariates(a, b) for a, b in zip(samples, samples[1:])]


# ---------------------------------------------------------------------------
# Events and states
# ---------------------------------------------------------------------------


def section_increments(trip: TripRecord) -> list:
    """Actual minus planned running minutes for each section."""
    out = []
    for a, b in zip(trip.spots, trip.spots[1:]):
        actual = minutes_between(a.actual_departure, b.actual_arrival)
        planned = minutes_between(a.planned_departure, b.planned_arrival)
        out.append(actual - planned)
    return out


def build_counting_process(trip: TripRecord, covs, event_threshold_min: int = 1,
                           layout: str = "event") -> list:
    """Recurrent cumulative-delay events on the km axis for one imputed trip.

    A section with a delay increment of at least ``event_threshold_min``
    minutes produces an event at its end spot.  With ``layout="event"``
    rows run between consecutive events (and the trip end); with
    ``layout="section"`` every section is its own row.  Covariates of a row
    come from the section containing its stop km.
    """
    if event_threshold_min < 1:
        raise ValueError("event_threshold_min must be >= 1")
    if layout not in ("event", "section"):
        raise ValueError(f"unknown layout {layout!r}; use 'event' or 'section'")
    _require_imputed(trip)
    n_sec = len(trip.spots) - 1
    if len(covs) != n_sec:
        raise ValueError(f"trip {trip.trip_id}: {n_sec} sections but {len(covs)} covariate sets")
    inc = section_increments(trip)
    rows = []
    start = 0.0
    j = 1
    for k in range(n_sec):
        stop = trip.spots[k + 1].cumulative_km
        event = inc[k] >= event_threshold_min
        if event or layout == "section" or k == n_sec - 1:
            rows.append(CountingProcessRow(trip.trip_id, j, start, stop, event,
                                           tuple(covs[k].as_vector())))
            start = stop
            if event:
                j += 1
    return rows


def build_panel_states(trip: TripRecord, covs, delay_threshold_min: int = 5) -> list:
    """Delay state at every spot with a planned arrival (origin excluded).

    State 2 means the arrival is more than ``delay_threshold_min`` minutes
    late.  Observation times are minutes since the first scheduled
    departure.  Two spots reached in the same minute collapse to the later
    one.
    """
    if delay_threshold_min < 0:
        raise ValueError("delay_threshold_min must be >= 0")
    _require_imputed(trip)
    t0 = trip.spots[0].planned_departure
    obs = []
    for k, s in enumerate(trip.spots[1:]):
        late = minutes_between(s.planned_arrival, s.actual_arrival)
        state = 2 if late > delay_threshold_min else 1
        o = PanelObservation(trip.trip_id, minutes_between(t0, s.actual_arrival), state,
                             tuple(covs[k].as_vector()))
        if obs and o.obs_time_min == obs[-1].obs_time_min:
            obs[-1] = o
        elif obs and o.obs_time_min < obs[-1].obs_time_min:
            raise DataError(f"trip {trip.trip_id}: arrival at spot {s.spot_id!r} is earlier "
                            f"than the previous arrival")
        else:
            obs.append(o)
    return obs


# ---------------------------------------------------------------------------
# Whole-file orchestration
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    trips: list
    imputation_log: list
    dropped: list
    cp_rows: list
    panel_obs: list
    names: tuple = SectionCovariates.NAMES

    def counting_process(self) -> CountingProcessDataset:
        return CountingProcessDataset.from_rows(self.cp_rows, self.names)

    def panel(self) -> PanelStateDataset:
        return PanelStateDataset.from_observations(self.panel_obs, self.names)


def prepare(trips, coords: dict, weather, event_threshold_min: int = 1,
            delay_threshold_min: int = 5, layout: str = "event") -> PreparedData:
    """Run imputation, weather matching and both dataset builders on all trips.

    Trips are processed in (train_number, departure_date) order.  Trips
    without an observed first departure are dropped with a warning.
    """
    if not trips:
        raise PipelineError("no trips")
    index = weather if isinstance(weather, WeatherIndex) else WeatherIndex(weather)
    ordered = sorted(trips, key=lambda t: (t.train_number, t.departure_date))
    seen = set()
    kept, entries, dropped, cp, panel = [], [], [], [], []
    for trip in ordered:
        if trip.trip_id in seen:
            raise DataError(f"duplicate trip {trip.trip_id}")
        seen.add(trip.trip_id)
        try:
            imputed, log_entries = impute_with_log(trip)
        except UnanchoredTripError as e:
            log.warning("dropping trip: %s", e)
            dropped.append(ImputationEntry(trip.trip_id, trip.spots[0].spot_id,
                                           "actual_departure", classify_missing(trip.spots[0]),
                                           None, "trip dropped: origin departure missing"))
            continue
        check_monotone(imputed)
        covs = trip_section_covariates(imputed, coords, index)
        kept.append(imputed)
        entries.extend(log_entries)
        cp.extend(build_counting_process(imputed, covs, event_threshold_min, layout))
        panel.extend(build_panel_states(imputed, covs, delay_threshold_min))
    if not kept:
        raise PipelineError("no trips left after dropping unanchored trips")
    log.info("prepared %d trips (%d dropped, %d imputed times)",
             len(kept), len(dropped), len(entries))
    return PreparedData(kept, entries, dropped, cp, panel)


# ---------------------------------------------------------------------------
# Delimited-text IO
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal; identical on every IEEE-754 platform."""
    x = float(x)
    if x == 0:
        return "0"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _open_rows(path, required):
    f = open(path, newline="", encoding="utf-8")
    reader = csv.reader(f)
    try:
        header = next(reader)
    except StopIteration:
        f.close()
        raise SchemaError(path, 1, "file is empty (no header row)") from None
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        f.close()
        raise SchemaError(path, 1, f"missing columns {missing}")
    col = {h: i for i, h in enumerate(header)}

    def rows():
        with f:
            for line_no, rec in enumerate(reader, start=2):
                if not rec or all(not v.strip() for v in rec):
                    continue
                if len(rec) != len(header):
                    raise SchemaError(path, line_no,
                                      f"expected {len(header)} fields, got {len(rec)}")
                yield line_no, {k: rec[i].strip() for k, i in col.items()}

    return rows()


def _float(path, line, name, v):
    try:
        x = float(v)
    except ValueError:
        raise SchemaError(path, line, f"{name}: not a number: {v!r}") from None
    if not math.isfinite(x):
        raise SchemaError(path, line, f"{name}: not finite: {v!r}")
    return x


def _date(path, line, name, v):
    try:
        return dt.date.fromisoformat(v)
    except ValueError:
        raise SchemaError(path, line, f"{name}: expected YYYY-MM-DD, got {v!r}") from None


def _clock(path, line, name, v):
    if v == "":
        return None
    try:
        return dt.datetime.strptime(v, "%H:%M").time()
    except ValueError:
        raise SchemaError(path, line, f"{name}: expected HH:MM, got {v!r}") from None


def _near(day: dt.date, clock: dt.time, ref: dt.datetime) -> dt.datetime:
    """Datetime with the given clock time on the day (+-1) closest to ``ref``."""
    base = dt.datetime.combine(day, clock)
    cands = [base + dt.timedelta(days=k) for k in (-1, 0, 1)]
    return min(cands, key=lambda c: (abs(c - ref), c))


def read_spots(path) -> dict:
    coords = {}
    for line, r in _open_rows(path, SPOT_COLUMNS):
        sid = r["spot_id"]
        if not sid:
            raise SchemaError(path, line, "spot_id is empty")
        if sid in coords:
            raise SchemaError(path, line, f"duplicate spot_id {sid!r}")
        lat = _float(path, line, "lat", r["lat"])
        lon = _float(path, line, "lon", r["lon"])
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise SchemaError(path, line, f"coordinates out of range: {lat}, {lon}")
        coords[sid] = (lat, lon)
    return coords


def read_weather(path) -> list:
    out = []
    for line, r in _open_rows(path, WEATHER_COLUMNS):
        try:
            t = parse_time(r["valid_time"])
        except ValueError:
            raise SchemaError(path, line, f"valid_time: expected 'YYYY-MM-DD HH:00', "
                                          f"got {r['valid_time']!r}") from None
        if t is None:
            raise SchemaError(path, line, "valid_time is empty")
        vals = [_float(path, line, c, r[c]) for c in ("lat", "lon", "t2_c", "rh2_pct",
                                                       "snowdepth_m", "icing_mm")]
        try:
            out.append(WeatherSample(vals[0], vals[1], t, *vals[2:]))
        except ValueError as e:
            raise SchemaError(path, line, str(e)) from None
    return out


def read_trips(path) -> list:
    """Group one-row-per-section records into trips.

    Consecutive rows of the same train whose departure location equals the
    previous arrival location belong to one trip.  Planned times take the
    row's departure and arrival dates; actual times take whichever day
    within one of that date lies closest to the planned time.
    """
    groups = []
    for line, r in _open_rows(path, TRIP_COLUMNS):
        for c in ("train_number", "departure_location", "arrival_location"):
            if not r[c]:
                raise SchemaError(path, line, f"{c} is empty")
        cur = groups[-1] if groups else None
        if (cur is not None and cur[-1][1]["train_number"] == r["train_number"]
                and cur[-1][1]["arrival_location"] == r["departure_location"]):
            cur.append((line, r))
        else:
            groups.append([(line, r)])
    if not groups:
        raise PipelineError(f"{path}: no trips")
    return [_trip_from_rows(path, g) for g in groups]


def _trip_from_rows(path, rows):
    spots = []
    km = 0.0
    first_line, first = rows[0]
    dep_date0 = _date(path, first_line, "departure_date", first["departure_date"])
    pending_arr = None
    for k, (line, r) in enumerate(rows):
        dep_day = _date(path, line, "departure_date", r["departure_date"])
        arr_day = _date(path, line, "arrival_date", r["arrival_date"])
        sec = _float(path, line, "section_km", r["section_km"])
        if sec <= 0:
            raise SchemaError(path, line, f"section_km must be positive, got {sec}")
        pd_clock = _clock(path, line, "planned_departure", r["planned_departure"])
        pa_clock = _clock(path, line, "planned_arrival", r["planned_arrival"])
        if pd_clock is None or pa_clock is None:
            raise SchemaError(path, line, "planned times must not be empty")
        ad_clock = _clock(path, line, "actual_departure", r["actual_departure"])
        aa_clock = _clock(path, line, "actual_arrival", r["actual_arrival"])
        pdep = dt.datetime.combine(dep_day, pd_clock)
        parr = dt.datetime.combine(arr_day, pa_clock)
        adep = None if ad_clock is None else _near(dep_day, ad_clock, pdep)
        aarr = None if aa_clock is None else _near(arr_day, aa_clock, parr)
        if k == 0:
            p_arr_here, a_arr_here, sec_here = None, None, 0.0
        else:
            p_arr_here, a_arr_here, sec_here = pending_arr
        try:
            spots.append(SpotObservation(r["departure_location"], k, km, p_arr_here, pdep,
                                         a_arr_here, adep, sec_here))
        except ValueError as e:
            raise SchemaError(path, line, str(e)) from None
        km += sec
        pending_arr = (parr, aarr, sec)
    line, r = rows[-1]
    parr, aarr, sec = pending_arr
    try:
        spots.append(SpotObservation(r["arrival_location"], len(rows), km, parr, None,
                                     aarr, None, sec))
        return TripRecord(first["train_number"], dep_date0, first["train_type"], tuple(spots))
    except ValueError as e:
        raise SchemaError(path, first_line, str(e)) from None


def _clock_str(t):
    return "" if t is None else t.strftime("%H:%M")


def write_trips(path, trips) -> None:
    """Write trips back in the one-row-per-section input schema."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for trip in trips:
            for a, b in zip(trip.spots, trip.spots[1:]):
                w.writerow([trip.train_number, trip.train_type, a.spot_id, b.spot_id,
                            a.planned_departure.date().isoformat(),
                            b.planned_arrival.date().isoformat(), fmt_float(b.section_km),
                            _clock_str(a.planned_departure), _clock_str(b.planned_arrival),
                            _clock_str(a.actual_departure), _clock_str(b.actual_arrival)])


def write_imputation_log(path, entries, dropped=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trip_id", "spot_id", "field", "missing_class", "imputed_value", "note"])
        for e in list(entries) + list(dropped):
            w.writerow(e.as_row())


def write_counting_process(path, rows, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "event_index", "start_km", "stop_km", "event", *names])
        for r in rows:
            w.writerow([r.subject_id, r.event_index, fmt_float(r.start_km),
                        fmt_float(r.stop_km), int(r.event), *map(fmt_float, r.covariates)])


def write_panel(path, observations, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "obs_time_min", "state", *names])
        for o in observations:
            w.writerow([o.subject_id, o.obs_time_min, o.state, *map(fmt_float, o.covariates)])


def _covariate_header(path, header, fixed):
    if tuple(header[:len(fixed)]) != fixed:
        raise SchemaError(path, 1, f"header must start with {list(fixed)}")
    names = tuple(header[len(fixed):])
    if not names:
        raise SchemaError(path, 1, "no covariate columns")
    return names


def _read_table(path, fixed):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(path, 1, "file is empty (no header row)") from None
        names = _covariate_header(path, header, fixed)
        body = []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise SchemaError(path, line, f"expected {len(header)} fields, got {len(rec)}")
            body.append((line, rec))
    if not body:
        raise SchemaError(path, 2, "no data rows")
    return names, body


def read_counting_process(path) -> CountingProcessDataset:
    fixed = ("subject_id", "event_index", "start_km", "stop_km", "event")
    names, body = _read_table(path, fixed)
    subj, idx, start, stop, event, X = [], [], [], [], [], []
    for line, rec in body:
        subj.append(rec[0])
        try:
            idx.append(int(rec[1]))
            e = int(rec[4])
        except ValueError:
            raise SchemaError(path, line, "event_index and event must be integers") from None
        if e not in (0, 1):
            raise SchemaError(path, line, f"event must be 0 or 1, got {e}")
        start.append(_float(path, line, "start_km", rec[2]))
        stop.append(_float(path, line, "stop_km", rec[3]))
        if start[-1] >= stop[-1]:
            raise SchemaError(path, line, "start_km must be < stop_km")
        event.append(bool(e))
        X.append([_float(path, line, n, v) for n, v in zip(names, rec[5:])])
    return CountingProcessDataset(np.array(subj), np.array(start), np.array(stop),
                                  np.array(event), np.array(X), names, np.array(idx))


def read_panel(path, time_scale: float = 1.0 / 60.0) -> PanelStateDataset:
    """Panel file to a dataset with times converted to hours by default."""
    fixed = ("subject_id", "obs_time_min", "state")
    names, body = _read_table(path, fixed)
    subj, time, state, X = [], [], [], []
    last = {}
    for line, rec in body:
        s = rec[0]
        if subj and s != subj[-1] and s in last:
            raise SchemaError(path, line, f"rows of subject {s!r} are not contiguous")
        try:
            t = float(rec[1])
            st = int(rec[2])
        except ValueError:
            raise SchemaError(path, line, "obs_time_min and state must be numeric") from None
        if st < 1:
            raise SchemaError(path, line, f"state labels start at 1, got {st}")
        if s in last and t <= last[s]:
            raise SchemaError(path, line, f"obs_time_min not increasing for subject {s!r}")
        last[s] = t
        subj.append(s)
        time.append(t)
        state.append(st)
        X.append([_float(path, line, n, v) for n, v in zip(names, rec[3:])])
    return PanelStateDataset(np.array(subj), np.array(time) * time_scale, np.array(state),
                             np.array(X), names)


def write_counting_dataset(path, ds: CountingProcessDataset) -> None:
    write_counting_process(path, ds.to_rows(), ds.names)


def write_panel_dataset(path, ds: PanelStateDataset, time_scale: float = 60.0) -> None:
    """Write a panel dataset; hours are converted back to minutes."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "obs_time_min", "state", *ds.names])
        for s, t, st, x in zip(ds.subject, ds.time, ds.state, ds.X):
            w.writerow([s, fmt_float(t * time_scale), int(st), *map(fmt_float, x)])
