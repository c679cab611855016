"""Domain types shared by the data pipeline and both estimation engines.

All record types are frozen dataclasses that validate on construction and
serialise to plain JSON-compatible dictionaries via ``to_dict`` /
``from_dict``.  Timestamps are naive ``datetime`` objects at minute
resolution.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_TIME_FMT = "%Y-%m-%d %H:%M"


class InvariantError(ValueError):
    """A record was constructed with values violating one of its rules."""

    def __init__(self, type_name: str, rule: str, detail: str = ""):
        self.type_name = type_name
        self.rule = rule
        msg = f"{type_name}: invariant violated: {rule}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def _check(ok, type_name, rule, detail=""):
    if not ok:
        raise InvariantError(type_name, rule, detail)


def _on_minute(t: Optional[dt.datetime]) -> bool:
    return t is None or (t.second == 0 and t.microsecond == 0)


def format_time(t: Optional[dt.datetime]) -> Optional[str]:
    return None if t is None else t.strftime(_TIME_FMT)


def parse_time(s: Optional[str]) -> Optional[dt.datetime]:
    if s is None or s == "":
        return None
    return dt.datetime.strptime(s, _TIME_FMT)


def minutes_between(a: dt.datetime, b: dt.datetime) -> int:
    """Whole minutes from ``a`` to ``b`` (both on the minute)."""
    return int((b - a).total_seconds() // 60)


@dataclass(frozen=True)
class SpotObservation:
    spot_id: str
    spot_index: int
    cumulative_km: float
    planned_arrival: Optional[dt.datetime]
    planned_departure: Optional[dt.datetime]
    actual_arrival: Optional[dt.datetime] = None
    actual_departure: Optional[dt.datetime] = None
    section_km: float = 0.0

    def __post_init__(self):
        name = "SpotObservation"
        _check(self.spot_index >= 0, name, "spot_index >= 0", str(self.spot_index))
        _check(self.cumulative_km >= 0, name, "cumulative_km >= 0")
        if self.spot_index > 0:
            _check(self.section_km > 0, name, "section_km > 0 for non-origin spots",
                   f"spot {self.spot_id!r} has {self.section_km}")
        _check(self.planned_arrival is not None or self.planned_departure is not None,
               name, "planned times are never missing", self.spot_id)
        _check(self.actual_arrival is None or self.planned_arrival is not None, name,
               "actual arrival requires a planned arrival", self.spot_id)
        _check(self.actual_departure is None or self.planned_departure is not None, name,
               "actual departure requires a planned departure", self.spot_id)
        for t in (self.planned_arrival, self.planned_departure,
                  self.actual_arrival, self.actual_departure):
            _check(_on_minute(t), name, "timestamps at minute resolution", str(t))

    @property
    def is_stop(self) -> bool:
        """True if the train is planned to dwell at this spot."""
        return (self.planned_arrival is not None and self.planned_departure is not None
                and self.planned_departure > self.planned_arrival)

    def to_dict(self) -> dict:
        return {
            "spot_id": self.spot_id,
            "spot_index": self.spot_index,
            "cumulative_km": self.cumulative_km,
            "planned_arrival": format_time(self.planned_arrival),
            "planned_departure": format_time(self.planned_departure),
            "actual_arrival": format_time(self.actual_arrival),
            "actual_departure": format_time(self.actual_departure),
            "section_km": self.section_km,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpotObservation":
        return cls(
            spot_id=d["spot_id"],
            spot_index=int(d["spot_index"]),
            cumulative_km=float(d["cumulative_km"]),
            planned_arrival=parse_time(d.get("planned_arrival")),
            planned_departure=parse_time(d.get("planned_departure")),
            actual_arrival=parse_time(d.get("actual_arrival")),
            actual_departure=parse_time(d.get("actual_departure")),
            section_km=float(d.get("section_km", 0.0)),
        )


@dataclass(frozen=True)
class TripRecord:
    train_number: str
    departure_date: dt.date
    train_type: str
    spots: tuple

    def __post_init__(self):
        name = "TripRecord"
        object.__setattr__(self, "spots", tuple(self.spots))
        spots = self.spots
        _check(len(spots) >= 2, name, "at least 2 spots", f"got {len(spots)}")
        _check(spots[0].cumulative_km == 0, name, "first spot has cumulative_km = 0")
        for a, b in zip(spots, spots[1:]):
            _check(b.spot_index > a.spot_index, name, "spot_index strictly increasing",
                   f"{a.spot_index} -> {b.spot_index}")
            _check(b.cumulative_km >= a.cumulative_km, name,
                   "cumulative_km non-decreasing", f"at spot {b.spot_id!r}")
        for i, s in enumerate(spots):
            if 0 < i:
                _check(s.planned_arrival is not None, name,
                       "planned arrival present at every spot after the origin", s.spot_id)
            if i < len(spots) - 1:
                _check(s.planned_departure is not None, name,
                       "planned departure present at every spot before the terminus", s.spot_id)

    @property
    def trip_id(self) -> str:
        return f"{self.train_number}_{self.departure_date.isoformat()}"

    @property
    def end_km(self) -> float:
        return self.spots[-1].cumulative_km

    def has_missing(self) -> bool:
        """True if any applicable actual time is missing."""
        for s in self.spots:
            if s.planned_arrival is not None and s.actual_arrival is None:
                return True
            if s.planned_departure is not None and s.actual_departure is None:
                return True
        return False

    def to_dict(self) -> dict:
        return {
            "train_number": self.train_number,
            "departure_date": self.departure_date.isoformat(),
            "train_type": self.train_type,
            "spots": [s.to_dict() for s in self.spots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TripRecord":
        return cls(
            train_number=d["train_number"],
            departure_date=dt.date.fromisoformat(d["departure_date"]),
            train_type=d["train_type"],
            spots=tuple(SpotObservation.from_dict(s) for s in d["spots"]),
        )


@dataclass(frozen=True)
class WeatherSample:
    grid_lat: float
    grid_lon: float
    valid_time: dt.datetime
    temperature_c: float
    humidity_pct: float
    snow_depth_m: float
    icing_mm: float

    def __post_init__(self):
        name = "WeatherSample"
        t = self.valid_time
        _check(t.minute == 0 and t.second == 0 and t.microsecond == 0, name,
               "valid_time on the hour", str(t))
        _check(0.0 <= self.humidity_pct <= 100.0, name, "humidity_pct in [0, 100]",
               str(self.humidity_pct))
        _check(self.snow_depth_m >= 0, name, "snow_depth_m >= 0", str(self.snow_depth_m))
        _check(self.icing_mm >= 0, name, "icing_mm >= 0", str(self.icing_mm))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["valid_time"] = format_time(self.valid_time)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeatherSample":
        kw = dict(d)
        kw["valid_time"] = parse_time(d["valid_time"])
        return cls(**kw)


@dataclass(frozen=True)
class SectionCovariates:
    temperature_c: float
    humidity_pct: float
    snow_depth_m: float
    icing_flag: int
    icing_mean_mm: float = 0.0

    NAMES = ("temperature_c", "humidity_pct", "snow_depth_m", "icing_flag")

    def __post_init__(self):
        name = "SectionCovariates"
        _check(self.icing_flag in (0, 1), name, "icing_flag in {0, 1}")
        _check(self.icing_mean_mm >= 0, name, "section-mean icing >= 0")
        _check((self.icing_flag == 0) == (self.icing_mean_mm == 0), name,
               "icing_flag = 0 iff the section-mean icing is exactly 0",
               f"flag={self.icing_flag}, mean={self.icing_mean_mm}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.temperature_c, self.humidity_pct,
                         self.snow_depth_m, float(self.icing_flag)])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SectionCovariates":
        return cls(**d)


@dataclass(frozen=True)
class CountingProcessRow:
    subject_id: str
    event_index: int
    start_km: float
    stop_km: float
    event: bool
    covariates: tuple

    def __post_init__(self):
        name = "CountingProcessRow"
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))
        _check(self.event_index >= 1, name, "event_index positive")
        _check(self.start_km < self.stop_km, name, "start_km < stop_km",
               f"({self.start_km}, {self.stop_km}]")

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "event_index": self.event_index,
            "start_km": self.start_km,
            "stop_km": self.stop_km,
            "event": bool(self.event),
            "covariates": list(self.covariates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CountingProcessRow":
        return cls(d["subject_id"], int(d["event_index"]), float(d["start_km"]),
                   float(d["stop_km"]), bool(d["event"]), tuple(d["covariates"]))


@dataclass(frozen=True)
class PanelObservation:
    subject_id: str
    obs_time_min: int
    state: int
    covariates: tuple

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))
        _check(self.state in (1, 2), "PanelObservation", "state in {1, 2}", str(self.state))

    def to_dict(self) -> dict:
        return {"subject_id": self.subject_id, "obs_time_min": self.obs_time_min,
                "state": self.state, "covariates": list(self.covariates)}

    @classmethod
    def from_dict(cls, d: dict) -> "PanelObservation":
        return cls(d["subject_id"], int(d["obs_time_min"]), int(d["state"]),
                   tuple(d["covariates"]))


def check_panel_sequence(observations) -> None:
    """Observation times must strictly increase within every subject."""
    last = {}
    for o in observations:
        prev = last.get(o.subject_id)
        _check(prev is None or o.obs_time_min > prev, "PanelObservation",
               "obs_time_min strictly increasing within subject",
               f"subject {o.subject_id!r}: {prev} then {o.obs_time_min}")
        last[o.subject_id] = o.obs_time_min


# ---------------------------------------------------------------------------
# Array datasets consumed by the engines
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountingProcessDataset:
    """Column-oriented (start, stop, event, x) rows on the distance axis."""

    subject: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    X: np.ndarray
    names: tuple
    event_index: Optional[np.ndarray] = None

    def __post_init__(self):
        name = "CountingProcessDataset"
        n = len(self.start)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1)
        object.__setattr__(self, "subject", np.asarray(self.subject).astype(str))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "stop", np.asarray(self.stop, dtype=float))
        object.__setattr__(self, "event", np.asarray(self.event, dtype=bool))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        if self.event_index is not None:
            object.__setattr__(self, "event_index", np.asarray(self.event_index, dtype=int))
        _check(len(self.subject) == n and len(self.stop) == n and len(self.event) == n
               and X.shape[0] == n, name, "columns have equal length")
        _check(X.shape[1] == len(self.names), name, "one name per covariate column",
               f"{X.shape[1]} columns, {len(self.names)} names")
        _check(bool(np.all(self.start < self.stop)), name, "start < stop on every row")
        _check(bool(np.all(np.isfinite(X))), name, "covariates finite")

    @property
    def n_rows(self) -> int:
        return len(self.start)

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def n_subjects(self) -> int:
        return len(np.unique(self.subject))

    def with_columns(self, X, names) -> "CountingProcessDataset":
        return dataclasses.replace(self, X=X, names=tuple(names))

    def take(self, idx) -> "CountingProcessDataset":
        return CountingProcessDataset(
            self.subject[idx], self.start[idx], self.stop[idx], self.event[idx],
            self.X[idx], self.names,
            None if self.event_index is None else self.event_index[idx],
        )

    @classmethod
    def from_rows(cls, rows, names) -> "CountingProcessDataset":
        rows = list(rows)
        p = len(names)
        X = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), p)
        return cls(
            subject=np.array([r.subject_id for r in rows], dtype=str),
            start=np.array([r.start_km for r in rows], dtype=float),
            stop=np.array([r.stop_km for r in rows], dtype=float),
            event=np.array([r.event for r in rows], dtype=bool),
            X=X,
            names=names,
            event_index=np.array([r.event_index for r in rows], dtype=int),
        )

    def to_rows(self) -> list:
        idx = self.event_index if self.event_index is not None else np.ones(self.n_rows, int)
        return [CountingProcessRow(str(s), int(j), float(a), float(b), bool(e), tuple(x))
                for s, j, a, b, e, x in zip(self.subject, idx, self.start, self.stop,
                                            self.event, self.X)]


@dataclass(frozen=True, eq=False)
class PanelStateDataset:
    """Per-subject state snapshots; states are 1-based labels."""

    subject: np.ndarray
    time: np.ndarray
    state: np.ndarray
    X: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        n = len(self.time)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1)
        object.__setattr__(self, "subject", np.asarray(self.subject).astype(str))
        object.__setattr__(self, "time", np.asarray(self.time, dtype=float))
        object.__setattr__(self, "state", np.asarray(self.state, dtype=int))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        name = "PanelStateDataset"
        _check(len(self.subject) == n and len(self.state) == n and X.shape[0] == n,
               name, "columns have equal length")
        _check(X.shape[1] == len(self.names), name, "one name per covariate column")
        _check(bool(np.all(self.state >= 1)), name, "states are positive labels")
        same = self.subject[1:] == self.subject[:-1]
        _check(bool(np.all(np.diff(self.time)[same] > 0)), name,
               "observation times strictly increasing within subject")

    @property
    def n_obs(self) -> int:
        return len(self.time)

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    def pairs(self):
        """Indices (i, i+1) of consecutive observations of the same subject."""
        left = np.flatnonzero(self.subject[1:] == self.subject[:-1])
        return left, left + 1

    @classmethod
    def from_observations(cls, observations, names, time_scale=1.0 / 60.0):
        """Build from ``PanelObservation`` records; minutes are scaled to hours."""
        obs = list(observations)
        check_panel_sequence(obs)
        p = len(names)
        return cls(
            subject=np.array([o.subject_id for o in obs], dtype=str),
            time=np.array([o.obs_time_min for o in obs], dtype=float) * time_scale,
            state=np.array([o.state for o in obs], dtype=int),
            X=np.array([o.covariates for o in obs], dtype=float).reshape(len(obs), p),
            names=names,
        )


# ---------------------------------------------------------------------------
# Fit results
# ---------------------------------------------------------------------------


def _as_matrix(a, p):
    return np.asarray(a, dtype=float).reshape(p, p)


@dataclass(frozen=True, eq=False)
class CoxFit:
    beta: np.ndarray
    names: tuple
    model_covariance: np.ndarray
    robust_covariance: np.ndarray
    loglik_at_start: float
    loglik_at_end: float
    n_events: int
    n_subjects: int
    converged: bool
    n_iterations: int
    ties: str = "efron"
    heaviside: tuple = ()

    def __post_init__(self):
        name = "CoxFit"
        beta = np.asarray(self.beta, dtype=float).ravel()
        p = beta.size
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "heaviside", tuple(self.heaviside))
        _check(len(self.names) == p, name, "one name per coefficient")
        for attr in ("model_covariance", "robust_covariance"):
            m = _as_matrix(getattr(self, attr), p)
            _check(bool(np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max()))),
                   name, f"{attr} symmetric within 1e-12")
            object.__setattr__(self, attr, 0.5 * (m + m.T))
        _check(self.loglik_at_end >= self.loglik_at_start - 1e-9 * abs(self.loglik_at_start),
               name, "loglik_at_end >= loglik_at_start",
               f"{self.loglik_at_end} < {self.loglik_at_start}")
        _check(self.ties in ("efron", "breslow"), name, "ties in {efron, breslow}")

    @property
    def model_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.model_covariance))

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.robust_covariance))

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "names": list(self.names),
            "model_covariance": self.model_covariance.tolist(),
            "robust_covariance": self.robust_covariance.tolist(),
            "loglik_at_start": self.loglik_at_start,
            "loglik_at_end": self.loglik_at_end,
            "n_events": self.n_events,
            "n_subjects": self.n_subjects,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "ties": self.ties,
            "heaviside": [list(h) for h in self.heaviside],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxFit":
        return cls(
            beta=np.array(d["beta"], dtype=float),
            names=tuple(d["names"]),
            model_covariance=np.array(d["model_covariance"], dtype=float),
            robust_covariance=np.array(d["robust_covariance"], dtype=float),
            loglik_at_start=float(d["loglik_at_start"]),
            loglik_at_end=float(d["loglik_at_end"]),
            n_events=int(d["n_events"]),
            n_subjects=int(d["n_subjects"]),
            converged=bool(d["converged"]),
            n_iterations=int(d["n_iterations"]),
            ties=d.get("ties", "efron"),
            heaviside=tuple((str(a), float(b)) for a, b in d.get("heaviside", ())),
        )


@dataclass(frozen=True, eq=False)
class MsmFit:
    """Fitted homogeneous Markov chain with proportional intensities.

    ``transitions`` are 0-based (r, s) pairs; ``beta_rs`` maps each to its
    coefficient vector over ``covariate_names[(r, s)]``.  ``params`` is the
    estimation-scale vector (log baseline intensities, then coefficients) that
    ``covariance`` refers to; it is ``None`` when the observed information
    was not positive definite.
    """

    n_states: int
    transitions: tuple
    q0: np.ndarray
    beta_rs: dict
    covariate_names: dict
    params: np.ndarray
    param_names: tuple
    covariance: Optional[np.ndarray]
    loglik: float
    converged: bool
    n_iterations: int = 0
    grad_norm: float = float("nan")

    def __post_init__(self):
        name = "MsmFit"
        q0 = np.asarray(self.q0, dtype=float)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "transitions", tuple(tuple(int(v) for v in t)
                                                      for t in self.transitions))
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        object.__setattr__(self, "param_names", tuple(self.param_names))
        _check(q0.shape == (self.n_states, self.n_states), name, "q0 is n_states x n_states")
        _check(bool(np.all(np.abs(q0.sum(axis=1)) <= 1e-10)), name,
               "every row of q0 sums to 0 within 1e-10")
        off = q0[~np.eye(self.n_states, dtype=bool)]
        _check(bool(np.all(off >= 0)), name, "off-diagonal entries of q0 >= 0")
        _check(bool(np.all(np.diag(q0) <= 0)), name, "diagonal entries of q0 <= 0")
        if self.covariance is not None:
            cov = _as_matrix(self.covariance, self.params.size)
            object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))

    def to_dict(self) -> dict:
        key = lambda t: f"{t[0] + 1}-{t[1] + 1}"  # noqa: E731
        return {
            "n_states": self.n_states,
            "transitions": [list(t) for t in self.transitions],
            "q0": self.q0.tolist(),
            "beta_rs": {key(t): np.asarray(self.beta_rs[t]).tolist() for t in self.transitions},
            "covariate_names": {key(t): list(self.covariate_names[t]) for t in self.transitions},
            "params": self.params.tolist(),
            "param_names": list(self.param_names),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MsmFit":
        transitions = tuple(tuple(t) for t in d["transitions"])
        key = lambda t: f"{t[0] + 1}-{t[1] + 1}"  # noqa: E731
        cov = d.get("covariance")
        return cls(
            n_states=int(d["n_states"]),
            transitions=transitions,
            q0=np.array(d["q0"], dtype=float),
            beta_rs={t: np.array(d["beta_rs"][key(t)], dtype=float) for t in transitions},
            covariate_names={t: tuple(d["covariate_names"][key(t)]) for t in transitions},
            params=np.array(d["params"], dtype=float),
            param_names=tuple(d["param_names"]),
            covariance=None if cov is None else np.array(cov, dtype=float),
            loglik=float(d["loglik"]),
            converged=bool(d["converged"]),
            n_iterations=int(d.get("n_iterations", 0)),
            grad_norm=float(d.get("grad_norm", float("nan"))),
        )
