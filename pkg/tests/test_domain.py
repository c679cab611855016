import datetime as dt
import json

import numpy as np
import pytest

from raildelay.domain import (CountingProcessDataset, CountingProcessRow, CoxFit,
                              InvariantError, MsmFit, PanelObservation, PanelStateDataset,
                              SectionCovariates, SpotObservation, TripRecord, WeatherSample,
                              check_panel_sequence)

T = dt.datetime(2017, 1, 15, 8, 0)
M = dt.timedelta(minutes=1)


def _trip(actual=True):
    a = SpotObservation("A", 0, 0.0, None, T, None, T if actual else None)
    b = SpotObservation("B", 1, 10.0, T + 10 * M, T + 12 * M, T + 11 * M, None, 10.0)
    c = SpotObservation("C", 2, 25.0, T + 25 * M, None, None, None, 15.0)
    return TripRecord("101", T.date(), "high speed", (a, b, c))


def _roundtrip(obj):
    return type(obj).from_dict(json.loads(json.dumps(obj.to_dict())))


def test_trip_roundtrip_and_ids():
    trip = _trip()
    back = _roundtrip(trip)
    assert back == trip
    assert trip.trip_id == "101_2017-01-15"
    assert trip.end_km == 25.0
    assert trip.has_missing()


def test_spot_invariants():
    with pytest.raises(InvariantError, match="planned times are never missing"):
        SpotObservation("A", 0, 0.0, None, None)
    with pytest.raises(InvariantError, match="section_km"):
        SpotObservation("B", 1, 5.0, T, T, section_km=0.0)
    with pytest.raises(InvariantError, match="minute resolution"):
        SpotObservation("A", 0, 0.0, None, T.replace(second=5))
    with pytest.raises(InvariantError, match="requires a planned arrival"):
        SpotObservation("A", 0, 0.0, None, T, actual_arrival=T)


def test_trip_invariants():
    trip = _trip()
    s = list(trip.spots)
    with pytest.raises(InvariantError, match="at least 2 spots"):
        TripRecord("1", T.date(), "x", s[:1])
    with pytest.raises(InvariantError, match="strictly increasing"):
        TripRecord("1", T.date(), "x", [s[0], s[2], s[1]])
    mid = SpotObservation("B", 1, 10.0, T + 10 * M, None, section_km=10.0)
    with pytest.raises(InvariantError, match="planned departure"):
        TripRecord("1", T.date(), "x", [s[0], mid, s[2]])


def test_weather_and_section_covariates():
    w = WeatherSample(63.8, 20.2, T, -5.0, 80.0, 0.3, 0.0)
    assert _roundtrip(w) == w
    with pytest.raises(InvariantError, match="on the hour"):
        WeatherSample(63.8, 20.2, T + M, -5.0, 80.0, 0.3, 0.0)
    with pytest.raises(InvariantError, match="humidity"):
        WeatherSample(63.8, 20.2, T, -5.0, 101.0, 0.3, 0.0)
    c = SectionCovariates(-4.0, 81.0, 0.2, 1, 0.2)
    assert _roundtrip(c) == c
    np.testing.assert_array_equal(c.as_vector(), [-4.0, 81.0, 0.2, 1.0])
    with pytest.raises(InvariantError, match="icing_flag = 0 iff"):
        SectionCovariates(-4.0, 81.0, 0.2, 0, 0.2)


def test_rows_and_panel_sequence():
    r = CountingProcessRow("s", 1, 0.0, 30.0, True, (1, 2))
    assert _roundtrip(r) == r
    with pytest.raises(InvariantError):
        CountingProcessRow("s", 1, 30.0, 30.0, False, ())
    with pytest.raises(InvariantError):
        CountingProcessRow("s", 0, 0.0, 1.0, False, ())
    o = PanelObservation("s", 10, 2, (0.5,))
    assert _roundtrip(o) == o
    with pytest.raises(InvariantError):
        PanelObservation("s", 10, 3, ())
    with pytest.raises(InvariantError, match="strictly increasing"):
        check_panel_sequence([o, PanelObservation("s", 10, 1, (0.0,))])


def test_counting_dataset_rows_roundtrip():
    rows = [CountingProcessRow("a", 1, 0.0, 30.0, True, (1.0,)),
            CountingProcessRow("a", 2, 30.0, 50.0, False, (2.0,))]
    ds = CountingProcessDataset.from_rows(rows, ("x",))
    assert ds.n_rows == 2 and ds.n_events == 1 and ds.n_subjects == 1
    assert ds.to_rows() == rows
    with pytest.raises(InvariantError, match="one name per covariate"):
        CountingProcessDataset(["a"], [0.0], [1.0], [True], [[1.0, 2.0]], ("x",))
    with pytest.raises(InvariantError, match="start < stop"):
        CountingProcessDataset(["a"], [1.0], [1.0], [True], [[1.0]], ("x",))


def test_panel_dataset():
    obs = [PanelObservation("a", 0, 1, (1.0,)), PanelObservation("a", 30, 2, (0.0,)),
           PanelObservation("b", 10, 1, (1.0,))]
    ds = PanelStateDataset.from_observations(obs, ("x",))
    np.testing.assert_allclose(ds.time, [0.0, 0.5, 1 / 6])
    left, right = ds.pairs()
    assert left.tolist() == [0] and right.tolist() == [1]
    with pytest.raises(InvariantError):
        PanelStateDataset(["a", "a"], [1.0, 1.0], [1, 1], [[0.0], [0.0]], ("x",))


def test_cox_fit_roundtrip_and_checks():
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    fit = CoxFit(np.array([0.5, -0.3]), ("a", "b"), cov, 2 * cov, -100.0, -90.0, 50, 20,
                 True, 4, "efron", (("a", 150.0),))
    back = _roundtrip(fit)
    np.testing.assert_array_equal(back.beta, fit.beta)
    np.testing.assert_array_equal(back.robust_covariance, fit.robust_covariance)
    assert back.heaviside == (("a", 150.0),)
    np.testing.assert_allclose(fit.model_se, [0.2, 0.3])
    bad = cov.copy()
    bad[0, 1] += 1e-6
    with pytest.raises(InvariantError, match="symmetric"):
        CoxFit(fit.beta, fit.names, bad, cov, -100.0, -90.0, 50, 20, True, 4)
    with pytest.raises(InvariantError, match="loglik_at_end"):
        CoxFit(fit.beta, fit.names, cov, cov, -90.0, -100.0, 50, 20, True, 4)


def test_msm_fit_roundtrip_and_checks():
    q0 = np.array([[-0.3, 0.3], [0.5, -0.5]])
    fit = MsmFit(2, ((0, 1), (1, 0)), q0, {(0, 1): np.array([0.4]), (1, 0): np.array([-0.2])},
                 {(0, 1): ("x",), (1, 0): ("x",)}, np.log([0.3, 0.5]).tolist() + [0.4, -0.2],
                 ("log q12", "log q21", "beta12[x]", "beta21[x]"), np.eye(4) * 0.01, -10.0, True)
    back = _roundtrip(fit)
    np.testing.assert_array_equal(back.q0, q0)
    assert back.beta_rs[(1, 0)].tolist() == [-0.2]
    np.testing.assert_allclose(back.se, 0.1)
    with pytest.raises(InvariantError, match="sums to 0"):
        MsmFit(2, ((0, 1),), np.array([[-0.3, 0.2], [0.0, 0.0]]), {}, {}, [], (), None, 0.0, True)
