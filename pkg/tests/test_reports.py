import json
import math

import numpy as np

from raildelay import reports
from raildelay.domain import CoxFit


def test_fmt6_significant_digits():
    assert reports.fmt6(1.0253093) == "1.02531"
    assert reports.fmt6(123456789.0) == "1.23457e+08"
    assert reports.fmt6(np.int64(7)) == "7"
    assert reports.fmt6(float("nan")) == "NA"
    assert reports.fmt6(None) == "NA"


def test_text_table_alignment():
    out = reports.text_table(["Predictor", "HR"], [["temp", 0.8270], ["snow depth", 1.0253]])
    lines = out.splitlines()
    assert lines[0].startswith("Predictor ")
    assert set(lines[1].replace(" ", "")) == {"-"}
    # numbers right-aligned to the same column
    assert len(lines[2]) == len(lines[3])
    assert lines[3].startswith("snow depth")


def test_json_nan_becomes_null_and_keeps_precision():
    x = 0.1 + 0.2
    data = json.loads(reports.dumps({"a": float("nan"), "b": np.float64(x),
                                     "c": np.arange(2), "d": (np.bool_(True),)}))
    assert data == {"a": None, "b": x, "c": [0, 1], "d": [True]}


def test_cox_report_lists_every_predictor():
    cov = np.diag([0.055, 0.0081]) ** 2
    fit = CoxFit([-0.19, 0.025], ("temp", "snow"), cov, cov, -10.0, -9.0, 10, 5, True, 3)
    text, data = reports.cox_report(fit)
    assert "temp" in text and "snow" in text
    assert data["kind"] == "cox"
    hr = [e["hazard_ratio"] for e in data["effects"]]
    assert math.isclose(hr[0], math.exp(-0.19))
