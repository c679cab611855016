import filecmp
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from raildelay import cli


@pytest.fixture
def cli_data(data_dir):
    return data_dir / "cli"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _prepare_args(data_dir, out_dir, **over):
    d = data_dir / "pipeline"
    files = {"trips": d / "trips.csv", "spots": d / "spots.csv", "weather": d / "weather.csv"}
    files.update(over)
    return ["prepare", "--trips", files["trips"], "--spots", files["spots"],
            "--weather", files["weather"], "--out-dir", out_dir]


def test_prepare_matches_golden(data_dir, tmp_path, capsys):
    code, out, _ = run(_prepare_args(data_dir, tmp_path / "o"), capsys)
    assert code == 0
    assert "imputed times: 4" in out
    golden = data_dir / "pipeline" / "golden"
    for name in ("counting_process.csv", "panel.csv", "trips_imputed.csv", "imputation_log.csv"):
        assert filecmp.cmp(tmp_path / "o" / name, golden / name, shallow=False), name


def test_prepare_empty_trip_file(data_dir, tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text((data_dir / "pipeline" / "trips.csv").read_text().splitlines()[0] + "\n")
    code, _, err = run(_prepare_args(data_dir, tmp_path / "o", trips=empty), capsys)
    assert code == cli.EXIT_DATA
    assert "no trips" in err


def test_prepare_missing_weather_hour(data_dir, tmp_path, capsys):
    lines = (data_dir / "pipeline" / "weather.csv").read_text().splitlines()
    kept = [ln for ln in lines if "2017-01-15 09:00" not in ln]
    w = tmp_path / "w.csv"
    w.write_text("\n".join(kept) + "\n")
    code, _, err = run(_prepare_args(data_dir, tmp_path / "o", weather=w), capsys)
    assert code == cli.EXIT_DATA
    assert "trip 101_2017-01-15" in err and "spot 'D'" in err and "2017-01-15 09:00" in err


def test_prepare_config_and_flag_precedence(data_dir, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("delay_threshold_min = 100\nlayout = section\n")
    code, _, _ = run(_prepare_args(data_dir, tmp_path / "a") + ["--config", cfg], capsys)
    assert code == 0
    panel = (tmp_path / "a" / "panel.csv").read_text().splitlines()[1:]
    assert all(line.split(",")[2] == "1" for line in panel)
    rows = (tmp_path / "a" / "counting_process.csv").read_text().splitlines()[1:]
    assert len(rows) == 8  # one row per section
    code, _, _ = run(_prepare_args(data_dir, tmp_path / "b")
                     + ["--config", cfg, "--delay-threshold-min", "5"], capsys)
    panel = (tmp_path / "b" / "panel.csv").read_text().splitlines()[1:]
    assert any(line.split(",")[2] == "2" for line in panel)
    cfg.write_text("bogus = 1\n")
    code, _, err = run(_prepare_args(data_dir, tmp_path / "c") + ["--config", cfg], capsys)
    assert code == cli.EXIT_USAGE and "unknown option" in err


def test_fit_cox_recovers_fixture(cli_data, tmp_path, capsys):
    meta = json.loads((cli_data / "cox_ph.meta.json").read_text())
    code, out, _ = run(["fit-cox", cli_data / "cox_ph.csv", "--json", tmp_path / "r.json"], capsys)
    assert code == 0 and "Hazard ratio" in out
    rep = json.loads((tmp_path / "r.json").read_text())
    for row, b in zip(rep["effects"], meta["beta"]):
        assert abs(row["coef"] - b) < 3 * row["robust_se"]


def test_fit_cox_ties_agree_on_tie_free_data(cli_data, tmp_path, capsys):
    reps = []
    for ties in ("efron", "breslow"):
        run(["fit-cox", cli_data / "cox_ph.csv", "--ties", ties, "--json", tmp_path / "r.json"],
            capsys)
        reps.append(json.loads((tmp_path / "r.json").read_text())["effects"])
    for a, b in zip(*reps):
        for key in ("coef", "robust_se", "p"):
            assert a[key] == pytest.approx(b[key], rel=1e-10, abs=1e-12)


def test_fit_cox_bad_heaviside_flag(cli_data, capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["fit-cox", str(cli_data / "cox_ph.csv"), "--heaviside", "x1"])
    assert err.value.code == cli.EXIT_USAGE
    assert "expected NAME:KM" in capsys.readouterr().err
    code, _, err = run(["fit-cox", cli_data / "cox_ph.csv", "--heaviside", "temp:150"], capsys)
    assert code == cli.EXIT_USAGE and "unknown covariate 'temp'" in err


def test_test_ph_fixtures(cli_data, tmp_path, capsys):
    for name in ("cox_ph", "cox_nonph"):
        run(["fit-cox", cli_data / f"{name}.csv", "--fit-out", tmp_path / f"{name}.json"], capsys)
    code, out, _ = run(["test-ph", cli_data / "cox_ph.csv", tmp_path / "cox_ph.json",
                        "--json", tmp_path / "ph.json"], capsys)
    assert code == 0 and "GLOBAL" in out
    rep = json.loads((tmp_path / "ph.json").read_text())
    assert all(r["p"] > 0.05 for r in rep["rows"]) and rep["global"]["p"] > 0.05
    code, out, _ = run(["test-ph", cli_data / "cox_nonph.csv", tmp_path / "cox_nonph.json",
                        "--json", tmp_path / "nph.json", "--suggest-changepoints"], capsys)
    rep = json.loads((tmp_path / "nph.json").read_text())
    assert rep["rows"][0]["p"] < 0.01
    assert 40 <= rep["changepoints"]["x1"]["km"] <= 80


def test_test_ph_with_heaviside_fit(cli_data, tmp_path, capsys):
    run(["fit-cox", cli_data / "cox_nonph.csv", "--heaviside", "x1:60",
         "--fit-out", tmp_path / "f.json"], capsys)
    code, out, _ = run(["test-ph", cli_data / "cox_nonph.csv", tmp_path / "f.json",
                        "--json", tmp_path / "ph.json"], capsys)
    assert code == 0
    rows = {r["predictor"]: r for r in json.loads((tmp_path / "ph.json").read_text())["rows"]}
    assert rows["x1"]["p"] > 0.05 and "x1:gt60" in rows


def test_test_ph_mismatch(cli_data, tmp_path, capsys):
    run(["fit-cox", cli_data / "cox_ph.csv", "--fit-out", tmp_path / "f.json"], capsys)
    narrow = tmp_path / "narrow.csv"
    lines = (cli_data / "cox_ph.csv").read_text().splitlines()
    narrow.write_text("\n".join(",".join(ln.split(",")[:6]) for ln in lines) + "\n")
    code, _, err = run(["test-ph", narrow, tmp_path / "f.json"], capsys)
    assert code == cli.EXIT_MODEL and "2 coefficients" in err


def test_fit_msm_fixture(cli_data, tmp_path, capsys):
    meta = json.loads((cli_data / "panel.meta.json").read_text())
    code, out, _ = run(["fit-msm", cli_data / "panel.csv", "--json", tmp_path / "m.json"], capsys)
    assert code == 0 and "state 1 -> 2" in out
    rep = json.loads((tmp_path / "m.json").read_text())
    for key, b in (("1-2", meta["beta12"][0]), ("2-1", meta["beta21"][0])):
        (row,) = rep["hazard_ratios"][key]
        assert abs(row["coef"] - b) < 3 * row["se"]
        assert row["ci_lower"] < row["hazard_ratio"] < row["ci_upper"]
    q = np.array(rep["fit"]["q0"])
    assert abs(math.log(q[0, 1] / meta["q"][0])) < 3 * rep["fit"]["covariance"][0][0] ** 0.5


def test_fit_msm_errors(tmp_path, capsys):
    p = tmp_path / "p.csv"
    p.write_text("subject_id,obs_time_min,state,x\na,0,1,0\na,30,2,1\na,60,2,0\n")
    code, _, err = run(["fit-msm", p], capsys)
    assert code == cli.EXIT_MODEL and "never observed" in err and "2->1" in err
    p.write_text("subject_id,obs_time_min,state,x\na,0,1,0\na,30,2,1\na,60,3,0\n")
    code, _, err = run(["fit-msm", p, "--states", "2"], capsys)
    assert code == cli.EXIT_USAGE and "[1, 2, 3]" in err


def test_simulate_requires_seed(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["simulate", "cox", "--out", str(tmp_path / "x.csv")])
    assert err.value.code == 2
    assert "--seed" in capsys.readouterr().err


def test_commands_are_deterministic(cli_data, tmp_path, capsys):
    for k in range(2):
        run(["simulate", "msm", "--seed", 3, "--subjects", 50, "--out", tmp_path / f"s{k}.csv"],
            capsys)
        run(["fit-msm", tmp_path / f"s{k}.csv", "--json", tmp_path / f"m{k}.json"], capsys)
        run(["fit-cox", cli_data / "cox_ph.csv", "--json", tmp_path / f"c{k}.json"], capsys)
    for stem in ("s", "m", "c"):
        suffix = ".csv" if stem == "s" else ".json"
        assert filecmp.cmp(tmp_path / f"{stem}0{suffix}", tmp_path / f"{stem}1{suffix}",
                           shallow=False)


def test_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "raildelay.cli", "simulate", "cox", "--seed", "1",
                           "--subjects", "20", "--out", str(tmp_path / "x.csv")],
                          capture_output=True, text=True, env={"RAILDELAY_LOG_LEVEL": "ERROR",
                                                               "PATH": "/usr/bin:/bin"})
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "x.csv").read_text().startswith("subject_id,event_index,start_km")
