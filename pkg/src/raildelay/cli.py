"""Command-line front end: ``raildelay {prepare,fit-cox,test-ph,fit-msm,simulate}``.

Options may also come from a ``key = value`` config file (``--config``);
flags given on the command line win.  ``RAILDELAY_LOG_LEVEL`` sets log
verbosity.  Exit codes: 0 success, 2 usage, 3 input data, 4 estimation.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cox, diagnostics, markov, pipeline, reports, simulate
from .domain import CoxFit, InvariantError

log = logging.getLogger("raildelay")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4

# Built-in defaults for options that may also come from a config file.
DEFAULTS = {
    "prepare": {"event_threshold_min": 1, "delay_threshold_min": 5, "layout": "event"},
    "fit-cox": {"ties": "efron", "max_iter": 25},
    "test-ph": {"transform": "identity"},
    "fit-msm": {"states": 2, "grad_tol": 1e-6},
    "simulate": {"subjects": 500},
}


class UsageError(Exception):
    pass


def _heaviside_flag(text):
    name, sep, km = text.rpartition(":")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME:KM, got {text!r}")
    try:
        t0 = float(km)
    except ValueError:
        raise argparse.ArgumentTypeError(f"changepoint km must be a number in {text!r}") from None
    if not t0 > 0:
        raise argparse.ArgumentTypeError(f"changepoint km must be positive in {text!r}")
    return name, t0


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raildelay", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file supplying option defaults")
        sp.add_argument("--json", dest="json_out", help="write the structured report here")
        return sp

    sp = common(sub.add_parser("prepare", help="raw trips + weather -> model datasets"))
    sp.add_argument("--trips", required=True)
    sp.add_argument("--spots", required=True)
    sp.add_argument("--weather", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--event-threshold-min", type=int)
    sp.add_argument("--delay-threshold-min", type=int)
    sp.add_argument("--layout", choices=("event", "section"))

    sp = common(sub.add_parser("fit-cox", help="fit the recurrent-event Cox model"))
    sp.add_argument("dataset")
    sp.add_argument("--heaviside", action="append", type=_heaviside_flag, default=[],
                    metavar="NAME:KM", help="split covariate NAME at KM (repeatable)")
    sp.add_argument("--ties", choices=("efron", "breslow"))
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--fit-out", help="write the fit (input for test-ph) here")

    sp = common(sub.add_parser("test-ph", help="proportional hazards test for a saved fit"))
    sp.add_argument("dataset")
    sp.add_argument("fit")
    sp.add_argument("--transform", choices=("identity", "rank"))
    sp.add_argument("--suggest-changepoints", action="store_true")
    sp.add_argument("--residuals-out", help="write Schoenfeld residuals as CSV")

    sp = common(sub.add_parser("fit-msm", help="fit the panel Markov model"))
    sp.add_argument("panel")
    sp.add_argument("--states", type=int)
    sp.add_argument("--grad-tol", type=float)

    sp = common(sub.add_parser("simulate", help="write a seeded synthetic dataset"))
    sp.add_argument("model", choices=("cox", "msm"))
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--subjects", type=int)
    sp.add_argument("--beta", type=_floats, help="cox: coefficients, e.g. 0.5,-0.3")
    sp.add_argument("--reversal-km", type=float, help="cox: flip effects beyond this km")
    sp.add_argument("--obs", type=int, default=None, help="msm: observations per subject")
    sp.add_argument("--q", type=_floats, help="msm: q12,q21 baseline intensities")
    sp.add_argument("--beta12", type=_floats)
    sp.add_argument("--beta21", type=_floats)
    return p


def _apply_config(args, parser):
    """Fill options left unset on the command line from the config file, then defaults."""
    defaults = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        cp = configparser.ConfigParser()
        cp.read_string("[raildelay]\n" + text)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        types = {a.dest: a.type for a in sub._actions}
        appends = {a.dest for a in sub._actions if isinstance(a, argparse._AppendAction)}
        for key, raw in cp["raildelay"].items():
            dest = key.replace("-", "_")
            if dest not in types or dest in ("config", "help"):
                raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
            conv = types[dest] or str
            try:
                value = conv(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise UsageError(f"{args.config}: bad value for {key!r}: {e}") from None
            if dest in appends:
                if not getattr(args, dest):
                    setattr(args, dest, [value])
            elif getattr(args, dest, None) is None:
                setattr(args, dest, value)
    for dest, value in defaults.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)


def _emit(text, data, args):
    sys.stdout.write(text)
    if args.json_out:
        reports.write_json(args.json_out, data)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(args):
    trips = pipeline.read_trips(args.trips)
    coords = pipeline.read_spots(args.spots)
    weather = pipeline.read_weather(args.weather)
    data = pipeline.prepare(trips, coords, weather, args.event_threshold_min,
                            args.delay_threshold_min, args.layout)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "counting_process": out / "counting_process.csv",
        "panel": out / "panel.csv",
        "trips_imputed": out / "trips_imputed.csv",
        "imputation_log": out / "imputation_log.csv",
    }
    pipeline.write_counting_process(files["counting_process"], data.cp_rows, data.names)
    pipeline.write_panel(files["panel"], data.panel_obs, data.names)
    pipeline.write_trips(files["trips_imputed"], data.trips)
    pipeline.write_imputation_log(files["imputation_log"], data.imputation_log, data.dropped)
    n_events = sum(r.event for r in data.cp_rows)
    text = (f"trips kept: {len(data.trips)}, dropped: {len(data.dropped)}, "
            f"imputed times: {len(data.imputation_log)}\n"
            f"counting-process rows: {len(data.cp_rows)} ({n_events} events), "
            f"panel observations: {len(data.panel_obs)}\n")
    _emit(text, {"kind": "prepare", "trips": len(data.trips), "dropped": len(data.dropped),
                 "imputed": len(data.imputation_log), "rows": len(data.cp_rows),
                 "events": n_events, "panel_obs": len(data.panel_obs),
                 "files": {k: str(v) for k, v in files.items()}}, args)


def _specs_for(dataset, heaviside):
    specs = []
    for name, t0 in heaviside:
        if name not in dataset.names:
            raise UsageError(f"--heaviside: unknown covariate {name!r}; "
                             f"dataset has {list(dataset.names)}")
        specs.append(cox.HeavisideSpec(dataset.names.index(name), t0))
    return specs


def cmd_fit_cox(args):
    ds = pipeline.read_counting_process(args.dataset)
    specs = _specs_for(ds, args.heaviside)
    fit, _ = cox.fit_with_heaviside(ds, specs, ties=args.ties, max_iter=args.max_iter)
    text, data = reports.cox_report(fit)
    if args.fit_out:
        reports.write_json(args.fit_out, fit.to_dict())
    _emit(text, data, args)


def _load_fit(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if "fit" in d and d.get("kind") == "cox":
        d = d["fit"]
    try:
        return CoxFit.from_dict(d)
    except (KeyError, TypeError) as e:
        raise pipeline.PipelineError(f"{path}: not a Cox fit file ({e})") from None


def cmd_test_ph(args):
    ds = pipeline.read_counting_process(args.dataset)
    fit = _load_fit(args.fit)
    specs = []
    for name, t0 in fit.heaviside:
        if name not in ds.names:
            raise diagnostics.DiagnosticsError(
                f"fit splits {name!r} but the dataset has no such column")
        specs.append(cox.HeavisideSpec(ds.names.index(name), t0))
    ds = cox.heaviside_expand(ds, specs)
    if ds.names != fit.names and ds.n_covariates == fit.beta.size:
        raise diagnostics.DiagnosticsError(
            f"dataset columns {list(ds.names)} do not match fit {list(fit.names)}")
    res = diagnostics.schoenfeld_residuals(ds, fit)
    result = diagnostics.ph_test(ds, fit, args.transform, residuals=res)
    suggestions = None
    if args.suggest_changepoints:
        suggestions = {}
        for j, name in enumerate(fit.names):
            suggestions[name] = diagnostics.suggest_changepoint(res.residuals[:, j], res.event_km)
    if args.residuals_out:
        with open(args.residuals_out, "w", encoding="utf-8") as f:
            f.write(",".join(["subject_id", "event_km", *res.names]) + "\n")
            for s, km, r in zip(res.subject, res.event_km, res.residuals):
                f.write(",".join([s, pipeline.fmt_float(km), *map(pipeline.fmt_float, r)]) + "\n")
    text, data = reports.ph_report(result, suggestions)
    _emit(text, data, args)


def cmd_fit_msm(args):
    panel = pipeline.read_panel(args.panel)
    labels = np.unique(panel.state)
    if labels.max() > args.states:
        raise UsageError(f"--states {args.states} but the panel has state labels "
                         f"{labels.tolist()}")
    spec = markov.IntensitySpec(n_states=args.states)
    fit = markov.fit_msm(panel, spec, grad_tol=args.grad_tol)
    text, data = reports.msm_report(fit)
    _emit(text, data, args)


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    meta = {"kind": "simulate", "model": args.model, "seed": args.seed,
            "subjects": args.subjects}
    if args.model == "cox":
        beta = args.beta if args.beta is not None else [0.5, -0.3]
        ds = simulate.simulate_recurrent_cox(rng, args.subjects, beta,
                                             reversal_km=args.reversal_km)
        pipeline.write_counting_dataset(args.out, ds)
        meta.update(beta=beta, reversal_km=args.reversal_km, rows=ds.n_rows,
                    events=ds.n_events)
        text = f"wrote {ds.n_rows} rows ({ds.n_events} events) to {args.out}\n"
    else:
        q = args.q if args.q is not None else [0.3, 0.5]
        b12 = args.beta12 if args.beta12 is not None else [0.4]
        b21 = args.beta21 if args.beta21 is not None else [-0.2]
        if len(q) != 2 or len(b12) != len(b21):
            raise UsageError("--q needs two values and --beta12/--beta21 equal lengths")
        q0 = np.array([[-q[0], q[0]], [q[1], -q[1]]])
        n_obs = args.obs if args.obs is not None else 20
        panel = simulate.simulate_ctmc_panel(rng, q0, {(0, 1): b12, (1, 0): b21},
                                             args.subjects, n_obs, kinds=("binary",) * len(b12))
        pipeline.write_panel_dataset(args.out, panel)
        meta.update(q=q, beta12=b12, beta21=b21, obs=n_obs, rows=panel.n_obs)
        text = f"wrote {panel.n_obs} observations to {args.out}\n"
    _emit(text, meta, args)


COMMANDS = {
    "prepare": cmd_prepare,
    "fit-cox": cmd_fit_cox,
    "test-ph": cmd_test_ph,
    "fit-msm": cmd_fit_msm,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    level = os.environ.get("RAILDELAY_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"raildelay {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.PipelineError, InvariantError, OSError) as e:
        print(f"raildelay {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (cox.CoxError, markov.MarkovError, diagnostics.DiagnosticsError, ValueError) as e:
        print(f"raildelay {args.command}: model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    return 0


if __name__ == "__main__":
    sys.exit(main())
