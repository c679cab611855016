"""Plain-text tables (6 significant digits) and full-precision JSON reports."""
from __future__ import annotations

import json
import math

import numpy as np

from .cox import hazard_ratios, interval_effects
from .diagnostics import PHTestResult
from .domain import CoxFit, MsmFit
from .markov import transition_hazard_ratios


def fmt6(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    return f"{x:.6g}"


def text_table(headers, rows) -> str:
    """Left-aligned first column, right-aligned numbers."""
    cells = [[str(h) for h in headers]]
    for r in rows:
        cells.append([r[0]] + [c if isinstance(c, str) else fmt6(c) for c in r[1:]])
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(obj))


def cox_report(fit: CoxFit):
    rows = interval_effects(fit) if fit.heaviside else hazard_ratios(fit)
    body = text_table(
        ["Predictor", "Coefficient", "Hazard ratio", "Robust SE", "z", "p"],
        [[r.predictor, r.coef, r.hazard_ratio, r.robust_se, r.z, r.p] for r in rows])
    head = (f"Cox model ({fit.ties} ties): {fit.n_events} events, {fit.n_subjects} subjects, "
            f"{fit.n_iterations} iterations, converged={fit.converged}\n"
            f"log partial likelihood: {fmt6(fit.loglik_at_start)} -> "
            f"{fmt6(fit.loglik_at_end)}")
    data = {"kind": "cox", "fit": fit.to_dict(), "effects": [r.to_dict() for r in rows]}
    if fit.heaviside:
        data["coefficients"] = [r.to_dict() for r in hazard_ratios(fit)]
    return head + "\n\n" + body + "\n", data


def ph_report(result: PHTestResult, suggestions=None):
    rows = [[r.predictor, r.rho, r.chisq, r.df, r.p] for r in result.rows]
    g = result.global_row
    rows.append(["GLOBAL", "", g.chisq, g.df, g.p])
    body = text_table(["Predictor", "rho", "chisq", "df", "p"], rows)
    notes = [f"note: {r.predictor}: {r.note}" for r in result.rows if r.note]
    if g.note:
        notes.append(f"note: GLOBAL: {g.note}")
    head = f"Proportional hazards test ({result.transform} time, {result.n_events} events)"
    text = head + "\n\n" + body + "\n"
    if notes:
        text += "\n" + "\n".join(notes) + "\n"
    data = {"kind": "ph_test", **result.to_dict()}
    if suggestions:
        lines = []
        for name, s in suggestions.items():
            if s.km is None:
                lines.append(f"{name}: no changepoint candidate")
            else:
                flag = " (below threshold)" if s.below_threshold else ""
                lines.append(f"{name}: {fmt6(s.km)} km, statistic {fmt6(s.statistic)}{flag}")
        text += "\nSuggested changepoints (advisory)\n" + "\n".join(lines) + "\n"
        data["changepoints"] = {k: v.to_dict() for k, v in suggestions.items()}
    return text, data


def msm_report(fit: MsmFit):
    tables = transition_hazard_ratios(fit)
    parts = [f"Markov model: {fit.n_states} states, loglik {fmt6(fit.loglik)}, "
             f"converged={fit.converged}, gradient norm {fmt6(fit.grad_norm)}"]
    q = text_table(["Transition", "q0"],
                   [[f"{r + 1} -> {s + 1}", fit.q0[r, s]] for r, s in fit.transitions])
    parts.append("Baseline intensities (per hour)\n" + q)
    out_tables = {}
    for (a, b), rows in tables.items():
        t = text_table(["Predictor", "Hazard ratio", "CI lower", "CI upper"],
                       [[r.predictor, r.hazard_ratio, r.ci_lower, r.ci_upper] for r in rows])
        flagged = [f"note: {r.predictor}: {r.note}" for r in rows if r.flagged]
        parts.append(f"Hazard ratios, state {a} -> {b}\n" + t
                     + ("\n" + "\n".join(flagged) if flagged else ""))
        out_tables[f"{a}-{b}"] = [r.to_dict() for r in rows]
    data = {"kind": "msm", "fit": fit.to_dict(), "hazard_ratios": out_tables}
    return "\n\n".join(parts) + "\n", data
