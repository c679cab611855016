"""Schoenfeld residuals and proportional-hazards checks for fitted Cox models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .cox import _Terms, separate_tied_subject_events
from .domain import CountingProcessDataset, CoxFit


class DiagnosticsError(ValueError):
    pass


class InsufficientEventsError(DiagnosticsError):
    pass


@dataclass(frozen=True, eq=False)
class SchoenfeldResiduals:
    """One row per event, ordered by event position."""

    event_km: np.ndarray
    subject: np.ndarray
    residuals: np.ndarray
    names: tuple

    @property
    def n_events(self):
        return self.event_km.size


def _check_match(dataset: CountingProcessDataset, fit: CoxFit):
    if dataset.n_covariates != fit.beta.size:
        raise DiagnosticsError(
            f"fit has {fit.beta.size} coefficients but dataset has "
            f"{dataset.n_covariates} covariate columns")


def schoenfeld_residuals(dataset: CountingProcessDataset, fit: CoxFit,
                         beta=None) -> SchoenfeldResiduals:
    """Observed covariates minus their risk-set expectation at each event.

    The expectation weights each at-risk row by ``exp(beta' x)`` normalised
    over the risk set; tied events share the Efron-averaged expectation when
    the fit used Efron ties.  ``beta`` overrides the fitted coefficients.
    """
    _check_match(dataset, fit)
    ds = separate_tied_subject_events(dataset)
    b = fit.beta if beta is None else np.asarray(beta, dtype=float)
    terms = _Terms(ds, b, fit.ties, need_info=False)
    return SchoenfeldResiduals(
        event_km=ds.stop[terms.ev].copy(),
        subject=ds.subject[terms.ev].copy(),
        residuals=terms.schoenfeld(ds.X),
        names=tuple(fit.names),
    )


@dataclass(frozen=True)
class PHTestRow:
    predictor: str
    rho: float
    chisq: float
    df: int
    p: float
    note: str = ""

    def to_dict(self):
        return {"predictor": self.predictor, "rho": self.rho, "chisq": self.chisq,
                "df": self.df, "p": self.p, "note": self.note}


@dataclass(frozen=True)
class PHTestResult:
    rows: tuple
    global_row: PHTestRow
    transform: str
    n_events: int

    def p_values(self) -> dict:
        return {r.predictor: r.p for r in self.rows}

    def to_dict(self):
        return {"transform": self.transform, "n_events": self.n_events,
                "rows": [r.to_dict() for r in self.rows],
                "global": self.global_row.to_dict()}


def _time_transform(km, transform):
    if transform == "identity":
        return km.astype(float)
    if transform == "rank":
        return stats.rankdata(km)
    raise ValueError(f"unknown time transform {transform!r}; use 'identity' or 'rank'")


def ph_test(dataset: CountingProcessDataset, fit: CoxFit, transform: str = "identity",
            residuals: Optional[SchoenfeldResiduals] = None) -> PHTestResult:
    """Score test of zero correlation between scaled Schoenfeld residuals and time.

    Per covariate ``j`` the statistic is
    ``(sum_k g_k s_kj)^2 / (d V_jj sum_k g_k^2)`` with ``g`` the centred
    (transformed) event positions, ``s = d r V`` the scaled residuals, ``V``
    the model covariance and ``d`` the number of events; it is chi-squared
    with one degree of freedom.  The global statistic is the quadratic form
    ``d (g'r) V (g'r)' / sum g^2`` with one degree of freedom per covariate.
    Covariates whose residuals are identically zero are skipped and noted.
    """
    _check_match(dataset, fit)
    res = residuals if residuals is not None else schoenfeld_residuals(dataset, fit)
    d = res.n_events
    if d < 3:
        raise InsufficientEventsError(f"proportionality test needs >= 3 events, got {d}")
    r = res.residuals
    g = _time_transform(res.event_km, transform)
    gc = g - g.mean()
    ss = float(gc @ gc)
    V = fit.model_covariance
    names = fit.names

    scale = np.abs(r).max(axis=0)
    degenerate = ~(scale > 1e-12 * max(1.0, float(np.abs(r).max(initial=0.0))))
    keep = np.flatnonzero(~degenerate)
    rows = []
    if ss <= 0:
        raise DiagnosticsError("all events occur at the same position; time has no variance")
    VK = V[np.ix_(keep, keep)]
    scaled = d * r[:, keep] @ VK
    test = gc @ scaled
    for pos, j in enumerate(keep):
        chisq = float(test[pos] ** 2 / (d * V[j, j] * ss))
        col = scaled[:, pos] + fit.beta[j]
        sd = col.std()
        rho = float(np.corrcoef(gc, col)[0, 1]) if sd > 0 else float("nan")
        rows.append((j, PHTestRow(names[j], rho, chisq, 1, float(stats.chi2.sf(chisq, 1)))))
    for j in np.flatnonzero(degenerate):
        rows.append((j, PHTestRow(names[j], float("nan"), float("nan"), 0, float("nan"),
                                  "degenerate column: residuals identically zero; skipped")))
    rows = tuple(row for _, row in sorted(rows, key=lambda t: t[0]))

    k = keep.size
    if k:
        tg = gc @ r[:, keep]
        chisq = float(tg @ VK @ tg * d / ss)
        global_row = PHTestRow("GLOBAL", float("nan"), chisq, k, float(stats.chi2.sf(chisq, k)))
    else:
        global_row = PHTestRow("GLOBAL", float("nan"), float("nan"), 0, float("nan"),
                               "no testable covariates")
    return PHTestResult(rows, global_row, transform, d)


@dataclass(frozen=True)
class ChangepointSuggestion:
    km: Optional[float]
    statistic: float
    mean_before: float = float("nan")
    mean_after: float = float("nan")
    below_threshold: bool = True
    degenerate: bool = False
    scan: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {"km": self.km, "statistic": self.statistic,
                "mean_before": self.mean_before, "mean_after": self.mean_after,
                "below_threshold": self.below_threshold, "degenerate": self.degenerate}


def suggest_changepoint(residuals, event_kms, step_km: float = 10.0,
                        threshold: float = 3.5, min_side: int = 5) -> ChangepointSuggestion:
    """Advisory heaviside changepoint from one covariate's residuals.

    Scans cut points on a ``step_km`` grid and returns the one with the
    largest Welch-standardised difference between the mean residual after
    and before the cut.  ``below_threshold`` is set when the best absolute
    statistic does not reach ``threshold``.
    """
    r = np.asarray(residuals, dtype=float).ravel()
    km = np.asarray(event_kms, dtype=float).ravel()
    if r.size != km.size:
        raise ValueError("residuals and event_kms differ in length")
    if r.size < 10:
        raise InsufficientEventsError(f"changepoint suggestion needs >= 10 events, got {r.size}")
    if np.ptp(r) == 0:
        return ChangepointSuggestion(None, 0.0, below_threshold=True, degenerate=True)
    grid = np.arange(step_km, km.max(), step_km)
    best = None
    scan = []
    for c in grid:
        before, after = r[km <= c], r[km > c]
        if before.size < min_side or after.size < min_side:
            continue
        v = before.var(ddof=1) / before.size + after.var(ddof=1) / after.size
        if v <= 0:
            continue
        t = (after.mean() - before.mean()) / np.sqrt(v)
        scan.append((float(c), float(t)))
        if best is None or abs(t) > abs(best[1]):
            best = (float(c), float(t), float(before.mean()), float(after.mean()))
    if best is None:
        return ChangepointSuggestion(None, 0.0, below_threshold=True, degenerate=True)
    c, t, mb, ma = best
    return ChangepointSuggestion(c, t, mb, ma, below_threshold=abs(t) < threshold,
                                 scan=tuple(scan))
