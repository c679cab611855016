"""Andersen-Gill Cox regression for recurrent events on the distance axis.

Rows are counting-process intervals ``(start, stop]`` with an event flag at
``stop``.  A row is at risk at ``t`` iff ``start < t <= stop``.  Tied event
positions use Efron's approximation (default) or Breslow's.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .domain import CountingProcessDataset, CoxFit

log = logging.getLogger(__name__)

TIES = ("efron", "breslow")


class CoxError(RuntimeError):
    pass


class NumericalOverflowError(CoxError):
    pass


class SingularInformationError(CoxError):
    def __init__(self, columns, detail=""):
        self.columns = tuple(columns)
        msg = "information matrix is singular; dependent columns: " + ", ".join(self.columns)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConvergenceError(CoxError):
    def __init__(self, beta, trace):
        self.beta = np.asarray(beta)
        self.trace = list(trace)
        super().__init__(
            f"Newton-Raphson did not converge in {len(trace) - 1} iterations; "
            f"last beta={self.beta.tolist()}, loglik trace={self.trace}"
        )


@dataclass(frozen=True)
class HeavisideSpec:
    """Split ``covariate_index`` at ``changepoint_t0`` km: g(t) = 1{t > t0}."""

    covariate_index: int
    changepoint_t0: float

    def __post_init__(self):
        if not self.changepoint_t0 > 0:
            raise ValueError(f"HeavisideSpec: changepoint_t0 must be > 0, got {self.changepoint_t0}")
        if self.covariate_index < 0:
            raise ValueError("HeavisideSpec: covariate_index must be >= 0")


def interaction_name(name: str, t0: float) -> str:
    return f"{name}:gt{t0:g}"


def heaviside_expand(dataset: CountingProcessDataset, specs) -> CountingProcessDataset:
    """Append ``x_m * g_m(t)`` columns, splitting rows that straddle a changepoint.

    A row ``(a, b]`` with ``a < t0 < b`` becomes ``(a, t0]`` (no event) and
    ``(t0, b]`` (original event flag), so every appended column is constant
    within a row and evaluated as ``g(stop)``.
    """
    specs = list(specs)
    ds = dataset
    for spec in specs:
        if spec.covariate_index >= dataset.n_covariates:
            raise IndexError(f"covariate_index {spec.covariate_index} out of range "
                             f"for {dataset.n_covariates} columns")
        t0 = spec.changepoint_t0
        straddle = (ds.start < t0) & (t0 < ds.stop)
        if np.any(straddle):
            idx = np.repeat(np.arange(ds.n_rows), np.where(straddle, 2, 1))
            second = np.zeros(idx.size, dtype=bool)
            second[1:] = idx[1:] == idx[:-1]
            first_of_split = np.zeros(idx.size, dtype=bool)
            first_of_split[:-1] = second[1:]
            start = ds.start[idx].copy()
            stop = ds.stop[idx].copy()
            event = ds.event[idx].copy()
            stop[first_of_split] = t0
            event[first_of_split] = False
            start[second] = t0
            ds = CountingProcessDataset(
                ds.subject[idx], start, stop, event, ds.X[idx], ds.names,
                None if ds.event_index is None else ds.event_index[idx])
        g = (ds.stop > t0).astype(float)
        col = ds.X[:, spec.covariate_index] * g
        ds = ds.with_columns(np.column_stack([ds.X, col]),
                             ds.names + (interaction_name(ds.names[spec.covariate_index], t0),))
    return ds


def separate_tied_subject_events(dataset: CountingProcessDataset, eps: float = 1e-6):
    """Nudge repeated event positions within one subject by +eps km, in input order."""
    stop = dataset.stop.copy()
    seen = {}
    moved = 0
    for i in np.flatnonzero(dataset.event):
        key = dataset.subject[i]
        taken = seen.setdefault(key, set())
        while stop[i] in taken:
            stop[i] += eps
            moved += 1
        taken.add(stop[i])
    if not moved:
        return dataset
    log.warning("perturbed %d tied within-subject event positions by +%g km", moved, eps)
    return CountingProcessDataset(dataset.subject, dataset.start, stop, dataset.event,
                                  dataset.X, dataset.names, dataset.event_index)


# ---------------------------------------------------------------------------
# Likelihood machinery
# ---------------------------------------------------------------------------


class _Terms:
    """Partial-likelihood pieces at a fixed beta."""

    def __init__(self, ds: CountingProcessDataset, beta, ties="efron", need_info=True):
        if ties not in TIES:
            raise ValueError(f"ties must be one of {TIES}, got {ties!r}")
        X = ds.X
        p = X.shape[1]
        beta = np.asarray(beta, dtype=float).reshape(p)
        eta = X @ beta
        if not np.all(np.isfinite(eta)):
            raise NumericalOverflowError("linear predictor is not finite")
        shift = float(eta.max()) if eta.size else 0.0
        phi = np.exp(eta - shift)

        ev = np.flatnonzero(ds.event)
        times, g = np.unique(ds.stop[ev], return_inverse=True)
        order = np.argsort(g, kind="stable")
        ev, g = ev[order], g[order]
        m = times.size
        d = np.bincount(g, minlength=m)

        self.p, self.ties, self.shift = p, ties, shift
        self.beta, self.eta, self.phi = beta, eta, phi
        self.ev, self.g, self.times, self.d = ev, g, times, d
        if m == 0:
            self.loglik = 0.0
            self.score = np.zeros(p)
            self.information = np.zeros((p, p))
            self.mean = np.zeros((0, p))
            self.denom = np.zeros(0)
            self.frac = np.zeros(0)
            return

        S0, S1, S2 = kernels.risk_set_sums(ds.start, ds.stop, phi, X, times)

        if ties == "efron" and np.any(d > 1):
            first = np.concatenate([[0], np.cumsum(d)[:-1]])
            frac = (np.arange(ev.size) - first[g]) / d[g]
            phi_e = phi[ev]
            T0 = np.bincount(g, weights=phi_e, minlength=m)
            T1 = np.zeros((m, p))
            np.add.at(T1, g, phi_e[:, None] * X[ev])
            denom = S0[g] - frac * T0[g]
            num = S1[g] - frac[:, None] * T1[g]
        else:
            frac = np.zeros(ev.size)
            T0 = T1 = None
            denom = S0[g]
            num = S1[g]
        if np.any(denom <= 0):
            raise NumericalOverflowError("risk-set denominator underflowed to zero")
        mean = num / denom[:, None]

        loglik = float(eta[ev].sum() - (np.log(denom) + shift).sum())
        if not np.isfinite(loglik):
            raise NumericalOverflowError(f"partial log-likelihood is not finite: {loglik}")
        self.loglik = loglik
        self.score = X[ev].sum(axis=0) - mean.sum(axis=0)
        self.mean, self.denom, self.frac = mean, denom, frac
        if need_info:
            second = S2[g]
            if T0 is not None:
                T2 = np.zeros((m, p, p))
                xe = X[ev]
                np.add.at(T2, g, phi[ev][:, None, None] * xe[:, :, None] * xe[:, None, :])
                second = second - frac[:, None, None] * T2[g]
            info = (second / denom[:, None, None]).sum(axis=0) - mean.T @ mean
            self.information = 0.5 * (info + info.T)

    def schoenfeld(self, X):
        """Observed minus expected covariates for each event row (ordered by ``ev``)."""
        m = self.times.size
        avg = np.zeros((m, self.p))
        np.add.at(avg, self.g, self.mean)
        avg /= self.d[:, None]
        return X[self.ev] - avg[self.g]

    def score_residuals(self, ds: CountingProcessDataset):
        """Per-row score residuals; their column sums equal the score."""
        X = ds.X
        n, p = X.shape
        res = np.zeros((n, p))
        m = self.times.size
        if m == 0:
            return res
        h = 1.0 / self.denom
        H = np.bincount(self.g, weights=h, minlength=m)
        M = np.zeros((m, p))
        np.add.at(M, self.g, self.mean * h[:, None])
        HE = np.bincount(self.g, weights=self.frac * h, minlength=m)
        ME = np.zeros((m, p))
        np.add.at(ME, self.g, self.mean * (self.frac * h)[:, None])
        CH = np.concatenate([[0.0], np.cumsum(H)])
        CM = np.vstack([np.zeros((1, p)), np.cumsum(M, axis=0)])
        up = np.searchsorted(self.times, ds.stop, side="right")
        lo = np.searchsorted(self.times, ds.start, side="right")
        phi = self.phi[:, None]
        res -= phi * (X * (CH[up] - CH[lo])[:, None] - (CM[up] - CM[lo]))
        ev, g = self.ev, self.g
        res[ev] += self.schoenfeld(X)
        res[ev] += phi[ev] * (X[ev] * HE[g][:, None] - ME[g])
        return res


def partial_loglik(dataset: CountingProcessDataset, beta, ties: str = "efron") -> float:
    """Log partial likelihood of the counting-process data at ``beta``."""
    return _Terms(dataset, beta, ties, need_info=False).loglik


def score_and_information(dataset: CountingProcessDataset, beta, ties: str = "efron"):
    """Gradient of the log partial likelihood and the observed information."""
    t = _Terms(dataset, beta, ties)
    return t.score, t.information


def _dependent_columns(info, names, rtol=1e-10):
    w, v = np.linalg.eigh(info)
    scale = max(abs(w).max(), 1e-300)
    null = v[:, w <= rtol * scale]
    if null.shape[1] == 0:
        return []
    load = np.abs(null).max(axis=1)
    return [names[j] for j in np.flatnonzero(load > 1e-6)]


def _check_information(info, names):
    bad = _dependent_columns(info, names)
    if bad:
        raise SingularInformationError(bad)


def robust_covariance(dataset: CountingProcessDataset, beta, ties="efron", model_cov=None):
    """Sandwich A^-1 (sum_i D_i^T D_i) A^-1 clustered by subject."""
    terms = _Terms(dataset, beta, ties)
    if model_cov is None:
        model_cov = np.linalg.inv(terms.information)
    res = terms.score_residuals(dataset)
    _, code = np.unique(dataset.subject, return_inverse=True)
    D = np.zeros((code.max() + 1 if code.size else 0, res.shape[1]))
    np.add.at(D, code, res)
    dd = model_cov @ (D.T @ D) @ model_cov
    return 0.5 * (dd + dd.T)


def fit(dataset: CountingProcessDataset, ties: str = "efron", max_iter: int = 25,
        beta_tol: float = 1e-9, loglik_rtol: float = 1e-12, heaviside=()) -> CoxFit:
    """Newton-Raphson maximisation of the partial likelihood from beta = 0.

    Step-halving is applied whenever a full step lowers the log-likelihood.
    Iteration stops once the accepted step has ``max|dbeta| < beta_tol`` or a
    relative log-likelihood change below ``loglik_rtol``; one final Newton
    step then polishes the score to round-off level.
    """
    if dataset.n_events < 1:
        raise CoxError("dataset has no events")
    ds = separate_tied_subject_events(dataset)
    p = ds.n_covariates
    beta = np.zeros(p)
    cur = _Terms(ds, beta, ties)
    _check_information(cur.information, ds.names)
    ll_start = cur.loglik
    trace = [cur.loglik]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(cur.information, cur.score)
        except np.linalg.LinAlgError:
            raise SingularInformationError(_dependent_columns(cur.information, ds.names)
                                           or list(ds.names)) from None
        new = _Terms(ds, beta + step, ties)
        halvings = 0
        while new.loglik < cur.loglik and halvings < 40:
            step = step / 2.0
            new = _Terms(ds, beta + step, ties)
            halvings += 1
        dmax = float(np.max(np.abs(step))) if p else 0.0
        rel = abs(new.loglik - cur.loglik) / max(abs(cur.loglik), 1e-300)
        if new.loglik >= cur.loglik:
            beta, cur = beta + step, new
        trace.append(cur.loglik)
        if dmax < beta_tol or rel < loglik_rtol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(beta, trace)
    # Polish: the stopping rules fire with beta accurate to ~1e-10, so take
    # full Newton steps while they shrink the score. The loglik is flat to
    # round-off here and cannot arbitrate.
    for _ in range(3):
        try:
            step = np.linalg.solve(cur.information, cur.score)
        except np.linalg.LinAlgError:
            break
        new = _Terms(ds, beta + step, ties)
        if not np.abs(new.score).max() < np.abs(cur.score).max():
            break
        beta, cur = beta + step, new
    _check_information(cur.information, ds.names)
    model_cov = np.linalg.inv(cur.information)
    model_cov = 0.5 * (model_cov + model_cov.T)
    rob = robust_covariance(ds, beta, ties, model_cov)
    return CoxFit(
        beta=beta,
        names=ds.names,
        model_covariance=model_cov,
        robust_covariance=rob,
        loglik_at_start=ll_start,
        loglik_at_end=cur.loglik,
        n_events=ds.n_events,
        n_subjects=ds.n_subjects,
        converged=converged,
        n_iterations=it,
        ties=ties,
        heaviside=tuple(heaviside),
    )


def fit_with_heaviside(dataset, specs, **options) -> tuple:
    """Expand the design for ``specs`` and fit; returns (fit, expanded dataset)."""
    specs = list(specs)
    expanded = heaviside_expand(dataset, specs)
    hv = tuple((dataset.names[s.covariate_index], float(s.changepoint_t0)) for s in specs)
    return fit(expanded, heaviside=hv, **options), expanded


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HazardRatioRow:
    predictor: str
    coef: float
    hazard_ratio: float
    robust_se: float
    z: float
    p: float

    def to_dict(self):
        return {"predictor": self.predictor, "coef": self.coef,
                "hazard_ratio": self.hazard_ratio, "robust_se": self.robust_se,
                "z": self.z, "p": self.p}


def _row(name, coef, se):
    z = coef / se if se > 0 else float("nan")
    p = float(2.0 * stats.norm.sf(abs(z))) if se > 0 else float("nan")
    return HazardRatioRow(name, float(coef), float(np.exp(coef)), float(se), float(z), p)


def hazard_ratios(fit_result: CoxFit) -> list:
    """One row per coefficient: coef, exp(coef), robust SE, z, two-sided p."""
    if not fit_result.converged:
        raise CoxError("hazard ratios need a converged fit")
    se = fit_result.robust_se
    return [_row(n, b, s) for n, b, s in zip(fit_result.names, fit_result.beta, se)]


def interval_effects(fit_result: CoxFit) -> list:
    """Rows re-parameterised so each split covariate reports one effect per interval.

    For a covariate split at ``t0`` the main coefficient is the effect on
    ``(0, t0]`` and main + interaction is the effect beyond ``t0``; the latter's
    SE comes from the robust covariance of the pair.  Unsplit covariates pass
    through unchanged.
    """
    names = list(fit_result.names)
    beta = fit_result.beta
    V = fit_result.robust_covariance
    splits = {}
    for cov, t0 in fit_result.heaviside:
        splits.setdefault(cov, []).append(t0)
    used = set()
    rows = []
    for j, name in enumerate(names):
        if j in used:
            continue
        if name not in splits:
            rows.append(_row(name, beta[j], np.sqrt(V[j, j])))
            continue
        cuts = sorted(splits[name])
        cols = [names.index(interaction_name(name, t0)) for t0 in cuts]
        used.update(cols)
        bounds = [0.0] + cuts + [None]
        for k in range(len(cuts) + 1):
            w = np.zeros(len(names))
            w[j] = 1.0
            for c, t0 in zip(cols, cuts):
                if k > cuts.index(t0):
                    w[c] = 1.0
            lo, hi = bounds[k], bounds[k + 1]
            label = f"{name} ({lo:g}-{hi:g} km)" if hi is not None else f"{name} ({lo:g} km-end)"
            rows.append(_row(label, float(w @ beta), float(np.sqrt(w @ V @ w))))
    return rows
