"""Homogeneous continuous-time Markov chains with covariate-dependent intensities.

Intensities follow ``q_rs(x) = q_rs0 * exp(beta_rs' x)``; the transition
matrix over an interval of length ``t`` is ``expm(t Q(x))`` with ``x`` read
at the interval's left observation.  Parameters are estimated from panel
snapshots by maximising the product of observed transition probabilities.
States are 0-based internally and 1-based in files and reports.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from . import kernels
from .domain import MsmFit, PanelStateDataset

log = logging.getLogger(__name__)

Z_95 = 1.96


class MarkovError(RuntimeError):
    pass


class LikelihoodDegenerateError(MarkovError):
    pass


class UnobservedTransitionError(MarkovError):
    def __init__(self, transitions):
        self.transitions = tuple(transitions)
        listed = ", ".join(f"{r + 1}->{s + 1}" for r, s in self.transitions)
        super().__init__(f"transitions never observed in the panel: {listed}")


class MsmConvergenceError(MarkovError):
    def __init__(self, params, trace, grad_norm):
        self.params = np.asarray(params)
        self.trace = list(trace)
        super().__init__(f"optimiser did not reach gradient norm < 1e-6 (last {grad_norm:.3g}); "
                         f"params={self.params.tolist()}, loglik trace={self.trace[-5:]}")


@dataclass(frozen=True)
class IntensitySpec:
    """Which transitions are allowed and which covariates act on each.

    ``allowed_transitions`` are 0-based ``(r, s)`` pairs; ``None`` allows
    every ``r != s``.  ``covariate_indices`` maps a transition to the covariate
    columns in its linear predictor; ``None`` uses every column for every
    transition (resolved against the panel at fit time).
    """

    n_states: int = 2
    allowed_transitions: Optional[tuple] = None
    covariate_indices: Optional[dict] = None
    absorbing: tuple = ()

    def __post_init__(self):
        k = self.n_states
        if k < 2:
            raise ValueError("IntensitySpec: n_states must be >= 2")
        if self.allowed_transitions is None:
            trans = tuple((r, s) for r in range(k) for s in range(k) if r != s)
        else:
            trans = tuple(sorted({(int(r), int(s)) for r, s in self.allowed_transitions}))
        for r, s in trans:
            if r == s or not (0 <= r < k and 0 <= s < k):
                raise ValueError(f"IntensitySpec: invalid transition ({r}, {s})")
        object.__setattr__(self, "allowed_transitions", trans)
        leavers = {r for r, _ in trans}
        for r in range(k):
            if r not in leavers and r not in self.absorbing:
                raise ValueError(f"IntensitySpec: state {r + 1} cannot be left and is not "
                                 f"declared absorbing")

    def covariates_for(self, transition, p):
        if self.covariate_indices is None:
            return tuple(range(p))
        return tuple(self.covariate_indices.get(tuple(transition), ()))


class _Layout:
    """Maps the flat estimation vector onto (log q0, beta) per transition."""

    def __init__(self, spec: IntensitySpec, names):
        self.spec = spec
        self.names = tuple(names)
        p = len(self.names)
        self.transitions = spec.allowed_transitions
        self.cov_idx = {t: spec.covariates_for(t, p) for t in self.transitions}
        for t, idx in self.cov_idx.items():
            if any(j < 0 or j >= p for j in idx):
                raise ValueError(f"covariate index out of range for transition {t}")
        nt = len(self.transitions)
        self.beta_slices = {}
        pos = nt
        for t in self.transitions:
            n = len(self.cov_idx[t])
            self.beta_slices[t] = slice(pos, pos + n)
            pos += n
        self.size = pos
        labels = [f"log q{r + 1}{s + 1}" for r, s in self.transitions]
        for t in self.transitions:
            labels += [f"beta{t[0] + 1}{t[1] + 1}[{self.names[j]}]" for j in self.cov_idx[t]]
        self.param_names = tuple(labels)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        logq = {t: theta[i] for i, t in enumerate(self.transitions)}
        beta = {t: theta[self.beta_slices[t]] for t in self.transitions}
        return logq, beta

    def pack(self, q0_offdiag: dict, beta_rs: dict):
        theta = np.zeros(self.size)
        for i, t in enumerate(self.transitions):
            theta[i] = math.log(q0_offdiag[t])
            b = beta_rs.get(t)
            if b is not None:
                theta[self.beta_slices[t]] = b
        return theta

    def intensity_stack(self, theta, X):
        """Q(x) for every row of ``X``; shape (N, k, k)."""
        k = self.spec.n_states
        logq, beta = self.unpack(theta)
        Q = np.zeros((X.shape[0], k, k))
        for t in self.transitions:
            r, s = t
            eta = np.full(X.shape[0], logq[t])
            idx = self.cov_idx[t]
            if idx:
                eta = eta + X[:, idx] @ beta[t]
            Q[:, r, s] = np.exp(eta)
        diag = np.arange(k)
        Q[:, diag, diag] = -Q.sum(axis=2)
        return Q


def build_Q(q0_offdiag: dict, beta_rs: dict, x, n_states: int = 2) -> np.ndarray:
    """Intensity matrix at covariates ``x``.

    Off-diagonal entries are ``q0_offdiag[(r, s)] * exp(beta_rs[(r, s)] . x)``
    and each diagonal entry makes its row sum to zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Q = np.zeros((n_states, n_states))
    for (r, s), q in q0_offdiag.items():
        if not q > 0:
            raise ValueError(f"baseline intensity for {r + 1}->{s + 1} must be > 0, got {q}")
        b = beta_rs.get((r, s))
        eta = 0.0 if b is None or len(np.atleast_1d(b)) == 0 else float(np.dot(b, x))
        Q[r, s] = q * math.exp(eta)
    Q[np.diag_indices(n_states)] = 0.0
    Q[np.diag_indices(n_states)] = -Q.sum(axis=1)
    return Q


def _clamp(P, tol=1e-12):
    lo, hi = P.min(initial=0.0), P.max(initial=0.0)
    if lo < -tol or hi > 1 + tol:
        warnings.warn(f"transition probabilities outside [0, 1] beyond {tol:g} "
                      f"(min {lo:.3g}, max {hi:.3g}); clamped", RuntimeWarning, stacklevel=3)
    return np.clip(P, 0.0, 1.0)


def transition_probability(Q, t: float) -> np.ndarray:
    """P(t) = expm(t Q) by scaling and squaring with Pade approximants."""
    if t < 0:
        raise ValueError(f"duration must be >= 0, got {t}")
    Q = np.asarray(Q, dtype=float)
    return _clamp(kernels.expm(t * Q))


def _resolve_spec(panel: PanelStateDataset, spec: Optional[IntensitySpec]):
    if spec is None:
        spec = IntensitySpec(n_states=max(2, int(panel.state.max(initial=2))))
    bad = sorted(set(panel.state[(panel.state < 1) | (panel.state > spec.n_states)].tolist()))
    if bad:
        raise MarkovError(f"panel has state labels {bad} outside 1..{spec.n_states}")
    return spec


def _pair_data(panel: PanelStateDataset):
    i, j = panel.pairs()
    return dict(
        left=i,
        dt=panel.time[j] - panel.time[i],
        s_from=panel.state[i] - 1,
        s_to=panel.state[j] - 1,
        X=panel.X[i],
    )


def _pair_logprobs(layout, theta, pairs):
    if pairs["dt"].size == 0:
        return np.zeros(0)
    Q = layout.intensity_stack(theta, pairs["X"])
    P = kernels.expm_batch(Q * pairs["dt"][:, None, None])
    vals = P[np.arange(P.shape[0]), pairs["s_from"], pairs["s_to"]]
    return vals


def _loglik(layout, theta, pairs, panel=None):
    vals = _pair_logprobs(layout, theta, pairs)
    if vals.size == 0:
        return 0.0
    if np.any(vals > 1 + 1e-12) or np.any(vals < -1e-12):
        vals = _clamp(vals)
    bad = np.flatnonzero(vals <= 0)
    if bad.size:
        k = pairs["left"][bad[0]]
        who = ""
        if panel is not None:
            who = (f"subject {str(panel.subject[k])!r}, times {panel.time[k]:g}->"
                   f"{panel.time[k + 1]:g}, ")
        raise LikelihoodDegenerateError(
            f"zero transition probability for observed pair ({who}states "
            f"{pairs['s_from'][bad[0]] + 1}->{pairs['s_to'][bad[0]] + 1})")
    # fsum is exactly rounded, so the total does not depend on subject order.
    return math.fsum(np.log(vals).tolist())


def msm_loglik(panel: PanelStateDataset, params, spec: Optional[IntensitySpec] = None) -> float:
    """Panel log-likelihood: sum of log P_{S(t_j) S(t_j+1)}(t_j+1 - t_j).

    ``params`` is either an ``MsmFit`` or an estimation-scale vector laid out
    as log baseline intensities (one per allowed transition, sorted) followed
    by each transition's coefficients.
    """
    if isinstance(params, MsmFit):
        if spec is None:
            spec = IntensitySpec(params.n_states, params.transitions,
                                 {t: tuple(panel.names.index(n) for n in params.covariate_names[t])
                                  for t in params.transitions})
        params = params.params
    spec = _resolve_spec(panel, spec)
    layout = _Layout(spec, panel.names)
    theta = np.asarray(params, dtype=float)
    if theta.size != layout.size:
        raise ValueError(f"expected {layout.size} parameters, got {theta.size}")
    return _loglik(layout, theta, _pair_data(panel), panel)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


def _fd_gradient(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h[i])
    return g


def _fd_hessian(f, x, h):
    k = x.size
    H = np.zeros((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H


def crude_initial_rates(panel: PanelStateDataset, spec: IntensitySpec) -> dict:
    """Transitions r->s between snapshots divided by time spent in r."""
    pairs = _pair_data(panel)
    rates = {}
    for r, s in spec.allowed_transitions:
        in_r = pairs["s_from"] == r
        n_rs = np.sum(in_r & (pairs["s_to"] == s))
        time_r = pairs["dt"][in_r].sum()
        rates[(r, s)] = n_rs / time_r if time_r > 0 and n_rs > 0 else 0.1
    return rates


def observed_transition_counts(panel: PanelStateDataset, n_states: int) -> np.ndarray:
    pairs = _pair_data(panel)
    counts = np.zeros((n_states, n_states), dtype=int)
    np.add.at(counts, (pairs["s_from"], pairs["s_to"]), 1)
    return counts


def fit_msm(panel: PanelStateDataset, spec: Optional[IntensitySpec] = None,
            grad_tol: float = 1e-6, max_iter: int = 500, fd_step: float = 1e-3,
            polish_iter: int = 25) -> MsmFit:
    """Maximum-likelihood fit on the (log q0, beta) scale.

    BFGS with finite-difference gradients does the bulk of the work; Newton
    steps on a finite-difference Hessian then drive the gradient norm below
    ``grad_tol``.  The covariance is the inverse of that observed
    information.  Coefficients of covariates that are constant over a
    transition's origin rows are held at zero and carry no covariance.
    """
    spec = _resolve_spec(panel, spec)
    layout = _Layout(spec, panel.names)
    pairs = _pair_data(panel)
    if pairs["dt"].size == 0:
        raise MarkovError("panel has no observation pairs")
    counts = observed_transition_counts(panel, spec.n_states)
    missing = [t for t in spec.allowed_transitions if counts[t] == 0]
    if missing:
        raise UnobservedTransitionError(missing)

    free = np.ones(layout.size, dtype=bool)
    for t in layout.transitions:
        Xr = pairs["X"][pairs["s_from"] == t[0]]
        for pos, j in zip(range(layout.beta_slices[t].start, layout.beta_slices[t].stop),
                          layout.cov_idx[t]):
            if Xr.shape[0] == 0 or np.ptp(Xr[:, j]) == 0:
                free[pos] = False
                log.warning("covariate %s constant on transition %d->%d; beta fixed at 0",
                            layout.names[j], t[0] + 1, t[1] + 1)

    theta0 = layout.pack(crude_initial_rates(panel, spec), {})
    fixed = theta0.copy()

    def full(z):
        th = fixed.copy()
        th[free] = z
        return th

    def negll(z):
        try:
            return -_loglik(layout, full(z), pairs)
        except LikelihoodDegenerateError:
            return np.inf

    def steps(z):
        return fd_step * np.maximum(1.0, np.abs(z))

    def grad(z):
        return _fd_gradient(negll, z, steps(z))

    z = theta0[free]
    trace = [-negll(z)]
    res = optimize.minimize(negll, z, jac=grad, method="BFGS",
                            options={"gtol": grad_tol, "maxiter": max_iter})
    if np.isfinite(res.fun) and res.fun <= negll(z):
        z = res.x
    n_iter = int(res.nit)
    trace.append(-negll(z))

    g = grad(z)
    H = _fd_hessian(negll, z, steps(z))
    for _ in range(polish_iter):
        if np.linalg.norm(g) < grad_tol:
            break
        step = -np.linalg.lstsq(H, g, rcond=None)[0]
        f0 = negll(z)
        for _half in range(30):
            if negll(z + step) <= f0:
                break
            step = step / 2
        z = z + step
        n_iter += 1
        g = grad(z)
        H = _fd_hessian(negll, z, steps(z))
        trace.append(-negll(z))
    grad_norm = float(np.linalg.norm(g))
    converged = grad_norm < grad_tol
    if not converged:
        raise MsmConvergenceError(full(z), trace, grad_norm)

    theta = full(z)
    cov = None
    try:
        np.linalg.cholesky(H)
        cz = np.linalg.inv(H)
        cov = np.zeros((layout.size, layout.size))
        cov[np.ix_(free, free)] = 0.5 * (cz + cz.T)
    except np.linalg.LinAlgError:
        warnings.warn("observed information is not positive definite; confidence "
                      "intervals suppressed", RuntimeWarning, stacklevel=2)

    logq, beta = layout.unpack(theta)
    q0 = np.zeros((spec.n_states, spec.n_states))
    for t in layout.transitions:
        q0[t] = math.exp(logq[t])
    q0[np.diag_indices(spec.n_states)] = -q0.sum(axis=1)
    fit = MsmFit(
        n_states=spec.n_states,
        transitions=layout.transitions,
        q0=q0,
        beta_rs={t: np.array(beta[t]) for t in layout.transitions},
        covariate_names={t: tuple(layout.names[j] for j in layout.cov_idx[t])
                         for t in layout.transitions},
        params=theta,
        param_names=layout.param_names,
        covariance=cov,
        loglik=-negll(z),
        converged=converged,
        n_iterations=n_iter,
        grad_norm=grad_norm,
    )
    return fit


@dataclass(frozen=True)
class TransitionHRRow:
    transition: tuple  # 1-based (from, to)
    predictor: str
    coef: float
    se: float
    hazard_ratio: float
    ci_lower: float
    ci_upper: float
    flagged: bool = False
    note: str = ""

    def to_dict(self):
        return {"from_state": self.transition[0], "to_state": self.transition[1],
                "predictor": self.predictor, "coef": self.coef, "se": self.se,
                "hazard_ratio": self.hazard_ratio, "ci_lower": self.ci_lower,
                "ci_upper": self.ci_upper, "flagged": self.flagged, "note": self.note}


def hazard_ratio_ci(coef: float, se: float, z: float = Z_95):
    """exp(coef) with the interval exp(coef -/+ z se)."""
    return math.exp(coef), math.exp(coef - z * se), math.exp(coef + z * se)


def transition_hazard_ratios(fit: MsmFit) -> dict:
    """Per transition, rows of (HR, 95% CI) for every covariate coefficient."""
    se = fit.se
    tables = {}
    for t in fit.transitions:
        rows = []
        names = fit.covariate_names[t]
        for k, name in enumerate(names):
            pos = fit.param_names.index(f"beta{t[0] + 1}{t[1] + 1}[{name}]")
            b = float(fit.params[pos])
            s = float(se[pos]) if se is not None else float("nan")
            label = (t[0] + 1, t[1] + 1)
            if se is None or not s > 0:
                note = ("covariance unavailable" if se is None
                        else "coefficient held at zero (covariate never varies)")
                rows.append(TransitionHRRow(label, name, b, s, math.exp(b), float("nan"),
                                            float("nan"), True, note))
                continue
            hr, lo, hi = hazard_ratio_ci(b, s)
            rows.append(TransitionHRRow(label, name, b, s, hr, lo, hi))
        tables[(t[0] + 1, t[1] + 1)] = rows
    return tables
