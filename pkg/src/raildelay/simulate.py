"""Synthetic data generators for fixtures and Monte-Carlo checks."""
from __future__ import annotations

import numpy as np

from .domain import CountingProcessDataset, PanelStateDataset


def _draw_covariates(rng, shape, kinds):
    X = np.empty(shape + (len(kinds),))
    for j, kind in enumerate(kinds):
        if kind == "normal":
            X[..., j] = rng.standard_normal(shape)
        elif kind == "binary":
            X[..., j] = (rng.random(shape) < 0.5).astype(float)
        elif kind == "zero":
            X[..., j] = 0.0
        else:
            raise ValueError(f"unknown covariate kind {kind!r}")
    return X


def default_kinds(p):
    return tuple("normal" if j % 2 == 0 else "binary" for j in range(p))


def simulate_recurrent_cox(rng, n_subjects, beta, trip_km=120.0, section_km=20.0,
                           baseline=0.01, kinds=None, reversal_km=None,
                           names=None) -> CountingProcessDataset:
    """Andersen-Gill recurrent events along a trip with per-section covariates.

    Each subject carries covariates that are constant within fixed-length
    sections.  Events form a Poisson process with intensity
    ``baseline * exp(beta' x(t))``; event positions come from inverting the
    piecewise-linear cumulative hazard at cumulative unit-exponential
    targets.  With ``reversal_km`` set, the coefficient flips sign for
    sections starting at or beyond that distance (non-proportional hazards).

    Rows are split at section boundaries and at events so every row has a
    single covariate vector.
    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    kinds = default_kinds(p) if kinds is None else tuple(kinds)
    edges = np.arange(0.0, trip_km + 0.5 * section_km, section_km)
    n_sec = edges.size - 1
    X = _draw_covariates(rng, (n_subjects, n_sec), kinds)
    lin = X @ beta
    if reversal_km is not None:
        lin = lin * np.where(edges[:-1] >= reversal_km, -1.0, 1.0)
    cum = np.zeros((n_subjects, n_sec + 1))
    cum[:, 1:] = np.cumsum(baseline * np.exp(lin) * np.diff(edges), axis=1)

    subj, start, stop, event, rows_x = [], [], [], [], []
    for i in range(n_subjects):
        total = cum[i, -1]
        targets = []
        acc = rng.exponential()
        while acc < total:
            targets.append(acc)
            acc += rng.exponential()
        ev_km = np.interp(targets, cum[i], edges) if targets else np.empty(0)
        cuts = np.concatenate([edges[1:], ev_km])
        is_ev = np.concatenate([np.zeros(n_sec, bool), np.ones(ev_km.size, bool)])
        order = np.argsort(cuts, kind="stable")
        cuts, is_ev = cuts[order], is_ev[order]
        lo = np.concatenate([[0.0], cuts[:-1]])
        sec = np.minimum(np.searchsorted(edges, cuts, side="left") - 1, n_sec - 1)
        keep = cuts > lo
        subj.append(np.full(keep.sum(), i))
        start.append(lo[keep])
        stop.append(cuts[keep])
        event.append(is_ev[keep])
        rows_x.append(X[i, sec[keep]])
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(p))
    return CountingProcessDataset(
        subject=np.array([f"s{k:05d}" for k in np.concatenate(subj)]),
        start=np.concatenate(start),
        stop=np.concatenate(stop),
        event=np.concatenate(event),
        X=np.concatenate(rows_x).reshape(-1, p),
        names=names,
    )


def simulate_ctmc_panel(rng, q0, beta, n_subjects, n_obs, kinds=("binary",),
                        gap=(0.5, 1.5), names=None) -> PanelStateDataset:
    """Panel snapshots of a homogeneous CTMC with proportional intensities.

    ``q0`` is the baseline intensity matrix and ``beta`` maps 0-based
    transitions ``(r, s)`` to coefficient vectors.  Covariates are redrawn at
    every observation and govern the chain until the next one.  Paths are
    simulated exactly with exponential holding times; only the states at
    observation times are kept.
    """
    q0 = np.asarray(q0, dtype=float)
    k = q0.shape[0]
    kinds = tuple(kinds)
    p = len(kinds)
    B = np.zeros((k, k, p))
    for (r, s), b in beta.items():
        B[r, s] = b
    off = ~np.eye(k, dtype=bool)

    # Start from the baseline stationary distribution.
    A = np.vstack([q0.T, np.ones(k)])
    pi = np.linalg.lstsq(A, np.concatenate([np.zeros(k), [1.0]]), rcond=None)[0]
    pi = np.clip(pi, 0, None)
    pi /= pi.sum()

    X = _draw_covariates(rng, (n_subjects, n_obs), kinds)
    gaps = rng.uniform(gap[0], gap[1], size=(n_subjects, n_obs - 1))
    times = np.zeros((n_subjects, n_obs))
    times[:, 1:] = np.cumsum(gaps, axis=1)
    states = np.zeros((n_subjects, n_obs), dtype=int)
    for i in range(n_subjects):
        s = rng.choice(k, p=pi)
        states[i, 0] = s
        for j in range(n_obs - 1):
            Q = q0 * np.exp(B @ X[i, j]) * off
            left = gaps[i, j]
            while True:
                rates = Q[s]
                total = rates.sum()
                if total <= 0:
                    break
                wait = rng.exponential(1.0 / total)
                if wait >= left:
                    break
                left -= wait
                s = rng.choice(k, p=rates / total)
            states[i, j + 1] = s
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(p))
    return PanelStateDataset(
        subject=np.repeat([f"s{i:05d}" for i in range(n_subjects)], n_obs),
        time=times.ravel(),
        state=states.ravel() + 1,
        X=X.reshape(-1, p),
        names=names,
    )
