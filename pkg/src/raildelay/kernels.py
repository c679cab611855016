"""Hot numeric kernels with a numba path and a pure-numpy path.

Two kernels dominate runtime:

* ``risk_set_sums`` -- per event time, the sums of ``phi``, ``phi * x`` and
  ``phi * x x^T`` over the rows at risk, where a row with interval
  ``(start, stop]`` is at risk at ``t`` iff ``start < t <= stop``.
* ``expm_batch`` -- matrix exponentials of a stack of small square matrices
  by scaling and squaring with diagonal Pade approximants.

The public names dispatch to the numba implementation unless
``RAILDELAY_DISABLE_NUMBA`` is set; both implementations are always importable
under ``*_numpy`` / ``*_numba`` for testing and benchmarking.
"""
import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

__all__ = [
    "risk_set_sums",
    "risk_set_sums_numpy",
    "risk_set_sums_numba",
    "expm",
    "expm_batch",
    "expm_batch_numpy",
    "expm_batch_numba",
    "BACKEND",
]

# ---------------------------------------------------------------------------
# Risk-set sums
# ---------------------------------------------------------------------------


def _suffix(values):
    """Suffix sums with a trailing zero: out[i] = sum(values[i:])."""
    out = np.zeros((values.shape[0] + 1,) + values.shape[1:])
    out[:-1] = np.cumsum(values[::-1], axis=0)[::-1]
    return out


def risk_set_sums_numpy(start, stop, phi, X, times):
    """Vectorised risk-set sums via sorted suffix sums.

    Rows with ``stop >= t`` minus rows with ``start >= t`` leaves exactly the
    rows with ``start < t <= stop`` (``start < stop`` for every row).
    """
    start = np.asarray(start, dtype=float)
    stop = np.asarray(stop, dtype=float)
    phi = np.asarray(phi, dtype=float)
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)

    phix = phi[:, None] * X
    phixx = phix[:, :, None] * X[:, None, :]

    o_stop = np.argsort(stop, kind="mergesort")
    o_start = np.argsort(start, kind="mergesort")
    i_stop = np.searchsorted(stop[o_stop], times, side="left")
    i_start = np.searchsorted(start[o_start], times, side="left")

    S0 = _suffix(phi[o_stop])[i_stop] - _suffix(phi[o_start])[i_start]
    S1 = _suffix(phix[o_stop])[i_stop] - _suffix(phix[o_start])[i_start]
    S2 = _suffix(phixx[o_stop])[i_stop] - _suffix(phixx[o_start])[i_start]
    return S0, S1, S2


@njit
def _risk_sweep(start, stop, phi, X, times, o_stop, o_start):
    n, p = X.shape
    m = times.shape[0]
    S0 = np.zeros(m)
    S1 = np.zeros((m, p))
    S2 = np.zeros((m, p, p))
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    a = 0  # next row to enter, in decreasing stop order
    b = 0  # next row to leave, in decreasing start order
    for k in range(m - 1, -1, -1):
        t = times[k]
        while a < n and stop[o_stop[a]] >= t:
            i = o_stop[a]
            w = phi[i]
            s0 += w
            for u in range(p):
                s1[u] += w * X[i, u]
                for v in range(p):
                    s2[u, v] += w * X[i, u] * X[i, v]
            a += 1
        while b < n and start[o_start[b]] >= t:
            i = o_start[b]
            w = phi[i]
            s0 -= w
            for u in range(p):
                s1[u] -= w * X[i, u]
                for v in range(p):
                    s2[u, v] -= w * X[i, u] * X[i, v]
            b += 1
        S0[k] = s0
        for u in range(p):
            S1[k, u] = s1[u]
            for v in range(p):
                S2[k, u, v] = s2[u, v]
    return S0, S1, S2


def risk_set_sums_numba(start, stop, phi, X, times):
    """Single sweep over event times in decreasing order with running sums."""
    start = np.ascontiguousarray(start, dtype=np.float64)
    stop = np.ascontiguousarray(stop, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    o_stop = np.argsort(-stop, kind="mergesort")
    o_start = np.argsort(-start, kind="mergesort")
    return _risk_sweep(start, stop, phi, X, times, o_stop, o_start)


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------

# Standard Pade degrees and their 1-norm bounds for double precision.
_PADE_DEGREES = (3, 5, 7, 9, 13)
_PADE_THETA = (
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
)
_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_B13 = np.array(_PADE_COEFFS[13])
# Row k of this table holds the degree-(2k+3) coefficients, zero padded;
# degree 13 is evaluated by its own branch.
_B_TABLE = np.zeros((4, 10))
for _k, _m in enumerate(_PADE_DEGREES[:4]):
    _B_TABLE[_k, : _m + 1] = _PADE_COEFFS[_m]
_THETA = np.array(_PADE_THETA)


def _one_norm(A):
    return np.abs(A).sum(axis=-2).max(axis=-1)


def _pade_numpy(A, m):
    """Pade approximant r_m(A) for a stack of matrices (..., n, n)."""
    b = _PADE_COEFFS[m]
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n), A.shape)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye)
    else:
        U = b[1] * eye
        V = b[0] * eye
        power = eye
        for i in range(1, m // 2 + 1):
            power = power @ A2
            U = U + b[2 * i + 1] * power
            V = V + b[2 * i] * power
        U = A @ U
    return np.linalg.solve(V - U, V + U)


def _scaling(norms):
    """Degree index and squaring count for each 1-norm."""
    degree = np.searchsorted(_THETA, norms, side="left")
    degree = np.minimum(degree, len(_PADE_DEGREES) - 1)
    squarings = np.zeros(norms.shape, dtype=np.int64)
    big = norms > _PADE_THETA[-1]
    if np.any(big):
        squarings[big] = np.ceil(np.log2(norms[big] / _PADE_THETA[-1])).astype(np.int64)
    return degree, squarings


def expm_batch_numpy(A):
    """Matrix exponential of every matrix in a (N, n, n) stack."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError("expected a stack of square matrices with shape (N, n, n)")
    out = np.empty_like(A)
    if A.shape[0] == 0:
        return out
    degree, squarings = _scaling(_one_norm(A))
    for k, m in enumerate(_PADE_DEGREES):
        sel = np.flatnonzero(degree == k)
        if sel.size == 0:
            continue
        scaled = A[sel] / (2.0 ** squarings[sel])[:, None, None]
        out[sel] = _pade_numpy(scaled, m)
    for j in range(int(squarings.max())):
        sel = np.flatnonzero(squarings > j)
        out[sel] = out[sel] @ out[sel]
    return out


@njit
def _mm_into(A, B, C):
    n = A.shape[0]
    for i in range(n):
        for j in range(n):
            C[i, j] = 0.0
        for k in range(n):
            a = A[i, k]
            if a != 0.0:
                for j in range(n):
                    C[i, j] += a * B[k, j]


@njit
def _solve_inplace(M, X):
    """Overwrite X with M^-1 X (Gaussian elimination, partial pivoting)."""
    n = M.shape[0]
    for c in range(n):
        piv = c
        best = abs(M[c, c])
        for r in range(c + 1, n):
            if abs(M[r, c]) > best:
                best = abs(M[r, c])
                piv = r
        if piv != c:
            for j in range(n):
                tmp = M[c, j]
                M[c, j] = M[piv, j]
                M[piv, j] = tmp
                tmp = X[c, j]
                X[c, j] = X[piv, j]
                X[piv, j] = tmp
        for r in range(c + 1, n):
            f = M[r, c] / M[c, c]
            if f != 0.0:
                for j in range(c, n):
                    M[r, j] -= f * M[c, j]
                for j in range(n):
                    X[r, j] -= f * X[c, j]
    for c in range(n - 1, -1, -1):
        for j in range(n):
            acc = X[c, j]
            for k in range(c + 1, n):
                acc -= M[c, k] * X[k, j]
            X[c, j] = acc / M[c, c]


@njit
def _expm_stack(A, b_table, b13, theta):
    N, n, _ = A.shape
    out = np.empty_like(A)
    As = np.empty((n, n))
    A2 = np.empty((n, n))
    A4 = np.empty((n, n))
    A6 = np.empty((n, n))
    U = np.empty((n, n))
    V = np.empty((n, n))
    P = np.empty((n, n))
    T1 = np.empty((n, n))
    T2 = np.empty((n, n))
    for q in range(N):
        norm = 0.0
        for j in range(n):
            col = 0.0
            for i in range(n):
                col += abs(A[q, i, j])
            if col > norm:
                norm = col
        deg = 4
        for k in range(4):
            if norm <= theta[k]:
                deg = k
                break
        s = 0
        if deg == 4 and norm > theta[4]:
            s = int(math.ceil(math.log2(norm / theta[4])))
        scale = 2.0 ** s
        for i in range(n):
            for j in range(n):
                As[i, j] = A[q, i, j] / scale
        _mm_into(As, As, A2)
        if deg < 4:
            m = 2 * deg + 3
            for i in range(n):
                for j in range(n):
                    e = 1.0 if i == j else 0.0
                    U[i, j] = b_table[deg, 1] * e
                    V[i, j] = b_table[deg, 0] * e
                    P[i, j] = e
            for h in range(1, m // 2 + 1):
                _mm_into(P, A2, T1)
                bu = b_table[deg, 2 * h + 1]
                bv = b_table[deg, 2 * h]
                for i in range(n):
                    for j in range(n):
                        P[i, j] = T1[i, j]
                        U[i, j] += bu * T1[i, j]
                        V[i, j] += bv * T1[i, j]
            _mm_into(As, U, T1)
            for i in range(n):
                for j in range(n):
                    U[i, j] = T1[i, j]
        else:
            _mm_into(A2, A2, A4)
            _mm_into(A4, A2, A6)
            for i in range(n):
                for j in range(n):
                    T1[i, j] = b13[13] * A6[i, j] + b13[11] * A4[i, j] + b13[9] * A2[i, j]
            _mm_into(A6, T1, T2)
            for i in range(n):
                for j in range(n):
                    e = 1.0 if i == j else 0.0
                    T2[i, j] += (b13[7] * A6[i, j] + b13[5] * A4[i, j] + b13[3] * A2[i, j]
                                 + b13[1] * e)
            _mm_into(As, T2, U)
            for i in range(n):
                for j in range(n):
                    T1[i, j] = b13[12] * A6[i, j] + b13[10] * A4[i, j] + b13[8] * A2[i, j]
            _mm_into(A6, T1, V)
            for i in range(n):
                for j in range(n):
                    e = 1.0 if i == j else 0.0
                    V[i, j] += (b13[6] * A6[i, j] + b13[4] * A4[i, j] + b13[2] * A2[i, j]
                                + b13[0] * e)
        for i in range(n):
            for j in range(n):
                T1[i, j] = V[i, j] - U[i, j]
                P[i, j] = V[i, j] + U[i, j]
        _solve_inplace(T1, P)
        for _ in range(s):
            _mm_into(P, P, T1)
            for i in range(n):
                for j in range(n):
                    P[i, j] = T1[i, j]
        for i in range(n):
            for j in range(n):
                out[q, i, j] = P[i, j]
    return out


def expm_batch_numba(A):
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError("expected a stack of square matrices with shape (N, n, n)")
    return _expm_stack(A, _B_TABLE, _B13, _THETA)


if USE_NUMBA:
    BACKEND = "numba"
    risk_set_sums = risk_set_sums_numba
    expm_batch = expm_batch_numba
else:
    BACKEND = "numpy"
    risk_set_sums = risk_set_sums_numpy
    expm_batch = expm_batch_numpy

if not HAVE_NUMBA:  # pragma: no cover
    risk_set_sums_numba = None
    expm_batch_numba = None


def expm(A):
    """Matrix exponential of a single square matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expm needs a square matrix")
    return expm_batch(A[None])[0]
