"""Hot loops over lattice points.

Every kernel works in the rotated frame of a QR factorisation ``B = Q R``:
a target ``x`` becomes ``y = Q^T x`` and ``||B z - x|| = ||R z - y||`` for
integer ``z``.  ``R`` is upper triangular.

Each public function dispatches to a numba implementation (Fincke-Pohst
style depth-first enumeration) or to a pure-numpy fallback that scans an
integer box known to contain the ball.
"""
import itertools
import math

import numpy as np

from . import _accel
from ._accel import njit

# relative tolerance used to declare two squared distances tied
TIE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# numba implementations


@njit
def _nb_enum(R, y, r2, mode, s2, shift, skip_zero, zbuf, dbuf):
    # mode 0 stores points (count may exceed capacity, caller retries);
    # mode 1 accumulates sum exp(-(d2 - shift) / (2 s2)).
    n = R.shape[0]
    cap = zbuf.shape[0]
    z = np.zeros(n, np.int64)
    ub = np.zeros(n, np.int64)
    cen = np.zeros(n)
    part = np.zeros(n + 1)
    count = 0
    acc = 0.0
    i = n - 1
    cen[i] = y[i] / R[i, i]
    w = math.sqrt(r2) / abs(R[i, i])
    z[i] = np.int64(math.ceil(cen[i] - w))
    ub[i] = np.int64(math.floor(cen[i] + w))
    while True:
        if z[i] > ub[i]:
            i += 1
            if i == n:
                break
            z[i] += 1
            continue
        t = R[i, i] * (z[i] - cen[i])
        part[i] = part[i + 1] + t * t
        if i == 0:
            d2 = part[0]
            if d2 <= r2:
                if mode == 0:
                    if count < cap:
                        for j in range(n):
                            zbuf[count, j] = z[j]
                        dbuf[count] = d2
                    count += 1
                else:
                    zero = True
                    if skip_zero:
                        for j in range(n):
                            if z[j] != 0:
                                zero = False
                                break
                    if not (skip_zero and zero):
                        acc += math.exp(-(d2 - shift) / (2.0 * s2))
                    count += 1
            z[0] += 1
            continue
        rem = r2 - part[i]
        i -= 1
        if rem < 0.0:
            z[i] = 1
            ub[i] = 0
            continue
        s = y[i]
        for j in range(i + 1, n):
            s -= R[i, j] * z[j]
        cen[i] = s / R[i, i]
        w = math.sqrt(rem) / abs(R[i, i])
        z[i] = np.int64(math.ceil(cen[i] - w))
        ub[i] = np.int64(math.floor(cen[i] + w))
    return count, acc


@njit
def _nb_ball_points(R, y, r2, cap):
    n = R.shape[0]
    while True:
        zbuf = np.empty((cap, n), np.int64)
        dbuf = np.empty(cap)
        count, _ = _nb_enum(R, y, r2, 0, 1.0, 0.0, False, zbuf, dbuf)
        if count <= cap:
            return zbuf[:count].copy(), dbuf[:count].copy()
        cap = 2 * count


@njit
def _nb_gauss_sum(R, y, r2, s2, shift, skip_zero):
    n = R.shape[0]
    zbuf = np.empty((1, n), np.int64)
    dbuf = np.empty(1)
    _, acc = _nb_enum(R, y, r2, 1, s2, shift, skip_zero, zbuf, dbuf)
    return acc


@njit
def _nb_logsum_batch(R, Y, r2, s2, cap):
    m, n = Y.shape
    out = np.empty(m)
    zbuf = np.empty((cap, n), np.int64)
    dbuf = np.empty(cap)
    for r in range(m):
        count, _ = _nb_enum(R, Y[r], r2, 0, 1.0, 0.0, False, zbuf, dbuf)
        if count > zbuf.shape[0]:
            zbuf = np.empty((2 * count, n), np.int64)
            dbuf = np.empty(2 * count)
            count, _ = _nb_enum(R, Y[r], r2, 0, 1.0, 0.0, False, zbuf, dbuf)
        if count == 0:
            out[r] = -np.inf
            continue
        dmin = dbuf[0]
        for j in range(1, count):
            if dbuf[j] < dmin:
                dmin = dbuf[j]
        acc = 0.0
        for j in range(count):
            acc += math.exp(-(dbuf[j] - dmin) / (2.0 * s2))
        out[r] = math.log(acc) - dmin / (2.0 * s2)
    return out


@njit
def _nb_sample_batch(R, Y, r2, s2, U, cap):
    m, n = Y.shape
    out = np.empty((m, n), np.int64)
    zbuf = np.empty((cap, n), np.int64)
    dbuf = np.empty(cap)
    for r in range(m):
        count, _ = _nb_enum(R, Y[r], r2, 0, 1.0, 0.0, False, zbuf, dbuf)
        if count > zbuf.shape[0]:
            zbuf = np.empty((2 * count, n), np.int64)
            dbuf = np.empty(2 * count)
            count, _ = _nb_enum(R, Y[r], r2, 0, 1.0, 0.0, False, zbuf, dbuf)
        dmin = dbuf[0]
        for j in range(1, count):
            if dbuf[j] < dmin:
                dmin = dbuf[j]
        total = 0.0
        for j in range(count):
            dbuf[j] = math.exp(-(dbuf[j] - dmin) / (2.0 * s2))
            total += dbuf[j]
        target = U[r] * total
        cum = 0.0
        pick = count - 1
        for j in range(count):
            cum += dbuf[j]
            if cum > target:
                pick = j
                break
        for j in range(n):
            out[r, j] = zbuf[pick, j]
    return out


@njit
def _lex_less(a, b):
    for j in range(a.shape[0]):
        if a[j] < b[j]:
            return True
        if a[j] > b[j]:
            return False
    return False


@njit
def _nb_closest_batch(R, Y, scale):
    m, n = Y.shape
    out = np.empty((m, n), np.int64)
    z = np.zeros(n, np.int64)
    ub = np.zeros(n, np.int64)
    cen = np.zeros(n)
    part = np.zeros(n + 1)
    best_z = np.zeros(n, np.int64)
    for r in range(m):
        y = Y[r]
        # Babai nearest plane seed
        for i in range(n - 1, -1, -1):
            s = y[i]
            for j in range(i + 1, n):
                s -= R[i, j] * best_z[j]
            best_z[i] = np.int64(math.floor(s / R[i, i] + 0.5))
        best = 0.0
        for i in range(n):
            s = -y[i]
            for j in range(i, n):
                s += R[i, j] * best_z[j]
            best += s * s
        tol = TIE_RTOL * (best + scale)
        r2 = best + tol
        i = n - 1
        part[n] = 0.0
        cen[i] = y[i] / R[i, i]
        w = math.sqrt(r2) / abs(R[i, i])
        z[i] = np.int64(math.ceil(cen[i] - w))
        ub[i] = np.int64(math.floor(cen[i] + w))
        while True:
            if z[i] > ub[i]:
                i += 1
                if i == n:
                    break
                z[i] += 1
                continue
            t = R[i, i] * (z[i] - cen[i])
            part[i] = part[i + 1] + t * t
            if part[i] > r2:
                z[i] += 1
                continue
            if i == 0:
                d2 = part[0]
                if d2 < best - tol:
                    best = d2
                    for j in range(n):
                        best_z[j] = z[j]
                    tol = TIE_RTOL * (best + scale)
                    r2 = best + tol
                elif d2 <= best + tol and _lex_less(z, best_z):
                    if d2 < best:
                        best = d2
                    for j in range(n):
                        best_z[j] = z[j]
                z[0] += 1
                continue
            rem = r2 - part[i]
            i -= 1
            s = y[i]
            for j in range(i + 1, n):
                s -= R[i, j] * z[j]
            cen[i] = s / R[i, i]
            w = math.sqrt(rem) / abs(R[i, i])
            z[i] = np.int64(math.ceil(cen[i] - w))
            ub[i] = np.int64(math.floor(cen[i] + w))
        for j in range(n):
            out[r, j] = best_z[j]
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks


def _box_axes(R, y, r):
    t = np.linalg.solve(R, y)
    widths = r * np.linalg.norm(np.linalg.inv(R), axis=1)
    lo = np.ceil(t - widths).astype(np.int64)
    hi = np.floor(t + widths).astype(np.int64)
    return [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]


def _np_ball_points(R, y, r2):
    axes = _box_axes(R, y, math.sqrt(r2))
    if any(a.size == 0 for a in axes):
        return np.empty((0, R.shape[0]), np.int64), np.empty(0)
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, R.shape[0])
    d2 = ((Z @ R.T - y) ** 2).sum(axis=1)
    keep = d2 <= r2
    return Z[keep], d2[keep]


def _np_gauss_sum(R, y, r2, s2, shift, skip_zero):
    Z, d2 = _np_ball_points(R, y, r2)
    w = np.exp(-(d2 - shift) / (2.0 * s2))
    if skip_zero:
        w = w[np.any(Z != 0, axis=1)]
    return float(w.sum())


def _np_logsum_batch(R, Y, r2, s2):
    out = np.empty(Y.shape[0])
    for r, y in enumerate(Y):
        _, d2 = _np_ball_points(R, y, r2)
        if d2.size == 0:
            out[r] = -np.inf
            continue
        dmin = d2.min()
        out[r] = np.log(np.exp(-(d2 - dmin) / (2.0 * s2)).sum()) - dmin / (2.0 * s2)
    return out


def _np_sample_batch(R, Y, r2, s2, U):
    out = np.empty(Y.shape, np.int64)
    for r, y in enumerate(Y):
        Z, d2 = _np_ball_points(R, y, r2)
        w = np.exp(-(d2 - d2.min()) / (2.0 * s2))
        cum = np.cumsum(w)
        pick = min(int(np.searchsorted(cum, U[r] * cum[-1], side="right")), len(w) - 1)
        out[r] = Z[pick]
    return out


def _np_babai(R, Y):
    n = R.shape[0]
    Z = np.zeros(Y.shape, np.int64)
    for i in range(n - 1, -1, -1):
        s = Y[:, i] - Z[:, i + 1:] @ R[i, i + 1:]
        Z[:, i] = np.floor(s / R[i, i] + 0.5).astype(np.int64)
    return Z


def _np_closest_batch(R, Y, scale, max_candidates=2_000_000):
    m, n = Y.shape
    Zb = _np_babai(R, Y)
    best = ((Zb @ R.T - Y) ** 2).sum(axis=1)
    radius = np.sqrt(best + TIE_RTOL * (best + scale))
    Rinv = np.linalg.inv(R)
    T = Y @ Rinv.T
    widths = np.linalg.norm(Rinv, axis=1)
    half = np.ceil(radius.max() * widths).astype(np.int64) + 1
    offsets = np.array(list(itertools.product(*[range(-h, h + 1) for h in half])), np.int64)
    base = np.floor(T).astype(np.int64)
    out = np.empty((m, n), np.int64)
    chunk = max(1, max_candidates // len(offsets))
    for start in range(0, m, chunk):
        sl = slice(start, min(m, start + chunk))
        cand = base[sl, None, :] + offsets[None, :, :]
        d2 = ((cand @ R.T - Y[sl, None, :]) ** 2).sum(axis=2)
        dmin = d2.min(axis=1, keepdims=True)
        tied = d2 <= dmin + TIE_RTOL * (dmin + scale)
        # offsets are in lexicographic order, so the first tied candidate wins
        pick = np.argmax(tied, axis=1)
        out[sl] = cand[np.arange(cand.shape[0]), pick]
    return out


# ---------------------------------------------------------------------------
# dispatch


def _as2d(Y):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(Y, dtype=np.float64)))


def ball_points(R, y, r2):
    """All integer ``z`` with ``||R z - y||^2 <= r2`` and their squared distances."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if _accel._use_numba:
        return _nb_ball_points(R, y, float(r2), 1024)
    return _np_ball_points(R, y, float(r2))


def gauss_sum(R, y, r2, s2, shift=0.0, skip_zero=False):
    """``sum exp(-(d2 - shift) / (2 s2))`` over the ball, optionally without ``z = 0``."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if _accel._use_numba:
        return float(_nb_gauss_sum(R, y, float(r2), float(s2), float(shift), bool(skip_zero)))
    return _np_gauss_sum(R, y, float(r2), float(s2), float(shift), bool(skip_zero))


def logsum_batch(R, Y, r2, s2):
    """Row-wise ``log sum exp(-d2 / (2 s2))`` over the ball around each row of ``Y``."""
    Y = _as2d(Y)
    if _accel._use_numba:
        return _nb_logsum_batch(R, Y, float(r2), float(s2), 256)
    return _np_logsum_batch(R, Y, float(r2), float(s2))


def sample_batch(R, Y, r2, s2, U):
    """Inverse-CDF draw from the Gaussian-weighted ball around each row of ``Y``."""
    Y = _as2d(Y)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if _accel._use_numba:
        return _nb_sample_batch(R, Y, float(r2), float(s2), U, 256)
    return _np_sample_batch(R, Y, float(r2), float(s2), U)


def closest_batch(R, Y):
    """Exact closest integer vectors, ties to the lexicographically smallest."""
    Y = _as2d(Y)
    scale = float(np.mean(np.diag(R) ** 2))
    if _accel._use_numba:
        return _nb_closest_batch(R, Y, scale)
    return _np_closest_batch(R, Y, scale)
