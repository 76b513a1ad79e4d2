"""Numeric inner loops used by scoring, orientation and aggregation.

Every kernel has two implementations with identical semantics:

* a loop-level version compiled with ``numba.njit`` (the default), and
* a vectorised pure-numpy version.

Set ``CAUSIL_DISABLE_NUMBA=1`` before import to run the numpy versions (or
when numba is not installed). Both variants are always importable under the
``*_numba`` / ``*_numpy`` names so they can be compared side by side, see
``benchmarks/bench_kernels.py``.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("CAUSIL_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")

MEAN, MAX, MIN, SUM = 0, 1, 2, 3
AGG_CODES = {"mean": MEAN, "max": MAX, "min": MIN, "sum": SUM}


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# subset least squares on a precomputed Gram matrix
# ---------------------------------------------------------------------------

def _subset_rss_loop(G, idx, t, ridge_rel):
    m = idx.shape[0]
    yy = G[t, t]
    if m == 0:
        return yy
    A = np.empty((m, m))
    b = np.empty(m)
    tr = 0.0
    for i in range(m):
        b[i] = G[idx[i], t]
        for j in range(m):
            A[i, j] = G[idx[i], idx[j]]
        tr += A[i, i]
    lam = ridge_rel * tr / m
    if lam <= 0.0:
        lam = ridge_rel
    L = np.zeros((m, m))
    for j in range(m):
        s = A[j, j] + lam
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return np.nan
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, m):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    z = np.empty(m)
    for i in range(m):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    beta = np.empty(m)
    for i in range(m - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, m):
            s -= L[k, i] * beta[k]
        beta[i] = s / L[i, i]
    bb = 0.0
    q = 0.0
    for i in range(m):
        bb += beta[i] * b[i]
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * beta[j]
        q += beta[i] * acc
    return yy - 2.0 * bb + q


def subset_rss_numpy(G, idx, t, ridge_rel):
    """Residual sum of squares of column ``t`` regressed on columns ``idx``.

    ``G`` is the Gram matrix of centred basis columns, so no intercept column
    is needed. The normal equations get ``ridge_rel * mean(diag)`` added to the
    diagonal. Returns NaN when the ridged system is not positive definite.
    """
    m = idx.shape[0]
    yy = float(G[t, t])
    if m == 0:
        return yy
    A = G[np.ix_(idx, idx)]
    b = G[idx, t]
    lam = ridge_rel * np.trace(A) / m
    if lam <= 0.0:
        lam = ridge_rel
    try:
        L = np.linalg.cholesky(A + lam * np.eye(m))
    except np.linalg.LinAlgError:
        return np.nan
    beta = np.linalg.solve(L.T, np.linalg.solve(L, b))
    return yy - 2.0 * float(beta @ b) + float(beta @ A @ beta)


# ---------------------------------------------------------------------------
# Meek closure on an adjacency-mark matrix
#
# A[i, j] and not A[j, i]  -> i -> j
# A[i, j] and A[j, i]      -> i -- j
# F[i, j]                  -> orienting i -> j is forbidden
# ---------------------------------------------------------------------------

def _meek_fires(A, rule, i, j):
    n = A.shape[0]
    if rule == 1:
        for k in range(n):
            if k != j and A[k, i] and not A[i, k] and not A[k, j] and not A[j, k]:
                return True
        return False
    if rule == 2:
        for k in range(n):
            if A[i, k] and not A[k, i] and A[k, j] and not A[j, k]:
                return True
        return False
    if rule == 3:
        for k in range(n):
            if k == j or not (A[i, k] and A[k, i] and A[k, j] and not A[j, k]):
                continue
            for m in range(k + 1, n):
                if m == j or not (A[i, m] and A[m, i] and A[m, j] and not A[j, m]):
                    continue
                if not A[k, m] and not A[m, k]:
                    return True
        return False
    for k in range(n):
        if k == j or not (A[i, k] and A[k, i]) or A[k, j] or A[j, k]:
            continue
        for m in range(n):
            if m == i or m == k or m == j:
                continue
            if A[k, m] and not A[m, k] and A[m, j] and not A[j, m] and (A[i, m] or A[m, i]):
                return True
    return False


def _meek_loop(A0, F):
    n = A0.shape[0]
    A = A0.copy()
    blocked = np.zeros((n, n), dtype=np.bool_)
    while True:
        changed = False
        for rule in range(1, 5):
            O = np.zeros((n, n), dtype=np.bool_)
            hit = False
            for i in range(n):
                for j in range(n):
                    if i == j or not (A[i, j] and A[j, i]):
                        continue
                    if _meek_fires(A, rule, i, j):
                        if F[i, j]:
                            blocked[i, j] = True
                        else:
                            O[i, j] = True
                            hit = True
            if hit:
                for i in range(n):
                    for j in range(n):
                        if O[i, j]:
                            if O[j, i]:
                                return A, blocked, 1
                            A[j, i] = False
                changed = True
                break
        if not changed:
            break
    return A, blocked, 0


def _meek_masks_numpy(A, rule):
    n = A.shape[0]
    Ai = A.astype(np.int64)
    D = Ai * (1 - Ai.T)
    U = Ai * Ai.T
    adj = np.maximum(Ai, Ai.T)
    N = (1 - adj) * (1 - np.eye(n, dtype=np.int64))
    if rule == 1:
        fires = (D.T @ N) > 0
    elif rule == 2:
        fires = (D @ D) > 0
    elif rule == 3:
        K = U[:, :, None] * D[None, :, :]  # K[i, k, j] = i--k and k->j
        fires = np.einsum("ikj,kl,ilj->ij", K, N, K) > 0
    else:
        fires = np.einsum("ik,kl,lj,kj,il->ij", U, D, D, N, adj) > 0
    return (U > 0) & fires


def meek_numpy(A0, F):
    """Apply the four Meek rules to fixpoint.

    Returns ``(A, blocked, status)``; ``blocked[i, j]`` marks rule firings
    that were suppressed because ``i -> j`` is forbidden, ``status`` is 1 when
    two rules demand opposite orientations of the same edge.
    """
    A = A0.copy()
    blocked = np.zeros(A.shape, dtype=np.bool_)
    while True:
        changed = False
        for rule in (1, 2, 3, 4):
            fires = _meek_masks_numpy(A, rule)
            blocked |= fires & F
            O = fires & ~F
            if O.any():
                if (O & O.T).any():
                    return A, blocked, 1
                A[O.T] = False
                changed = True
                break
        if not changed:
            return A, blocked, 0


# ---------------------------------------------------------------------------
# per-timestamp reductions over instances
# ---------------------------------------------------------------------------

def _segment_reduce_loop(values, offsets, op):
    nseg = offsets.shape[0] - 1
    out = np.empty(nseg)
    for s in range(nseg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi <= lo:
            out[s] = np.nan
            continue
        acc = values[lo]
        for r in range(lo + 1, hi):
            v = values[r]
            if op == MAX:
                if v > acc:
                    acc = v
            elif op == MIN:
                if v < acc:
                    acc = v
            else:
                acc += v
        if op == MEAN:
            acc /= hi - lo
        out[s] = acc
    return out


def segment_reduce_numpy(values, offsets, op):
    """Reduce ``values[offsets[s]:offsets[s+1]]`` for every segment ``s``.

    ``op`` is one of MEAN, MAX, MIN, SUM. Empty segments give NaN.
    """
    counts = np.diff(offsets)
    out = np.full(counts.shape[0], np.nan)
    nonempty = counts > 0
    if not nonempty.any():
        return out
    starts = offsets[:-1][nonempty]
    if op == MAX:
        red = np.maximum.reduceat(values, starts)
    elif op == MIN:
        red = np.minimum.reduceat(values, starts)
    else:
        red = np.add.reduceat(values, starts)
        if op == MEAN:
            red = red / counts[nonempty]
    out[nonempty] = red
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    subset_rss_numba = _jit(_subset_rss_loop)
    _meek_fires = _jit(_meek_fires)
    meek_numba = _jit(_meek_loop)
    segment_reduce_numba = _jit(_segment_reduce_loop)
else:  # pragma: no cover
    subset_rss_numba = _subset_rss_loop
    meek_numba = _meek_loop
    segment_reduce_numba = _segment_reduce_loop

if USE_NUMBA:
    subset_rss = subset_rss_numba
    meek = meek_numba
    segment_reduce = segment_reduce_numba
else:
    subset_rss = subset_rss_numpy
    meek = meek_numpy
    segment_reduce = segment_reduce_numpy


def warmup() -> None:
    """Trigger (cached) compilation of every kernel on tiny inputs."""
    G = np.eye(3) * 4.0
    subset_rss(G, np.array([0, 1], dtype=np.int64), 2, 1e-8)
    A = np.zeros((3, 3), dtype=np.bool_)
    meek(A, np.zeros((3, 3), dtype=np.bool_))
    segment_reduce(np.ones(3), np.array([0, 1, 3], dtype=np.int64), MEAN)
