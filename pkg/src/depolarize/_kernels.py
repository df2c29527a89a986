"""Compiled fixed-point sweeps for the Friedkin-Johnsen equilibrium.

All kernels use the same per-row arithmetic (CSR order, left to right), so a
batched candidate solve returns bit-identical results to a single solve
started from the same point.
"""
import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old for numba and only produces a warning
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True)
def _sweeps(indptr, indices, weights, denom, s, pinned, extra, z, buf, tol, max_iter):
    # z holds the warm start on entry and the last iterate on exit
    n = z.shape[0]
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        residual = 0.0
        for i in range(n):
            if pinned[i] or i == extra:
                buf[i] = 0.0
                continue
            acc = s[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += weights[p] * z[indices[p]]
            v = acc / denom[i]
            d = abs(v - z[i])
            if d > residual:
                residual = d
            buf[i] = v
        for i in range(n):
            z[i] = buf[i]
        if residual <= tol:
            break
    return it, residual


@njit(cache=True)
def solve_one(indptr, indices, weights, denom, s, pinned, z0, tol, max_iter):
    z = z0.copy()
    for i in range(z.shape[0]):
        if pinned[i]:
            z[i] = 0.0
    buf = np.empty_like(z)
    it, res = _sweeps(indptr, indices, weights, denom, s, pinned, -1, z, buf, tol, max_iter)
    return z, it, res


@njit(cache=True)
def _sum_sq(z):
    acc = 0.0
    for i in range(z.shape[0]):
        acc += z[i] * z[i]
    return acc


BLOCK = 16


@njit(cache=True)
def _pin_block(indptr, indices, weights, denom, s, pinned, cands, z0, tol, max_iter,
               sq, iters, resid):
    # Sweeps len(cands) independent systems at once, one column per candidate,
    # laid out (n, B) so each neighbour gather feeds B contiguous updates.
    # Column c sees exactly the operations _sweeps would apply, and freezes
    # once its own residual reaches tol.
    n = z0.shape[0]
    b = cands.shape[0]
    z = np.empty((n, b))
    buf = np.empty((n, b))
    for i in range(n):
        for c in range(b):
            z[i, c] = 0.0 if pinned[i] else z0[i]
    for c in range(b):
        z[cands[c], c] = 0.0
    active = np.ones(b, dtype=np.bool_)
    acc = np.empty(b)
    r = np.empty(b)
    for c in range(b):
        resid[c] = np.inf
        iters[c] = 0
    nact = b
    it = 0
    while nact > 0 and it < max_iter:
        it += 1
        for c in range(b):
            r[c] = 0.0
        for i in range(n):
            if pinned[i]:
                for c in range(b):
                    buf[i, c] = 0.0
                continue
            si = s[i]
            for c in range(b):
                acc[c] = si
            for p in range(indptr[i], indptr[i + 1]):
                w = weights[p]
                j = indices[p]
                for c in range(b):
                    acc[c] += w * z[j, c]
            di = denom[i]
            for c in range(b):
                v = acc[c] / di
                if cands[c] == i:
                    v = 0.0
                d = abs(v - z[i, c])
                if d > r[c]:
                    r[c] = d
                buf[i, c] = v
        for c in range(b):
            if active[c]:
                for i in range(n):
                    z[i, c] = buf[i, c]
                resid[c] = r[c]
                iters[c] = it
                if r[c] <= tol:
                    active[c] = False
                    nact -= 1
    for c in range(b):
        a = 0.0
        for i in range(n):
            a += z[i, c] * z[i, c]
        sq[c] = a


@njit(cache=True, parallel=True)
def pin_each(indptr, indices, weights, denom, s, pinned, z0, candidates, tol, max_iter):
    """For every candidate v, pin v on top of ``pinned`` and solve from ``z0``.

    Returns the sum of squared opinions at each candidate's equilibrium, the
    sweep counts and final residuals.
    """
    k = candidates.shape[0]
    sq = np.empty(k)
    iters = np.empty(k, dtype=np.int64)
    resid = np.empty(k)
    nblocks = (k + BLOCK - 1) // BLOCK
    for blk in prange(nblocks):
        lo = blk * BLOCK
        hi = min(lo + BLOCK, k)
        _pin_block(indptr, indices, weights, denom, s, pinned, candidates[lo:hi], z0, tol,
                   max_iter, sq[lo:hi], iters[lo:hi], resid[lo:hi])
    return sq, iters, resid


@njit(cache=True)
def sum_sq(z):
    return _sum_sq(z)
