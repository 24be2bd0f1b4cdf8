"""Forward-backward and enumeration kernels over a label-constraint trellis.

Each kernel has a loop version compiled with numba and a vectorized numpy
version; :mod:`imprecise_em.automaton` picks one according to ``USE_NUMBA``.
Inputs are log scores ``ls[i, y] = log(emission * weight)`` with ``-inf`` for
disallowed symbols. Kernels return ``(log_alpha, log_beta, bad)`` where
``bad`` is the first position whose allowed mass is zero, or -1.
"""

import math

import numpy as np

from ._accel import njit

NEG_INF = -np.inf


@njit
def forward_backward_loops(ls):
    N, C = ls.shape
    la = np.full((N, C), -np.inf)
    lb = np.full((N, C), -np.inf)
    # per-position log mass; transitions are trivial, so both recursions only carry these
    tot = np.empty(N)
    for i in range(N):
        m = -np.inf
        for y in range(C):
            if ls[i, y] > m:
                m = ls[i, y]
        if m == -np.inf:
            return la, lb, i
        acc = 0.0
        for y in range(C):
            if ls[i, y] > -np.inf:
                acc += math.exp(ls[i, y] - m)
        tot[i] = m + math.log(acc)
    # forward: alpha(i, y) = [sum_{y'} alpha(i-1, y')] * score_i(y)
    carry = 0.0
    for i in range(N):
        for y in range(C):
            if ls[i, y] > -np.inf:
                la[i, y] = carry + ls[i, y]
        carry += tot[i]
    # backward: beta(i, y) = sum_{y'} score_{i+1}(y') * beta(i+1, y'), beta(N-1, .) = 1
    carry = 0.0
    for i in range(N - 1, -1, -1):
        for y in range(C):
            if ls[i, y] > -np.inf:
                lb[i, y] = carry
        carry += tot[i]
    return la, lb, -1


def _lse_rows(a):
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


def forward_backward_numpy(ls):
    N, C = ls.shape
    la = np.full((N, C), NEG_INF)
    lb = np.full((N, C), NEG_INF)
    totals = _lse_rows(ls)
    dead = np.flatnonzero(~np.isfinite(totals))
    if dead.size:
        return la, lb, int(dead[0])
    # with per-position constraints the forward carry is a prefix sum of totals
    before = np.concatenate(([0.0], np.cumsum(totals)[:-1]))
    after = np.concatenate((np.cumsum(totals[::-1])[::-1][1:], [0.0]))
    allowed = np.isfinite(ls)
    la = np.where(allowed, before[:, None] + ls, NEG_INF)
    lb = np.where(allowed, after[:, None], NEG_INF)
    return la, lb, -1


@njit
def brute_force_loops(scores):
    """Per-position marginals and total mass by enumerating all C**N label sequences."""
    N, C = scores.shape
    marg = np.zeros((N, C))
    total = 0.0
    seq = np.zeros(N, dtype=np.int64)
    n_seq = C ** N
    for _ in range(n_seq):
        w = 1.0
        for i in range(N):
            w *= scores[i, seq[i]]
        if w > 0.0:
            total += w
            for i in range(N):
                marg[i, seq[i]] += w
        # odometer increment, last position fastest
        j = N - 1
        while j >= 0:
            seq[j] += 1
            if seq[j] < C:
                break
            seq[j] = 0
            j -= 1
    return marg, total


def brute_force_numpy(scores):
    N, C = scores.shape
    grids = np.indices((C,) * N, dtype=np.int32).reshape(N, -1)  # (N, C**N)
    w = np.prod(scores[np.arange(N)[:, None], grids], axis=0)
    total = w.sum()
    marg = np.zeros((N, C))
    for i in range(N):
        marg[i] = np.bincount(grids[i], weights=w, minlength=C)
    return marg, total
