"""E-step targets: the posterior over the true class given each kind of imprecise label.

Every function accepts a single prediction (shape ``(C,)``) or a batch
(``(B, C)``) and returns a :class:`PosteriorTarget` of matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .labels import Kind

FLOOR = 1e-12


@dataclass
class PosteriorTarget:
    probs: np.ndarray
    support: np.ndarray


def _as_batch(pred):
    pred = np.asarray(pred, dtype=np.float64)
    return pred[None, :] if pred.ndim == 1 else pred, pred.ndim == 1


def _as_mask(s, B, C):
    """Candidate sets as a (B, C) bool mask; accepts a mask or an iterable of indices."""
    if isinstance(s, np.ndarray) and s.dtype == bool:
        mask = np.atleast_2d(s)
    else:
        mask = np.zeros((1, C), dtype=bool)
        idx = list(s)
        if any(not 0 <= int(j) < C for j in idx):
            raise ContractError(f"candidate index outside [0, {C})")
        mask[0, [int(j) for j in idx]] = True
    mask = np.broadcast_to(mask, (B, C))
    if not mask.any(axis=1).all():
        raise ContractError("candidate set must be nonempty")
    return mask


def _out(probs, support, single):
    if single:
        return PosteriorTarget(probs[0], support[0])
    return PosteriorTarget(probs, support)


def _normalize(weighted, fallback):
    z = weighted.sum(axis=1, keepdims=True)
    bad = z[:, 0] < FLOOR
    out = weighted / np.where(bad[:, None], 1.0, z)
    if bad.any():
        out[bad] = fallback[bad]
    return out


def posterior_partial(pred, s):
    """Renormalize the prediction on the candidate set; uniform over it if the set has no mass."""
    p, single = _as_batch(pred)
    mask = _as_mask(s, *p.shape)
    w = np.where(mask, p, 0.0)
    uniform = mask / mask.sum(axis=1, keepdims=True)
    return _out(_normalize(w, uniform), mask.copy(), single)


def posterior_unlabeled(pred):
    p, single = _as_batch(pred)
    return _out(p.copy(), np.ones(p.shape, dtype=bool), single)


def _check_class(y, C):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any((y < 0) | (y >= C)):
        raise ContractError(f"class index outside [0, {C})")
    return y


def posterior_noisy(pred, y_hat, T):
    """target_y proportional to pred_y * T[y, y_hat]."""
    p, single = _as_batch(pred)
    B, C = p.shape
    y_hat = np.broadcast_to(_check_class(y_hat, C), (B,))
    w = p * np.asarray(T)[:, y_hat].T
    return _out(_normalize(w, p), np.ones((B, C), dtype=bool), single)


def posterior_noisy_partial(pred, s, T):
    """target_y proportional to pred_y * sum over candidates c of T[y, c]."""
    p, single = _as_batch(pred)
    mask = _as_mask(s, *p.shape)
    w = p * (mask.astype(np.float64) @ np.asarray(T).T)
    return _out(_normalize(w, p), np.ones(p.shape, dtype=bool), single)


def posterior_exact(y, C):
    single = np.ndim(y) == 0
    y = _check_class(y, C)
    probs = np.zeros((y.size, C))
    probs[np.arange(y.size), y] = 1.0
    return _out(probs, probs > 0, single)


def posterior_targets(pred, kinds, label, candidates, T=None):
    """Targets for a mixed batch described by the dataset's label columns.

    Rows of kind EXACT get one-hot targets; the noisy kinds need ``T``.
    """
    p, _ = _as_batch(pred)
    B, C = p.shape
    out = np.zeros_like(p)
    for kind in np.unique(kinds):
        rows = np.flatnonzero(kinds == kind)
        k = Kind(int(kind))
        if k in (Kind.NOISY, Kind.NOISY_PARTIAL) and T is None:
            raise ContractError("noisy labels need a transition matrix")
        if k is Kind.EXACT:
            out[rows, label[rows]] = 1.0
        elif k is Kind.PARTIAL:
            out[rows] = posterior_partial(p[rows], candidates[rows]).probs
        elif k is Kind.UNLABELED:
            out[rows] = p[rows]
        elif k is Kind.NOISY:
            out[rows] = posterior_noisy(p[rows], label[rows], T).probs
        else:
            out[rows] = posterior_noisy_partial(p[rows], candidates[rows], T).probs
    return out
