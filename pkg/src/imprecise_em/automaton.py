"""Label-constraint automaton over a sample sequence and its forward-backward posteriors.

Each position i carries an allowed-symbol set, emission probabilities
``p(y_i | X)``, and optional symbol weights (the noise likelihood for noisy
positions). A path is one label per position; its score is the product of
emission times weight over positions, and the posterior at position i is
the share of total path mass passing through each symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from ._kernels import (brute_force_loops, brute_force_numpy, forward_backward_loops,
                       forward_backward_numpy)
from .errors import ConfigError, ContractError, DegeneratePositionError, SizeError
from .labels import Kind
from .posterior import PosteriorTarget

MAX_PATHS = 10 ** 6


@dataclass
class LabelNFA:
    allowed: np.ndarray                 # (N, C) bool
    emissions: np.ndarray               # (N, C), rows on the simplex
    weights: np.ndarray | None = None   # (N, C) nonnegative, None means all ones

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        self.emissions = np.asarray(self.emissions, dtype=np.float64)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.allowed.shape != self.emissions.shape:
            raise ContractError("allowed and emissions must have the same (N, C) shape")
        if not self.allowed.any(axis=1).all():
            bad = int(np.flatnonzero(~self.allowed.any(axis=1))[0])
            raise ContractError(f"position {bad} has an empty allowed set")

    @property
    def N(self):
        return self.allowed.shape[0]

    @property
    def C(self):
        return self.allowed.shape[1]

    def scores(self):
        s = np.where(self.allowed, self.emissions, 0.0)
        if self.weights is not None:
            s = s * self.weights
        return s


@dataclass
class TrellisScores:
    log_alpha: np.ndarray
    log_beta: np.ndarray

    def log_total(self):
        """Total path mass, which is the same at every position."""
        a = self.log_alpha + self.log_beta
        m = a.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _log_scores(nfa):
    with np.errstate(divide="ignore"):
        return np.log(nfa.scores())


def trellis(nfa, use_numba=None):
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    kernel = forward_backward_loops if use_numba else forward_backward_numpy
    la, lb, bad = kernel(_log_scores(nfa))
    if bad >= 0:
        raise DegeneratePositionError(int(bad))
    return TrellisScores(la, lb)


def forward_backward(nfa, use_numba=None):
    """Per-position posteriors via log-domain alpha/beta recursions."""
    tr = trellis(nfa, use_numba)
    joint = tr.log_alpha + tr.log_beta
    m = joint.max(axis=1, keepdims=True)
    post = np.exp(joint - m)
    post /= post.sum(axis=1, keepdims=True)
    allowed = nfa.allowed.copy()
    return [PosteriorTarget(p, a) for p, a in zip(post, allowed)]


def brute_force_posterior(nfa, use_numba=None):
    """Enumerate every label sequence; the oracle for :func:`forward_backward`."""
    if nfa.C ** nfa.N > MAX_PATHS:
        raise SizeError(f"C**N = {nfa.C}**{nfa.N} exceeds {MAX_PATHS} paths")
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    scores = nfa.scores()
    dead = np.flatnonzero(scores.sum(axis=1) <= 0.0)
    if dead.size:
        raise DegeneratePositionError(int(dead[0]))
    kernel = brute_force_loops if use_numba else brute_force_numpy
    marg, total = kernel(np.ascontiguousarray(scores))
    if total <= 0.0:
        raise DegeneratePositionError(0)
    allowed = nfa.allowed.copy()
    return [PosteriorTarget(m, a) for m, a in zip(marg / total, allowed)]


def nfa_from_dataset(dataset, emissions, T=None):
    """Build the automaton: exact -> singleton, partial -> candidates, others -> all classes.

    Noisy positions are weighted by ``T[y, y_hat]`` and noisy-partial ones by
    ``sum_{c in s} T[y, c]``. ``T`` may be a matrix or a NoiseModel.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    n, C = len(dataset), dataset.C
    if emissions.shape != (n, C):
        raise ContractError(f"emissions shape {emissions.shape} does not match dataset ({n}, {C})")
    kinds = dataset.kinds
    noisy = (kinds == Kind.NOISY) | (kinds == Kind.NOISY_PARTIAL)
    if noisy.any() and T is None:
        raise ConfigError("dataset has noisy labels but no noise model was given")
    if T is not None and not isinstance(T, np.ndarray):
        from .noise import transition_matrix
        T = transition_matrix(T)
    allowed = np.ones((n, C), dtype=bool)
    ex = np.flatnonzero(kinds == Kind.EXACT)
    allowed[ex] = False
    allowed[ex, dataset.label[ex]] = True
    part = kinds == Kind.PARTIAL
    allowed[part] = dataset.candidates[part]
    weights = None
    if noisy.any():
        weights = np.ones((n, C))
        nz = np.flatnonzero(kinds == Kind.NOISY)
        weights[nz] = T[:, dataset.label[nz]].T
        npart = kinds == Kind.NOISY_PARTIAL
        weights[npart] = dataset.candidates[npart].astype(np.float64) @ T.T
    return LabelNFA(allowed, emissions, weights)
