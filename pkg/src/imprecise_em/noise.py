"""Instance-independent noise transition model T(y_hat | y) = rowsoftmax(scale * I + omega)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import EPS, softmax, softmax_backward


@dataclass
class NoiseModel:
    omega: np.ndarray
    scale: float = 1.0

    @classmethod
    def zeros(cls, C, scale=1.0):
        return cls(np.zeros((C, C)), float(scale))

    @property
    def C(self):
        return self.omega.shape[0]

    @property
    def n_params(self):
        return self.omega.size

    def copy(self):
        return NoiseModel(self.omega.copy(), self.scale)


def transition_matrix(model):
    """Row-stochastic matrix; row y is the distribution of the observed label given true class y."""
    return softmax(model.scale * np.eye(model.C) + model.omega)


def noisy_marginal(pred, T):
    """p(y_hat | x) = sum_y pred_y T[y, y_hat]."""
    return np.asarray(pred, dtype=np.float64) @ np.asarray(T)


def omega_grad(T, dT):
    """Back-propagate dL/dT through the row softmax to dL/d omega."""
    return softmax_backward(T, dT)


def observed_set_nll(pred, mask, T, weights=None):
    """``-log sum_{y_hat in s} p(y_hat | x)`` per row, with gradients.

    A single noisy label is the one-element set. Returns
    ``(loss, dloss/dpred, dloss/dT)``; the last is summed over rows, each
    scaled by ``weights`` when given.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    mask = np.atleast_2d(mask).astype(np.float64)
    w = mask @ T.T                      # w[b, y] = sum_{c in s_b} T[y, c]
    m = (pred * w).sum(axis=1)
    loss = -np.log(m + EPS)
    inv = 1.0 / (m + EPS)
    dpred = -w * inv[:, None]
    if weights is not None:
        inv = inv * weights
    dT = -(pred * inv[:, None]).T @ mask
    return loss, dpred, dT


def noise_gradients(pred, y_hat, model):
    """Loss ``-log noisy_marginal(pred, T)[y_hat]`` and its gradients w.r.t. omega and the logits.

    ``pred`` is the softmax output of the classifier; returns
    ``(loss, d_omega, d_logits)`` summed over the batch.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    y_hat = np.atleast_1d(y_hat)
    T = transition_matrix(model)
    mask = np.zeros((pred.shape[0], model.C))
    mask[np.arange(pred.shape[0]), y_hat] = 1.0
    loss, dpred, dT = observed_set_nll(pred, mask, T)
    return float(loss.sum()), omega_grad(T, dT), softmax_backward(pred, dpred)


def transition_recovery_error(T_est, T_true):
    """Largest total-variation distance between corresponding rows."""
    diff = np.abs(np.asarray(T_est, dtype=np.float64) - np.asarray(T_true, dtype=np.float64))
    return float(0.5 * diff.sum(axis=1).max())


def _fmt(x):
    return float(format(float(x), ".17g"))


def dump_transition(model, path):
    T = transition_matrix(model)
    blob = {"C": model.C, "scale": _fmt(model.scale),
            "T": [[_fmt(v) for v in row] for row in T]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2)
    return blob


def load_transition(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return blob["C"], blob["scale"], np.asarray(blob["T"], dtype=np.float64)
