"""Small softmax classifiers with hand-written backprop, SGD, and gradient checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ScheduleExhaustedError, ShapeError

EPS = 1e-12


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_backward(probs, dprobs):
    """Map a gradient w.r.t. softmax outputs to one w.r.t. the logits."""
    return probs * (dprobs - (probs * dprobs).sum(axis=-1, keepdims=True))


@dataclass
class Classifier:
    """Linear or one-hidden-layer ReLU network producing class probabilities.

    Parameters live in ``params``: ``W``/``b`` for the linear head, plus
    ``W1``/``b1`` for the hidden layer of the MLP.
    """

    arch: str
    D: int
    C: int
    params: dict
    hidden: int = 0

    def copy(self):
        return Classifier(self.arch, self.D, self.C,
                          {k: v.copy() for k, v in self.params.items()}, self.hidden)

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.D:
            raise ShapeError(f"feature dimension {X.shape[-1]} does not match classifier D={self.D}")
        return X

    def logits(self, X):
        """Return ``(logits, cache)``; the cache feeds :meth:`backward`."""
        X = self._check(X)
        p = self.params
        if self.arch == "linear":
            return X @ p["W"] + p["b"], (X,)
        pre = X @ p["W1"] + p["b1"]
        h = np.maximum(pre, 0.0)
        return h @ p["W"] + p["b"], (X, pre, h)

    def backward(self, cache, dlogits):
        p = self.params
        if self.arch == "linear":
            (X,) = cache
            return {"W": X.T @ dlogits, "b": dlogits.sum(axis=0)}
        X, pre, h = cache
        dh = (dlogits @ p["W"].T) * (pre > 0)
        return {
            "W": h.T @ dlogits,
            "b": dlogits.sum(axis=0),
            "W1": X.T @ dh,
            "b1": dh.sum(axis=0),
        }


def init_classifier(D, C, arch="mlp", hidden=64, seed=0, zero_head=True):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; the output head starts at zero."""
    rng = np.random.default_rng(seed)
    params = {}
    if arch == "mlp":
        bound = 1.0 / math.sqrt(D)
        params["W1"] = rng.uniform(-bound, bound, size=(D, hidden))
        params["b1"] = rng.uniform(-bound, bound, size=hidden)
        fan_in = hidden
    elif arch == "linear":
        hidden = 0
        fan_in = D
    else:
        raise ContractError(f"unknown architecture {arch!r}")
    if zero_head:
        params["W"] = np.zeros((fan_in, C))
        params["b"] = np.zeros(C)
    else:
        bound = 1.0 / math.sqrt(fan_in)
        params["W"] = rng.uniform(-bound, bound, size=(fan_in, C))
        params["b"] = rng.uniform(-bound, bound, size=C)
    return Classifier(arch, D, C, params, hidden)


def forward(classifier, features):
    z, _ = classifier.logits(features)
    return softmax(z)


def _check_simplex(p, name):
    if np.any(p < -1e-12) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
        raise ContractError(f"{name} is not on the probability simplex")


def soft_cross_entropy(pred, target, check=True):
    """Per-row ``-sum(target * log(pred + eps))`` and its gradient w.r.t. the logits.

    ``target`` is a constant. The returned gradient is exact for the
    eps-guarded loss and equals ``pred - target`` up to O(eps).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if check:
        _check_simplex(pred, "pred")
        _check_simplex(target, "target")
    loss = -(target * np.log(pred + EPS)).sum(axis=-1)
    r = target * pred / (pred + EPS)
    grad = pred * r.sum(axis=-1, keepdims=True) - r
    return loss, grad


def entropy_balance_loss(batch):
    """Negative entropy of the batch-mean prediction, with its gradient w.r.t. each row.

    Returns ``(loss, dloss/dprobs)``; use :func:`softmax_backward` to reach logits.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ContractError("entropy_balance_loss needs a nonempty batch")
    mean = batch.mean(axis=0)
    loss = float((mean * np.log(mean + EPS)).sum())
    dmean = np.log(mean + EPS) + mean / (mean + EPS)
    dprobs = np.broadcast_to(dmean / batch.shape[0], batch.shape).copy()
    return loss, dprobs


def cosine_lr(lr0, k, K):
    return lr0 * math.cos(7.0 * math.pi * k / (16.0 * K))


@dataclass
class OptimizerState:
    lr0: float
    total_steps: int
    momentum: float = 0.9
    weight_decay: float = 5e-4
    step: int = 0
    buffers: dict = field(default_factory=dict)

    @property
    def lr(self):
        return cosine_lr(self.lr0, self.step, self.total_steps)


def sgd_step(params, state, grads, weight_decay=None):
    """In-place momentum SGD with decoupled weight decay on ``params`` (a dict of arrays).

    Returns ``state`` after advancing its step counter.
    """
    if state.step >= state.total_steps:
        raise ScheduleExhaustedError(
            f"step {state.step} is past the schedule length {state.total_steps}")
    lr = state.lr
    wd = state.weight_decay if weight_decay is None else weight_decay
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        buf = state.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p)
        buf *= state.momentum
        buf += g
        state.buffers[name] = buf
        if wd:
            p -= lr * wd * p
        p -= lr * buf
    state.step += 1
    return state


def finite_difference_check(params, loss_fn, eps=1e-6):
    """Largest relative discrepancy between analytic and central-difference gradients.

    ``params`` is a mapping of arrays (or a :class:`Classifier`) that
    ``loss_fn`` reads in place; ``loss_fn()`` returns ``(loss, grads)``.
    The error for each array is ``max|analytic - numeric| / max(max|numeric|, 1e-8)``
    and the worst array wins.
    """
    if isinstance(params, Classifier):
        params = params.params
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"perturbation {eps} outside [1e-7, 1e-4]")
    _, analytic = loss_fn()
    worst = 0.0
    for name, arr in params.items():
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()[0]
            flat[i] = orig - eps
            down = loss_fn()[0]
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            nflat[i] = (up - down) / (2.0 * eps)
        a = analytic.get(name, np.zeros_like(arr))
        err = np.max(np.abs(a - numeric)) / max(np.max(np.abs(numeric)), 1e-8)
        worst = max(worst, float(err))
    return worst
