"""EM training loop: per-kind losses, strong/weak augmentation, and an exact-EM checker."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, NumericError
from .labels import Kind, noise_ratio
from .model import (OptimizerState, entropy_balance_loss, forward, init_classifier, log_softmax,
                    sgd_step, soft_cross_entropy, softmax, softmax_backward)
from .noise import (NoiseModel, observed_set_nll, omega_grad, transition_matrix,
                    transition_recovery_error)
from .posterior import posterior_targets

TASKS = ("supervised", "pll", "ssl", "nll", "mixed")

# label kinds each task accepts
TASK_KINDS = {
    "supervised": {Kind.EXACT},
    "pll": {Kind.EXACT, Kind.PARTIAL},
    "ssl": {Kind.EXACT, Kind.UNLABELED},
    "nll": {Kind.EXACT, Kind.NOISY},
    "mixed": set(Kind),
}

DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    task: str = "supervised"
    epochs: int = 40
    batch_size: int = 64
    unlabeled_ratio: int = 1
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    noise_lr: float | None = None
    entropy_weight: float = 0.1
    weak_std: float = 0.05
    strong_std: float = 0.2
    strong_dropout: float = 0.0
    ema: float = 0.0
    noise_scale: float = 1.0
    arch: str = "linear"
    hidden: int = 64
    seed: int = 0

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.entropy_weight < 0:
            raise ConfigError("entropy_weight must be >= 0")
        if self.weak_std > self.strong_std:
            raise ConfigError("weak augmentation must not be stronger than strong augmentation")
        if not 0.0 <= self.strong_dropout < 1.0:
            raise ConfigError("strong_dropout must lie in [0, 1)")
        if not 0.0 <= self.ema < 1.0:
            raise ConfigError("ema momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.unlabeled_ratio < 1:
            raise ConfigError("epochs must be >= 0; batch_size and unlabeled_ratio >= 1")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricsRecord:
    epoch: int
    loss_total: float
    loss_consistency: float
    loss_supervised: float
    loss_entropy: float
    test_acc: float | None = None
    obs_loglik: float | None = None
    transition_tv: float | None = None


METRIC_FIELDS = [f.name for f in fields(MetricsRecord)]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".17g")


def write_metrics(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in records:
            w.writerow([_cell(getattr(r, k)) for k in METRIC_FIELDS])


def read_metrics(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vals = {k: (None if row[k] == "" else float(row[k])) for k in METRIC_FIELDS}
            vals["epoch"] = int(vals["epoch"])
            out.append(MetricsRecord(**vals))
    return out


# ---------------------------------------------------------------------------
# labels as the learner sees them

@dataclass
class LabelArrays:
    kinds: np.ndarray
    label: np.ndarray
    candidates: np.ndarray

    def take(self, idx):
        return LabelArrays(self.kinds[idx], self.label[idx], self.candidates[idx])

    @property
    def has_noise(self):
        return bool(np.isin(self.kinds, (Kind.NOISY, Kind.NOISY_PARTIAL)).any())


def effective_labels(dataset):
    """Rewrite labels whose posterior is a point mass regardless of the model as exact.

    A one-element candidate set is an exact label, and when the dataset's
    metadata declares a zero noise ratio its noisy labels are clean.
    """
    kinds = dataset.kinds.copy()
    label = dataset.label.copy()
    cand = dataset.candidates.copy()
    if noise_ratio(dataset.meta) == 0:
        nz = kinds == Kind.NOISY
        kinds[nz] = Kind.EXACT
        kinds[kinds == Kind.NOISY_PARTIAL] = Kind.PARTIAL
    single = (kinds == Kind.PARTIAL) & (cand.sum(axis=1) == 1)
    if single.any():
        rows = np.flatnonzero(single)
        kinds[rows] = Kind.EXACT
        label[rows] = cand[rows].argmax(axis=1)
    return LabelArrays(kinds, label, cand)


def _check_task(task, labels):
    present = {Kind(int(k)) for k in np.unique(labels.kinds)}
    extra = present - TASK_KINDS[task]
    if extra:
        names = ", ".join(sorted(k.name.lower() for k in extra))
        raise ConfigError(f"task {task!r} cannot train on label kinds: {names}")


def _label_mask(labels, C):
    """One-hot or candidate mask of the observed label set for the noisy kinds."""
    mask = labels.candidates.astype(np.float64)
    nz = np.flatnonzero(labels.kinds == Kind.NOISY)
    mask[nz] = 0.0
    mask[nz, labels.label[nz]] = 1.0
    return mask


# ---------------------------------------------------------------------------
# augmentation

def augment(features, kind, cfg, rng, scale=None):
    """Feature-space augmentation: Gaussian jitter, plus inverted dropout for ``strong``.

    Noise is ``std * scale`` where ``scale`` is the per-feature training std.
    All random draws happen whatever the strengths, keeping streams aligned.
    """
    X = np.asarray(features, dtype=np.float64)
    scale = np.ones(X.shape[-1]) if scale is None else scale
    if kind == "weak":
        return X + rng.standard_normal(X.shape) * (cfg.weak_std * scale)
    if kind != "strong":
        raise ContractError(f"augmentation kind must be weak or strong, got {kind!r}")
    out = X + rng.standard_normal(X.shape) * (cfg.strong_std * scale)
    keep = rng.random(X.shape) >= cfg.strong_dropout
    return np.where(keep, out / (1.0 - cfg.strong_dropout), 0.0)


# ---------------------------------------------------------------------------
# losses

@dataclass
class Batch:
    weak: np.ndarray
    strong: np.ndarray
    labels: LabelArrays
    index: np.ndarray | None = None
    weights: np.ndarray | None = None   # per-sample loss weights, default 1/B


@dataclass
class Frozen:
    """Quantities held at the E-step parameters: soft targets and the transition matrix."""

    targets: np.ndarray
    T: np.ndarray | None = None


@dataclass
class LossResult:
    total: float
    consistency: float
    supervised: float
    entropy: float
    grads: dict
    omega_grad: np.ndarray | None
    frozen: Frozen
    weak_pred: np.ndarray


def e_step(pred, labels, T=None):
    return posterior_targets(pred, labels.kinds, labels.label, labels.candidates, T)


def batch_loss(batch, classifier, noise, cfg, frozen=None, target_fn=None):
    """Weighted per-sample loss of the batch plus the entropy-balance term, with gradients.

    Sample weights default to ``1/B`` (the batch mean).

    Exact labels: CE on the weak view. Partial and unlabeled: CE of the strong
    view against the detached posterior of the weak view. Noisy (and noisy
    partial): the strong view reweighted by the frozen transition likelihood
    against the detached posterior, plus ``-log`` of the weak view's noisy
    marginal summed over the observed label set, which trains ``omega``.
    """
    labels = batch.labels
    B = labels.kinds.shape[0]
    if B == 0:
        raise ContractError("empty batch")
    if labels.has_noise and noise is None:
        raise ConfigError("batch contains noisy labels but no noise model was given")
    C = classifier.C
    wts = np.full(B, 1.0 / B) if batch.weights is None else np.asarray(batch.weights)

    zw, cache_w = classifier.logits(batch.weak)
    zs, cache_s = classifier.logits(batch.strong)
    pw = softmax(zw)
    ps = softmax(zs)
    T = transition_matrix(noise) if noise is not None else None
    if frozen is None:
        targets = e_step(pw, labels, T)
        if target_fn is not None:
            targets = target_fn(targets)
        frozen = Frozen(targets, T)
    targets = frozen.targets

    per_sample = np.zeros(B)
    sup = np.zeros(B)
    dzw = np.zeros((B, C))
    dzs = np.zeros((B, C))
    dT = None
    kinds = labels.kinds

    ex = np.flatnonzero(kinds == Kind.EXACT)
    if ex.size:
        loss, g = soft_cross_entropy(pw[ex], targets[ex], check=False)
        sup[ex] += loss
        dzw[ex] += g

    plain = np.flatnonzero((kinds == Kind.PARTIAL) | (kinds == Kind.UNLABELED))
    if plain.size:
        loss, g = soft_cross_entropy(ps[plain], targets[plain], check=False)
        per_sample[plain] += loss
        dzs[plain] += g

    nz = np.flatnonzero((kinds == Kind.NOISY) | (kinds == Kind.NOISY_PARTIAL))
    if nz.size:
        mask = _label_mask(labels.take(nz), C)
        # student branch: strong prediction joined with the frozen noise likelihood
        w = mask @ frozen.T.T
        q = ps[nz] * w
        q /= q.sum(axis=1, keepdims=True)
        loss, g = soft_cross_entropy(q, targets[nz], check=False)
        per_sample[nz] += loss
        dzs[nz] += g
        loss, dpred, dT = observed_set_nll(pw[nz], mask, T, wts[nz])
        sup[nz] += loss
        dzw[nz] += softmax_backward(pw[nz], dpred)

    bad = np.flatnonzero(~np.isfinite(per_sample + sup))
    if bad.size:
        raise NumericError(f"non-finite loss at batch sample {int(bad[0])}")

    ent, dent = entropy_balance_loss(pw)
    lam = cfg.entropy_weight
    dzw = dzw * wts[:, None]
    if lam:
        dzw += lam * softmax_backward(pw, dent)
    dzs = dzs * wts[:, None]

    grads = classifier.backward(cache_w, dzw)
    for k, v in classifier.backward(cache_s, dzs).items():
        grads[k] += v
    og = omega_grad(T, dT) if dT is not None else (np.zeros_like(noise.omega)
                                                      if noise is not None else None)
    cons = float(per_sample @ wts)
    supervised = float(sup @ wts)
    return LossResult(cons + supervised + lam * ent, cons, supervised, ent, grads, og, frozen, pw)


# ---------------------------------------------------------------------------
# observed-data likelihood

def _log_likelihood_terms(labels, C, T):
    """log P(I | y) per sample and class (-inf where impossible)."""
    n = labels.kinds.shape[0]
    out = np.zeros((n, C))
    kinds = labels.kinds
    with np.errstate(divide="ignore"):
        ex = np.flatnonzero(kinds == Kind.EXACT)
        out[ex] = -np.inf
        out[ex, labels.label[ex]] = 0.0
        part = kinds == Kind.PARTIAL
        out[part] = np.where(labels.candidates[part], 0.0, -np.inf)
        nz = np.flatnonzero((kinds == Kind.NOISY) | (kinds == Kind.NOISY_PARTIAL))
        if nz.size:
            if T is None:
                raise ConfigError("noisy labels need a noise model")
            logT = np.log(T)
            mask = _label_mask(labels.take(nz), C).astype(bool)
            # log sum_{c in s} T[y, c] for every (sample, y)
            cand = np.where(mask[:, None, :], logT[None, :, :], -np.inf)
            m = cand.max(axis=2, keepdims=True)
            out[nz] = (m + np.log(np.exp(cand - m).sum(axis=2, keepdims=True)))[:, :, 0]
    return out


def _lse(a, axis=1):
    m = a.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    return (safe + np.log(np.exp(a - safe).sum(axis=axis, keepdims=True))).squeeze(axis)


def observed_loglik(classifier, features, labels, noise=None):
    """Sum over samples of log P(observed label information | x)."""
    z, _ = classifier.logits(features)
    T = transition_matrix(noise) if noise is not None else None
    return float(_lse(log_softmax(z) + _log_likelihood_terms(labels, classifier.C, T)).sum())


def evaluate(classifier, dataset):
    """Top-1 accuracy against the true labels; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ContractError("empty test set")
    z, _ = classifier.logits(dataset.features)
    return float(np.mean(np.argmax(z, axis=1) == dataset.true_labels))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    classifier: object
    noise: NoiseModel | None
    metrics: list = field(default_factory=list)


class _Sampler:
    """Minibatch index stream.

    When the data mixes unlabeled and labeled samples, each step pairs
    ``batch_size * unlabeled_ratio`` unlabeled samples (one epoch is one pass
    over them) with a labeled batch cycled from its own permutation; each part
    is averaged separately. Otherwise batches are plain slices of a shuffle.
    """

    def __init__(self, labels, cfg, rng):
        self.rng = rng
        self.bs = cfg.batch_size
        n = labels.kinds.shape[0]
        unl = labels.kinds == Kind.UNLABELED
        self.split = bool(unl.any() and (~unl).any())
        if self.split:
            self.lab = np.flatnonzero(~unl)
            self.unl = np.flatnonzero(unl)
            self.bu = cfg.batch_size * cfg.unlabeled_ratio
            self.bl = min(cfg.batch_size, self.lab.size)
            self.steps = math.ceil(self.unl.size / self.bu)
            self._queue = np.zeros(0, dtype=np.int64)
        else:
            self.n = n
            self.steps = math.ceil(n / cfg.batch_size)

    def _labeled(self):
        while self._queue.size < self.bl:
            self._queue = np.concatenate((self._queue, self.lab[self.rng.permutation(self.lab.size)]))
        out, self._queue = self._queue[:self.bl], self._queue[self.bl:]
        return out

    def epoch(self):
        if not self.split:
            perm = self.rng.permutation(self.n)
            for b in range(self.steps):
                yield perm[b * self.bs:(b + 1) * self.bs], None
            return
        perm = self.unl[self.rng.permutation(self.unl.size)]
        for b in range(self.steps):
            u = perm[b * self.bu:(b + 1) * self.bu]
            lab = self._labeled()
            wts = np.concatenate((np.full(lab.size, 1.0 / lab.size), np.full(u.size, 1.0 / u.size)))
            yield np.concatenate((lab, u)), wts


def _streams(seed):
    init, order, aug = np.random.SeedSequence(seed).spawn(3)
    return (int(np.random.default_rng(init).integers(2 ** 63)),
            np.random.default_rng(order), np.random.default_rng(aug))


def train(dataset, cfg, test=None, T_true=None, on_epoch=None):
    """Online EM: each minibatch takes an E-step at the current parameters and one SGD step."""
    cfg.validate()
    labels = effective_labels(dataset)
    _check_task(cfg.task, labels)
    N, C = len(dataset), dataset.C
    init_seed, order_rng, aug_rng = _streams(cfg.seed)
    clf = init_classifier(dataset.D, C, cfg.arch, cfg.hidden, seed=init_seed)
    noise = NoiseModel.zeros(C, cfg.noise_scale) if labels.has_noise else None
    result = TrainResult(clf, noise)
    if cfg.epochs == 0 or N == 0:
        return result

    sampler = _Sampler(labels, cfg, order_rng)
    steps = sampler.steps
    K = cfg.epochs * steps
    opt = OptimizerState(cfg.lr, K, cfg.momentum, cfg.weight_decay)
    nopt = None
    if noise is not None:
        nlr = cfg.lr if cfg.noise_lr is None else cfg.noise_lr
        nopt = OptimizerState(nlr, K, cfg.momentum, 0.0)
    scale = dataset.features.std(axis=0)
    scale[scale == 0] = 1.0

    ema_buf = ema_seen = None
    if cfg.ema > 0:
        ema_buf = np.zeros((N, C))
        ema_seen = np.zeros(N, dtype=bool)

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        for idx, wts in sampler.epoch():
            X = dataset.features[idx]
            batch = Batch(augment(X, "weak", cfg, aug_rng, scale),
                          augment(X, "strong", cfg, aug_rng, scale),
                          labels.take(idx), idx, wts)
            target_fn = None
            if ema_buf is not None:
                def target_fn(t, idx=idx):
                    prev = np.where(ema_seen[idx, None], ema_buf[idx], t)
                    t = cfg.ema * prev + (1.0 - cfg.ema) * t
                    ema_buf[idx] = t
                    ema_seen[idx] = True
                    return t
            res = batch_loss(batch, clf, noise, cfg, target_fn=target_fn)
            if not math.isfinite(res.total) or res.total > DIVERGENCE_LIMIT:
                raise DivergenceError(f"loss {res.total} diverged in epoch {epoch}", epoch)
            sgd_step(clf.params, opt, res.grads)
            if noise is not None:
                sgd_step({"omega": noise.omega}, nopt, {"omega": res.omega_grad})
            sums += (res.total, res.consistency, res.supervised, res.entropy)
        sums /= steps
        rec = MetricsRecord(
            epoch, *(float(v) for v in sums),
            test_acc=evaluate(clf, test) if test is not None else None,
            obs_loglik=observed_loglik(clf, dataset.features, labels, noise) / N,
            transition_tv=(transition_recovery_error(transition_matrix(noise), T_true)
                           if noise is not None and T_true is not None else None),
        )
        result.metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return result


# ---------------------------------------------------------------------------
# exact EM

@dataclass
class EMTrace:
    loglik: list
    accepted: list
    classifier: object
    noise: NoiseModel | None


def _q_value(classifier, noise, X, labels, targets):
    z, cache = classifier.logits(X)
    logp = log_softmax(z)
    T = transition_matrix(noise) if noise is not None else None
    loglik = _log_likelihood_terms(labels, classifier.C, T)
    live = targets > 0
    val = float(np.where(live, targets * (logp + np.where(live, loglik, 0.0)), 0.0).sum())
    return val, z, cache, T


def _q_grads(classifier, noise, X, labels, targets):
    """Gradient of Q (to be ascended) w.r.t. classifier params and omega."""
    _, z, cache, T = _q_value(classifier, noise, X, labels, targets)
    p = softmax(z)
    grads = classifier.backward(cache, targets - p)
    og = None
    if noise is not None:
        nz = np.flatnonzero(np.isin(labels.kinds, (Kind.NOISY, Kind.NOISY_PARTIAL)))
        G = np.zeros_like(T)
        if nz.size:
            mask = _label_mask(labels.take(nz), classifier.C)
            w = mask @ T.T
            G = (targets[nz] / w).T @ mask
        og = omega_grad(T, G)
    return grads, og


def exact_em_check(dataset, classifier, noise=None, m_steps=5, iterations=50, lr=0.5,
                   max_halvings=40):
    """Full-batch generalized EM on un-augmented features; returns the observed log-likelihood trace.

    Each M-step takes ``m_steps`` gradient-ascent steps on the expected
    complete-data log-likelihood Q, keeping a step only if Q does not drop
    and halving the step size otherwise.
    """
    if len(dataset) > 2000:
        raise ContractError("exact_em_check is full-batch; use at most 2000 samples")
    clf = classifier.copy()
    labels = LabelArrays(dataset.kinds.copy(), dataset.label.copy(), dataset.candidates.copy())
    if labels.has_noise and noise is None:
        noise = NoiseModel.zeros(dataset.C)
    noise = noise.copy() if noise is not None else None
    X = dataset.features
    trace = [observed_loglik(clf, X, labels, noise)]
    accepted = []
    step = lr
    for _ in range(iterations):
        T = transition_matrix(noise) if noise is not None else None
        targets = e_step(forward(clf, X), labels, T)
        q_old, *_ = _q_value(clf, noise, X, labels, targets)
        n_acc = 0
        for _ in range(m_steps):
            grads, og = _q_grads(clf, noise, X, labels, targets)
            for _ in range(max_halvings):
                trial = clf.copy()
                for k, g in grads.items():
                    trial.params[k] += step * g / len(dataset)
                trial_noise = None
                if noise is not None:
                    trial_noise = noise.copy()
                    trial_noise.omega += step * og / len(dataset)
                q_new, *_ = _q_value(trial, trial_noise, X, labels, targets)
                if q_new >= q_old:
                    clf, noise, q_old = trial, trial_noise, q_new
                    n_acc += 1
                    break
                step *= 0.5
            else:
                break
        accepted.append(n_acc)
        trace.append(observed_loglik(clf, X, labels, noise))
        if not math.isfinite(trace[-1]):
            raise NumericError("observed log-likelihood became non-finite")
    return EMTrace(trace, accepted, clf, noise)


def config_dict(cfg):
    return asdict(cfg)
