"""Imprecise-label data model, seeded corruption generators, and dataset CSV I/O."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatVersionError, ParseError


class Kind(IntEnum):
    EXACT = 0
    PARTIAL = 1
    UNLABELED = 2
    NOISY = 3
    NOISY_PARTIAL = 4


TAGS = {
    Kind.EXACT: "exact",
    Kind.PARTIAL: "partial",
    Kind.UNLABELED: "unlabeled",
    Kind.NOISY: "noisy",
    Kind.NOISY_PARTIAL: "noisy_partial",
}
KINDS_BY_TAG = {v: k for k, v in TAGS.items()}


@dataclass(frozen=True)
class Exact:
    y: int


@dataclass(frozen=True)
class Candidates:
    s: frozenset


@dataclass(frozen=True)
class Unlabeled:
    pass


@dataclass(frozen=True)
class Noisy:
    y_hat: int


@dataclass(frozen=True)
class NoisyCandidates:
    s: frozenset


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    true_label: int


@dataclass
class ImpreciseDataset:
    """Column-oriented store of samples and their imprecise labels.

    ``label`` holds the exact or noisy class (-1 otherwise); ``candidates``
    is an (N, C) boolean mask used by the set-valued kinds.
    """

    features: np.ndarray
    true_labels: np.ndarray
    kinds: np.ndarray
    label: np.ndarray
    candidates: np.ndarray
    C: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.kinds = np.asarray(self.kinds, dtype=np.int8)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.candidates = np.asarray(self.candidates, dtype=bool)

    def __len__(self):
        return self.features.shape[0]

    @property
    def D(self):
        return self.features.shape[1]

    def info(self, i):
        k = Kind(int(self.kinds[i]))
        if k is Kind.EXACT:
            return Exact(int(self.label[i]))
        if k is Kind.NOISY:
            return Noisy(int(self.label[i]))
        if k is Kind.UNLABELED:
            return Unlabeled()
        s = frozenset(int(j) for j in np.flatnonzero(self.candidates[i]))
        return Candidates(s) if k is Kind.PARTIAL else NoisyCandidates(s)

    def sample(self, i):
        return Sample(self.features[i], int(self.true_labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.sample(i), self.info(i)

    def subset(self, idx):
        idx = np.asarray(idx)
        return ImpreciseDataset(self.features[idx], self.true_labels[idx], self.kinds[idx],
                                self.label[idx], self.candidates[idx], self.C, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, ImpreciseDataset):
            return NotImplemented
        return (self.C == other.C
                and self.meta == other.meta
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.true_labels, other.true_labels)
                and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.label, other.label)
                and np.array_equal(self.candidates, other.candidates))

    def with_labels(self, kinds, label, candidates, **meta):
        merged = dict(self.meta)
        merged.update(meta)
        return ImpreciseDataset(self.features, self.true_labels, kinds, label, candidates,
                                self.C, merged)


def from_records(records, C, meta=None):
    """Build a dataset from ``(Sample, LabelInfo)`` pairs."""
    records = list(records)
    n = len(records)
    D = len(records[0][0].features) if n else 0
    feats = np.zeros((n, D))
    true = np.zeros(n, dtype=np.int64)
    kinds = np.zeros(n, dtype=np.int8)
    label = np.full(n, -1, dtype=np.int64)
    cand = np.zeros((n, C), dtype=bool)
    for i, (smp, info) in enumerate(records):
        feats[i] = smp.features
        true[i] = smp.true_label
        if isinstance(info, Exact):
            kinds[i], label[i] = Kind.EXACT, info.y
        elif isinstance(info, Noisy):
            kinds[i], label[i] = Kind.NOISY, info.y_hat
        elif isinstance(info, Unlabeled):
            kinds[i] = Kind.UNLABELED
        elif isinstance(info, (Candidates, NoisyCandidates)):
            if not info.s:
                raise ConfigError(f"sample {i}: empty candidate set")
            kinds[i] = Kind.PARTIAL if isinstance(info, Candidates) else Kind.NOISY_PARTIAL
            cand[i, sorted(info.s)] = True
        else:
            raise ConfigError(f"sample {i}: unknown label info {info!r}")
    return ImpreciseDataset(feats, true, kinds, label, cand, C, dict(meta or {}))


def make_blobs(n, C=10, D=16, separation=3.0, seed=0):
    """Balanced isotropic Gaussian classes with unit variance.

    Class centres are the simplex vertices ``separation * e_k`` in the first C
    coordinates. ``n`` must be a multiple of C.
    """
    if D < C:
        raise ConfigError(f"simplex centres need D >= C (got D={D}, C={C})")
    if n % C:
        raise ConfigError(f"n={n} is not a multiple of C={C}")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(C), n // C)
    y = y[rng.permutation(n)]
    centres = np.zeros((C, D))
    centres[np.arange(C), np.arange(C)] = separation
    X = centres[y] + rng.standard_normal((n, D))
    meta = {"base": {"n": n, "C": C, "D": D, "separation": separation, "seed": seed}}
    return ImpreciseDataset(X, y, np.full(n, Kind.EXACT), y.copy(),
                            np.zeros((n, C), dtype=bool), C, meta)


def _check_ratio(name, v):
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{name}={v} outside [0, 1]")


def _exact_labels(dataset):
    if np.any(dataset.kinds != Kind.EXACT):
        raise ConfigError("generator expects a dataset with exact labels")
    return dataset.label


def _partial_masks(anchor, C, q, rng):
    # sample-major, class-minor draw order
    u = rng.random((anchor.shape[0], C))
    mask = u < q
    mask[np.arange(anchor.shape[0]), anchor] = True
    return mask


def _flip_uniform(y, C, eta, rng):
    n = y.shape[0]
    flip = rng.random(n) < eta
    other = rng.integers(0, C - 1, size=n) if C > 1 else np.zeros(n, dtype=np.int64)
    other = other + (other >= y)
    return np.where(flip, other, y)


def make_partial(dataset, q, seed):
    _check_ratio("q", q)
    y = _exact_labels(dataset)
    rng = np.random.default_rng(seed)
    mask = _partial_masks(y, dataset.C, q, rng)
    n = len(dataset)
    return dataset.with_labels(np.full(n, Kind.PARTIAL), np.full(n, -1), mask,
                               corruption={"kind": "partial", "q": q, "seed": seed})


def make_symmetric_noise(dataset, eta, seed):
    _check_ratio("eta", eta)
    y = _exact_labels(dataset)
    rng = np.random.default_rng(seed)
    noisy = _flip_uniform(y, dataset.C, eta, rng)
    n = len(dataset)
    return dataset.with_labels(np.full(n, Kind.NOISY), noisy,
                               np.zeros((n, dataset.C), dtype=bool),
                               corruption={"kind": "symmetric", "eta": eta, "seed": seed})


def circular_pairs(C):
    return [(k + 1) % C for k in range(C)]


def make_asymmetric_noise(dataset, eta, pair_map=None, seed=0):
    """Flip each label to ``pair_map[y]`` with probability ``eta`` (default y -> y+1 mod C)."""
    _check_ratio("eta", eta)
    y = _exact_labels(dataset)
    C = dataset.C
    pair_map = circular_pairs(C) if pair_map is None else [int(v) for v in pair_map]
    if len(pair_map) != C:
        raise ConfigError(f"pair_map has {len(pair_map)} entries, expected {C}")
    fixed = [k for k, v in enumerate(pair_map) if v == k]
    if fixed:
        warnings.warn(f"pair_map maps classes {fixed} to themselves; those flips are no-ops",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    flip = rng.random(len(dataset)) < eta
    noisy = np.where(flip, np.asarray(pair_map)[y], y)
    n = len(dataset)
    return dataset.with_labels(np.full(n, Kind.NOISY), noisy, np.zeros((n, C), dtype=bool),
                               corruption={"kind": "asymmetric", "eta": eta,
                                           "pair_map": pair_map, "seed": seed})


def _labeled_indices(y, C, l, rng):
    if l % C:
        raise ConfigError(f"label budget l={l} is not divisible by C={C}")
    per = l // C
    picked = []
    for k in range(C):
        members = np.flatnonzero(y == k)
        if members.size < per:
            raise ConfigError(f"class {k} has {members.size} samples, needs {per}")
        picked.append(members[rng.permutation(members.size)[:per]])
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def select_labeled_subset(dataset, l, seed):
    y = _exact_labels(dataset)
    rng = np.random.default_rng(seed)
    idx = _labeled_indices(y, dataset.C, l, rng)
    n = len(dataset)
    kinds = np.full(n, Kind.UNLABELED, dtype=np.int8)
    kinds[idx] = Kind.EXACT
    label = np.full(n, -1)
    label[idx] = y[idx]
    return dataset.with_labels(kinds, label, np.zeros((n, dataset.C), dtype=bool),
                               corruption={"kind": "ssl", "l": l, "seed": seed})


def make_mixed(dataset, l, q, eta, seed):
    """Labeled subset, then a uniform flip to an anchor, then a candidate set around it.

    Each stage draws from its own child stream of ``seed``.
    """
    _check_ratio("q", q)
    _check_ratio("eta", eta)
    y = _exact_labels(dataset)
    C = dataset.C
    s_sub, s_flip, s_part = np.random.SeedSequence(seed).spawn(3)
    idx = _labeled_indices(y, C, l, np.random.default_rng(s_sub))
    anchor = _flip_uniform(y[idx], C, eta, np.random.default_rng(s_flip))
    masks = _partial_masks(anchor, C, q, np.random.default_rng(s_part))
    n = len(dataset)
    kinds = np.full(n, Kind.UNLABELED, dtype=np.int8)
    kinds[idx] = Kind.NOISY_PARTIAL
    cand = np.zeros((n, C), dtype=bool)
    cand[idx] = masks
    return dataset.with_labels(kinds, np.full(n, -1), cand,
                               corruption={"kind": "mixed", "l": l, "q": q, "eta": eta,
                                           "seed": seed})


def replay(meta):
    """Regenerate a dataset from its metadata alone."""
    base = make_blobs(**meta["base"])
    c = meta.get("corruption")
    if c is None:
        return base
    kind = c["kind"]
    if kind == "partial":
        return make_partial(base, c["q"], c["seed"])
    if kind == "symmetric":
        return make_symmetric_noise(base, c["eta"], c["seed"])
    if kind == "asymmetric":
        return make_asymmetric_noise(base, c["eta"], c["pair_map"], c["seed"])
    if kind == "ssl":
        return select_labeled_subset(base, c["l"], c["seed"])
    if kind == "mixed":
        return make_mixed(base, c["l"], c["q"], c["eta"], c["seed"])
    raise ConfigError(f"unknown corruption kind {kind!r}")


def true_transition(meta, C):
    """Noise transition matrix implied by the corruption metadata, or None."""
    c = meta.get("corruption") or {}
    if c.get("kind") in ("symmetric", "mixed"):
        eta = c["eta"]
        if C == 1:
            return np.ones((1, 1))
        T = np.full((C, C), eta / (C - 1))
        np.fill_diagonal(T, 1.0 - eta)
        return T
    if c.get("kind") == "asymmetric":
        eta = c["eta"]
        T = np.eye(C) * (1.0 - eta)
        for k, v in enumerate(c["pair_map"]):
            T[k, v] += eta
        return T
    return None


def noise_ratio(meta):
    c = meta.get("corruption") or {}
    return c.get("eta")


# ---------------------------------------------------------------------------
# CSV I/O

def _fmt(x):
    return format(float(x), ".17g")


def write_dataset(dataset, path):
    """Write the CSV, plus ``<path>.meta.json`` holding C and the metadata."""
    path = Path(path)
    D = dataset.D
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(D)] + ["kind", "label", "candidates", "true_label"])
        for i in range(len(dataset)):
            k = Kind(int(dataset.kinds[i]))
            label = str(int(dataset.label[i])) if k in (Kind.EXACT, Kind.NOISY) else ""
            cands = ""
            if k in (Kind.PARTIAL, Kind.NOISY_PARTIAL):
                cands = "|".join(str(int(j)) for j in np.flatnonzero(dataset.candidates[i]))
            w.writerow([_fmt(v) for v in dataset.features[i]]
                       + [TAGS[k], label, cands, str(int(dataset.true_labels[i]))])
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump({"C": dataset.C, "meta": dataset.meta}, fh, indent=2, sort_keys=True)


def _meta_path(path):
    return Path(str(path) + ".meta.json")


def _int(cell, what, line):
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"bad {what} {cell!r}", line) from None


def read_dataset(path, C=None):
    """Parse a dataset CSV; C comes from the sidecar, the argument, or the data."""
    path = Path(path)
    meta = {}
    side = _meta_path(path)
    if side.exists():
        with open(side, encoding="utf-8") as fh:
            blob = json.load(fh)
        meta = blob.get("meta", {})
        C = blob["C"] if C is None else C
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", 1)
    header = rows[0]
    if header[-4:] != ["kind", "label", "candidates", "true_label"]:
        raise ParseError("header must end with kind,label,candidates,true_label", 1)
    D = len(header) - 4
    if header[:D] != [f"f{j}" for j in range(D)]:
        raise ParseError("feature columns must be f0..f{D-1}", 1)
    n = len(rows) - 1
    feats = np.zeros((n, D))
    true = np.zeros(n, dtype=np.int64)
    kinds = np.zeros(n, dtype=np.int8)
    label = np.full(n, -1, dtype=np.int64)
    cand_sets = []
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != D + 4:
            raise ParseError(f"expected {D + 4} fields, got {len(row)}", line)
        try:
            feats[i] = [float(v) for v in row[:D]]
        except ValueError:
            raise ParseError("non-numeric feature", line) from None
        if not np.all(np.isfinite(feats[i])):
            raise ParseError("non-finite feature", line)
        tag, lab, cands, tl = row[D:]
        if tag not in KINDS_BY_TAG:
            raise FormatVersionError(f"unknown label kind {tag!r}", line)
        k = KINDS_BY_TAG[tag]
        kinds[i] = k
        true[i] = _int(tl, "true_label", line)
        s = []
        if k in (Kind.EXACT, Kind.NOISY):
            label[i] = _int(lab, "label", line)
        elif k in (Kind.PARTIAL, Kind.NOISY_PARTIAL):
            if not cands:
                raise ParseError(f"empty candidate set for kind {tag}", line)
            s = [_int(c, "candidate", line) for c in cands.split("|")]
        cand_sets.append(s)
    if C is None:
        seen = [true.max(initial=-1), label.max(initial=-1)]
        seen += [max(s) for s in cand_sets if s]
        C = int(max(seen)) + 1
    cand = np.zeros((n, C), dtype=bool)
    for i, s in enumerate(cand_sets):
        for j in s:
            if not 0 <= j < C:
                raise ParseError(f"candidate {j} outside [0, {C})", i + 2)
            cand[i, j] = True
    for i in range(n):
        if not 0 <= true[i] < C or (label[i] >= C):
            raise ParseError(f"class index outside [0, {C})", i + 2)
    return ImpreciseDataset(feats, true, kinds, label, cand, C, meta)
