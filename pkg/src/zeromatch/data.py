"""Synthetic Gaussian-blob datasets, stratified label splits, augmentation and batching.

Sample indices are global: train rows are ``0..N-1`` and test rows follow
as ``N..N+M-1``. Pseudo-label files and dataset exports key on these.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, GenerationError, ParseError, SplitError

MAX_DIRECTION_REJECTIONS = 10_000


@dataclass(frozen=True, eq=False)
class SemiDataset:
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    num_classes: int
    seed: int
    labeled_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    params: dict = field(default_factory=dict)

    @property
    def n_train(self):
        return len(self.train_labels)

    @property
    def n_test(self):
        return len(self.test_labels)

    @property
    def n_features(self):
        return self.train_features.shape[1]

    @property
    def unlabeled_indices(self):
        # every train input stays in the unlabeled pool, revealed labels or not
        return np.arange(self.n_train)

    @property
    def test_indices(self):
        return np.arange(self.n_train, self.n_train + self.n_test)

    def features(self, split):
        return self.train_features if split == "train" else self.test_features

    def labels(self, split):
        return self.train_labels if split == "train" else self.test_labels

    def global_indices(self, split):
        return np.arange(self.n_train) if split == "train" else self.test_indices

    def equals(self, other):
        return (
            self.num_classes == other.num_classes
            and self.seed == other.seed
            and np.array_equal(self.train_features, other.train_features)
            and np.array_equal(self.train_labels, other.train_labels)
            and np.array_equal(self.test_features, other.test_features)
            and np.array_equal(self.test_labels, other.test_labels)
            and np.array_equal(self.labeled_indices, other.labeled_indices)
        )


def _class_directions(k, d, rng):
    """Random unit vectors whose pairwise angles are all at least 60 degrees."""
    dirs = []
    rejections = 0
    while len(dirs) < k:
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= 0.5 for u in dirs):
            dirs.append(v)
            continue
        rejections += 1
        if rejections >= MAX_DIRECTION_REJECTIONS:
            raise GenerationError(
                f"could not place {k} class means in {d} dimensions with pairwise angle "
                ">= 60 degrees; use fewer classes or more dimensions"
            )
    return np.stack(dirs)


def gen_blobs(num_classes, dim, n_per_class, separation, seed, test_fraction=0.2):
    """Balanced isotropic unit-variance Gaussian classes.

    Class means sit at ``separation`` times a random unit direction. A
    ``test_fraction`` share of each class is held out, so both splits stay
    balanced.
    """
    if num_classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    means = separation * _class_directions(num_classes, dim, rng)
    n_test = int(round(n_per_class * test_fraction))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        x = means[c] + rng.standard_normal((n_per_class, dim))
        test_x.append(x[:n_test])
        train_x.append(x[n_test:])
        test_y.append(np.full(n_test, c))
        train_y.append(np.full(n_per_class - n_test, c))
    train_x, train_y = np.concatenate(train_x), np.concatenate(train_y)
    test_x, test_y = np.concatenate(test_x), np.concatenate(test_y)
    p_train = rng.permutation(len(train_y))
    p_test = rng.permutation(len(test_y))
    params = {
        "generator": "blobs",
        "num_classes": num_classes,
        "dim": dim,
        "n_per_class": n_per_class,
        "separation": separation,
        "test_fraction": test_fraction,
        "means": means.tolist(),
    }
    return SemiDataset(
        train_features=train_x[p_train],
        train_labels=train_y[p_train].astype(np.int64),
        test_features=test_x[p_test],
        test_labels=test_y[p_test].astype(np.int64),
        num_classes=num_classes,
        seed=seed,
        params=params,
    )


def class_means(ds):
    if "means" not in ds.params:
        raise KeyError("dataset carries no generator means")
    return np.asarray(ds.params["means"])


def nearest_mean_predict(x, means):
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)


def split_semisupervised(ds, k_per_class, seed):
    """Reveal exactly ``k_per_class`` labels per class, drawn without replacement."""
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.train_labels == c)
        if len(members) < k_per_class:
            raise SplitError(
                f"class {c} has {len(members)} training samples, fewer than k={k_per_class}"
            )
        chosen.append(rng.choice(members, size=k_per_class, replace=False))
    labeled = np.sort(np.concatenate(chosen)).astype(np.int64)
    return replace(ds, labeled_indices=labeled)


@dataclass(frozen=True)
class AugmentorPair:
    weak_sigma: float = 0.05
    strong_sigma: float = 0.5
    mask_rate: float = 0.2

    def __post_init__(self):
        if self.weak_sigma < 0 or self.strong_sigma < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.weak_sigma > self.strong_sigma:
            raise ValueError("weak noise must not exceed strong noise")
        if not 0 <= self.mask_rate <= 1:
            raise ValueError("mask_rate must lie in [0, 1]")


def augment(x, which, aug, rng):
    """Weak: additive Gaussian noise. Strong: larger noise, then random coordinate zeroing.

    Works on a single vector or a batch of rows.
    """
    x = np.asarray(x, dtype=np.float64)
    if which == "none":
        return x.copy()
    if which == "weak":
        if aug.weak_sigma == 0:
            return x.copy()
        return x + aug.weak_sigma * rng.standard_normal(x.shape)
    if which == "strong":
        out = x + aug.strong_sigma * rng.standard_normal(x.shape) if aug.strong_sigma else x.copy()
        if aug.mask_rate:
            out = np.where(rng.random(x.shape) < aug.mask_rate, 0.0, out)
        return out
    raise ValueError(f"unknown augmentation {which!r}")


class _Cycler:
    def __init__(self, pool, rng):
        self.pool = np.asarray(pool, dtype=np.int64)
        self.rng = rng
        self.order = self.rng.permutation(self.pool)
        self.pos = 0

    def take(self, n):
        out = []
        while n > 0:
            if self.pos == len(self.order):
                self.order = self.rng.permutation(self.pool)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + n]
            out.append(chunk)
            self.pos += len(chunk)
            n -= len(chunk)
        return np.concatenate(out)


def batch_iter(ds, batch_labeled, batch_unlabeled, seed):
    """Endless ``(labeled_idx, unlabeled_idx)`` pairs from two reshuffled cycles.

    Each cycle walks a fresh permutation of its pool; a batch larger than the
    remaining cycle wraps into the next permutation.
    """
    if len(ds.labeled_indices) == 0:
        raise ConfigurationError("dataset has no labeled indices; run split_semisupervised first")
    if batch_labeled <= 0 or batch_unlabeled <= 0:
        raise ConfigurationError("batch sizes must be positive")
    if batch_unlabeled > ds.n_train:
        raise ConfigurationError(f"unlabeled batch {batch_unlabeled} exceeds pool size {ds.n_train}")
    ss = np.random.SeedSequence(seed)
    lab_rng, unl_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    labeled = _Cycler(ds.labeled_indices, lab_rng)
    unlabeled = _Cycler(ds.unlabeled_indices, unl_rng)
    while True:
        yield labeled.take(batch_labeled), unlabeled.take(batch_unlabeled)


# CSV interchange ---------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def save_dataset(ds, path):
    """Write ``split,index,label,f0..`` rows plus a ``<path>.meta.json`` sidecar."""
    d = ds.n_features
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "index", "label"] + [f"f{j}" for j in range(d)])
        for split in ("train", "test"):
            feats, labels = ds.features(split), ds.labels(split)
            for gi, row, y in zip(ds.global_indices(split), feats, labels):
                w.writerow([split, int(gi), int(y)] + [_fmt(v) for v in row])
    meta = {
        "num_classes": ds.num_classes,
        "dim": d,
        "seed": ds.seed,
        "labeled_indices": [int(i) for i in ds.labeled_indices],
        "params": ds.params,
    }
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    with open(str(path) + ".meta.json") as fh:
        meta = json.load(fh)
    rows = {"train": [], "test": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        if header[:3] != ["split", "index", "label"] or d != meta["dim"]:
            raise ParseError("unexpected dataset header", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != d + 3 or rec[0] not in rows:
                raise ParseError("malformed dataset row", line=lineno)
            rows[rec[0]].append((int(rec[1]), int(rec[2]), [float(v) for v in rec[3:]]))
    out = {}
    for split, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        out[split] = (
            np.array([r[2] for r in recs], dtype=np.float64).reshape(len(recs), d),
            np.array([r[1] for r in recs], dtype=np.int64),
        )
    n_train = len(out["train"][1])
    expect = list(range(n_train)) + list(range(n_train, n_train + len(out["test"][1])))
    got = sorted(r[0] for recs in rows.values() for r in recs)
    if got != expect:
        raise ParseError("indices must be train 0..N-1 followed by test N..N+M-1")
    return SemiDataset(
        train_features=out["train"][0],
        train_labels=out["train"][1],
        test_features=out["test"][0],
        test_labels=out["test"][1],
        num_classes=int(meta["num_classes"]),
        seed=int(meta["seed"]),
        labeled_indices=np.array(meta["labeled_indices"], dtype=np.int64),
        params=meta.get("params", {}),
    )
