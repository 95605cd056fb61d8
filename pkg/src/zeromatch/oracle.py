"""Simulated foundation-model teacher and the pseudo-label interchange format.

A teacher of accuracy ``a`` emits, per sample: the fallback class with
probability ``fallback_rate``, otherwise the true class with probability
``a`` and otherwise a wrong class drawn from the confusion mode. Optional
embeddings are noisy copies of a per-class prototype keyed on the emitted
pseudo-label.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, CoverageError, ParseError, ValidationError

# Zero-shot test accuracies of real teachers, used as calibration targets.
PRESETS = {
    "gpt4o-yahoo": 0.6881,
    "llama3.3-70b-yahoo": 0.6915,
    "flan-t5-xxl-yahoo": 0.6662,
    "flan-t5-small-yahoo": 0.2944,
    "gpt4o-agnews": 0.8625,
    "llama3.3-70b-agnews": 0.8841,
    "flan-t5-xxl-agnews": 0.9143,
    "flan-t5-small-agnews": 0.8707,
    "gpt4o-amazon": 0.5914,
    "llama3.3-70b-amazon": 0.5579,
    "flan-t5-xl-amazon": 0.5237,
    "flan-t5-small-amazon": 0.357,
    "gpt4.1-cifar100": 0.8325,
    "clip-large-cifar100": 0.6227,
    "clip-base-cifar100": 0.4949,
}


@dataclass(frozen=True)
class OracleSpec:
    accuracy: float = 1.0
    confusion: object = "uniform"  # "uniform", "adjacent" or a KxK row-stochastic matrix
    fallback_rate: float = 0.0
    fallback_class: int = 0
    embedding_dim: int = 0
    embedding_noise: float = 0.5
    embedding_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.accuracy <= 1:
            raise ValueError("accuracy must lie in [0, 1]")
        if not 0 <= self.fallback_rate <= 1:
            raise ValueError("fallback_rate must lie in [0, 1]")
        if self.embedding_dim < 0:
            raise ValueError("embedding_dim must be nonnegative")
        if not isinstance(self.confusion, str):
            m = np.asarray(self.confusion, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("confusion matrix must be square")
            if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("confusion matrix rows must be nonnegative and sum to 1")
            if abs(np.diag(m).mean() - self.accuracy) > 1e-9:
                raise ValueError("mean of the confusion diagonal must equal accuracy")
        elif self.confusion not in ("uniform", "adjacent"):
            raise ValueError(f"unknown confusion mode {self.confusion!r}")

    @classmethod
    def from_preset(cls, name, **kw):
        if name not in PRESETS:
            raise KeyError(f"unknown oracle preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(accuracy=PRESETS[name], **kw)

    @classmethod
    def from_matrix(cls, matrix, **kw):
        m = np.asarray(matrix, dtype=np.float64)
        return cls(accuracy=float(np.diag(m).mean()), confusion=m.tolist(), **kw)

    def describe(self):
        mode = self.confusion if isinstance(self.confusion, str) else "matrix"
        parts = [f"a={self.accuracy:g}", f"mode={mode}", f"phi={self.fallback_rate:g}",
                 f"c0={self.fallback_class}"]
        if self.embedding_dim:
            parts += [f"d_e={self.embedding_dim}", f"sigma_e={self.embedding_noise:g}"]
        return "oracle(" + ",".join(parts) + ")"


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    num_classes: int
    indices: np.ndarray
    hard: np.ndarray
    soft: np.ndarray | None = None
    embeddings: np.ndarray | None = None
    source: str = "external"
    seed: int = 0
    _pos: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        hard = np.asarray(self.hard, dtype=np.int64)
        if idx.shape != hard.shape or idx.ndim != 1:
            raise ValidationError("indices and hard labels must be equal-length vectors")
        if len(np.unique(idx)) != len(idx):
            raise ValidationError("duplicate sample indices")
        bad = (hard < 0) | (hard >= self.num_classes)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                f"index {int(idx[i])}: label {int(hard[i])} outside [0, {self.num_classes})"
            )
        if self.soft is not None:
            soft = np.asarray(self.soft, dtype=np.float64)
            if soft.shape != (len(idx), self.num_classes):
                raise ValidationError("soft distributions must be N x K")
            if not np.allclose(soft.sum(axis=1), 1.0, atol=1e-9):
                raise ValidationError("soft distributions must sum to 1")
            if np.any(soft.argmax(axis=1) != hard):
                raise ValidationError("soft argmax disagrees with hard label")
            object.__setattr__(self, "soft", soft)
        if self.embeddings is not None:
            emb = np.asarray(self.embeddings, dtype=np.float64)
            if emb.ndim != 2 or emb.shape[0] != len(idx):
                raise ValidationError("embeddings must be N x d_e")
            object.__setattr__(self, "embeddings", emb)
        if any(c.isspace() for c in self.source):
            raise ValidationError("source descriptor may not contain whitespace")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "hard", hard)
        object.__setattr__(self, "_pos", {int(i): p for p, i in enumerate(idx)})

    def __len__(self):
        return len(self.indices)

    @property
    def embedding_dim(self):
        return 0 if self.embeddings is None else self.embeddings.shape[1]

    def positions(self, indices):
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        pos = [self._pos.get(int(i), -1) for i in indices]
        missing = [int(i) for i, p in zip(indices, pos) if p < 0]
        if missing:
            raise CoverageError(missing)
        return np.asarray(pos, dtype=np.int64)

    def labels_for(self, indices):
        return self.hard[self.positions(indices)]

    def embeddings_for(self, indices):
        if self.embeddings is None:
            raise ConfigurationError("pseudo-label set carries no embeddings")
        return self.embeddings[self.positions(indices)]

    def soft_for(self, indices):
        if self.soft is None:
            raise ConfigurationError("pseudo-label set carries no soft distributions")
        return self.soft[self.positions(indices)]

    def equals(self, other):
        def same(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b)
            )

        return (
            self.num_classes == other.num_classes
            and self.source == other.source
            and self.seed == other.seed
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.hard, other.hard)
            and same(self.soft, other.soft)
            and same(self.embeddings, other.embeddings)
        )


def _wrong_labels(y, spec, k, rng):
    if spec.confusion == "uniform":
        offset = rng.integers(1, k, size=len(y))
        return (y + offset) % k
    if spec.confusion == "adjacent":
        return (y + 1) % k
    raise AssertionError("matrix confusion handled by caller")


def generate(spec, ds, include_test=True):
    """Draw a pseudo-label set for every train (and optionally test) sample.

    Hard labels, the fallback draw and embeddings come from independent
    streams of ``spec.seed``, so requesting embeddings never changes labels.
    """
    k = ds.num_classes
    if spec.fallback_class >= k:
        raise ConfigurationError(f"fallback class {spec.fallback_class} outside [0, {k})")
    matrix = None
    if not isinstance(spec.confusion, str):
        matrix = np.asarray(spec.confusion, dtype=np.float64)
        if matrix.shape != (k, k):
            raise ConfigurationError(f"confusion matrix is {matrix.shape}, dataset has K={k}")
    idx = np.arange(ds.n_train + (ds.n_test if include_test else 0))
    y = np.concatenate([ds.train_labels, ds.test_labels])[: len(idx)]
    label_ss, emb_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(label_ss)
    fallback = rng.random(len(y)) < spec.fallback_rate
    if matrix is None:
        correct = rng.random(len(y)) < spec.accuracy
        wrong = _wrong_labels(y, spec, k, rng)
        hard = np.where(correct, y, wrong)
    else:
        cdf = np.cumsum(matrix, axis=1)
        u = rng.random(len(y))
        hard = np.minimum((u[:, None] >= cdf[y]).sum(axis=1), k - 1)
    hard = np.where(fallback, spec.fallback_class, hard).astype(np.int64)

    embeddings = None
    if spec.embedding_dim:
        erng = np.random.default_rng(emb_ss)
        protos = erng.standard_normal((k, spec.embedding_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        noise = erng.standard_normal((len(y), spec.embedding_dim))
        embeddings = spec.embedding_scale * protos[hard] + spec.embedding_noise * noise
    return PseudoLabelSet(
        num_classes=k,
        indices=idx,
        hard=hard,
        embeddings=embeddings,
        source=spec.describe(),
        seed=spec.seed,
    )


def zero_shot_accuracy(pls, ds, split="test"):
    gidx = ds.global_indices(split)
    return float(np.mean(pls.labels_for(gidx) == ds.labels(split)))


# interchange file --------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def save(pls, path):
    """Write one tab-separated record per sample after a ``#key=value`` header line.

    Record: ``index, hard_label[, p0,...,p{K-1}][, e0,...,e{d_e-1}]``.
    """
    d_e = pls.embedding_dim
    with open(path, "w") as fh:
        fh.write(f"#K={pls.num_classes} #N={len(pls)} #source={pls.source} "
                 f"#seed={pls.seed} #d_e={d_e}\n")
        for p in range(len(pls)):
            fields = [str(int(pls.indices[p])), str(int(pls.hard[p]))]
            if pls.soft is not None:
                fields.append(",".join(_fmt(v) for v in pls.soft[p]))
            if d_e:
                fields.append(",".join(_fmt(v) for v in pls.embeddings[p]))
            fh.write("\t".join(fields) + "\n")


def _parse_header(line):
    meta = {}
    for tok in line.split():
        if not tok.startswith("#") or "=" not in tok:
            raise ParseError(f"bad header token {tok!r}", line=1)
        key, value = tok[1:].split("=", 1)
        meta[key] = value
    for key in ("K", "N", "source", "seed", "d_e"):
        if key not in meta:
            raise ParseError(f"header missing #{key}", line=1)
    try:
        return int(meta["K"]), int(meta["N"]), meta["source"], int(meta["seed"]), int(meta["d_e"])
    except ValueError as exc:
        raise ParseError(f"non-integer header field: {exc}", line=1) from None


def load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty pseudo-label file", line=1)
    k, n, source, seed, d_e = _parse_header(lines[0])
    indices, hard, soft, emb = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        n_fields = 2 + (d_e > 0)
        has_soft = len(fields) == n_fields + 1
        if len(fields) not in (n_fields, n_fields + 1):
            raise ParseError(f"expected {n_fields} or {n_fields + 1} fields, got {len(fields)}",
                             line=lineno)
        try:
            i, y = int(fields[0]), int(fields[1])
            s = [float(v) for v in fields[2].split(",")] if has_soft else None
            e = [float(v) for v in fields[-1].split(",")] if d_e else None
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if y < 0 or y >= k:
            raise ValidationError(f"index {i}: label {y} outside [0, {k})")
        if s is not None and len(s) != k:
            raise ParseError(f"soft distribution has {len(s)} entries, expected {k}", line=lineno)
        if e is not None and len(e) != d_e:
            raise ParseError(f"embedding has {len(e)} entries, expected {d_e}", line=lineno)
        if soft and (s is None) != (soft[-1] is None):
            raise ParseError("soft distributions must be present on all lines or none", line=lineno)
        indices.append(i)
        hard.append(y)
        soft.append(s)
        emb.append(e)
    if len(indices) != n:
        raise ParseError(f"header declares N={n} but file has {len(indices)} records")
    return PseudoLabelSet(
        num_classes=k,
        indices=np.array(indices, dtype=np.int64),
        hard=np.array(hard, dtype=np.int64),
        soft=np.array(soft, dtype=np.float64) if soft and soft[0] is not None else None,
        embeddings=np.array(emb, dtype=np.float64).reshape(len(emb), d_e) if d_e else None,
        source=source,
        seed=seed,
    )
