"""Training loops for every method: baselines, the two-stage method and its ablations.

Two-stage training first distills the teacher's hard labels into the main
head, then runs confidence-masked consistency training while a linear
auxiliary head keeps fitting the teacher labels through the shared encoder.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import AugmentorPair, augment, batch_iter
from .exceptions import ConfigurationError
from .losses import (
    DistributionAligner,
    aux_kd_loss,
    doubly_robust_loss,
    kd_loss,
    kd_ssl_total,
    pseudo_supervised_loss,
    supervised_loss,
    unsupervised_loss,
)
from .model import StudentModel, onehot
from .nn import Tensor, load_checkpoint, save_checkpoint, softmax
from .optim import AdamW, AnnealSchedule, LrSchedule, lr_at, alpha_at

METHODS = (
    "supervised",
    "adamatch",
    "zeromatch",
    "zm_no_aux",
    "zm_no_stage1",
    "pseudo_supervise",
    "pl_feature",
    "doubly_robust",
    "zeromatch_emb",
)
NEEDS_PSEUDO_LABELS = frozenset(METHODS) - {"supervised", "adamatch"}
TWO_STAGE = frozenset({"zeromatch", "zm_no_aux", "zeromatch_emb"})
CONSISTENCY = frozenset({"adamatch", "zeromatch", "zm_no_aux", "zm_no_stage1", "pl_feature",
                         "zeromatch_emb"})
AUX_KD = frozenset({"zeromatch", "zm_no_stage1", "zeromatch_emb"})

LOG_COLUMNS = ("step", "lr", "alpha_t", "loss_total", "loss_s", "loss_u", "loss_kd2", "mask_rate")
FINAL_WINDOW = 100


@dataclass(frozen=True)
class SslHyper:
    tau: float = 0.95
    lambda_p: float = 1.0
    alpha_p: int = 1
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    steps: int = 3000
    stage1_steps: int | None = None  # None: same as ``steps``
    lr: float = 3e-3
    warmup: int = 150
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    da_momentum: float = 0.999
    relative_threshold: bool = False
    kd_augment: str = "weak"
    soft_kd: bool = False
    encoder_widths: tuple = (64,)
    head_widths: tuple = (64,)
    weak_sigma: float = 0.05
    strong_sigma: float = 0.5
    mask_rate: float = 0.2

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.lambda_p < 0:
            raise ValueError("lambda_p must be nonnegative")
        if self.alpha_p not in (0, 1):
            raise ValueError("alpha_p must be 0 or 1")
        if self.kd_augment not in ("none", "weak"):
            raise ValueError("kd_augment must be 'none' or 'weak'")

    @property
    def t1(self):
        return self.steps if self.stage1_steps is None else self.stage1_steps

    @property
    def augmentor(self):
        return AugmentorPair(self.weak_sigma, self.strong_sigma, self.mask_rate)

    def with_overrides(self, **kw):
        names = {f.name for f in fields(self)}
        unknown = set(kw) - names
        if unknown:
            raise ConfigurationError(f"unknown hyperparameters: {sorted(unknown)}")
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class TrainResult:
    model: StudentModel
    method: str
    stage1_log: np.ndarray | None
    stage2_log: np.ndarray
    stage1_steps: int
    stage2_steps: int
    wall_seconds: float
    extras: dict = field(default_factory=dict)

    @property
    def final_mask_rate(self):
        """Mean confidence-mask pass rate over the last 100 logged stage-2 steps."""
        if len(self.stage2_log) == 0:
            return float("nan")
        return float(self.stage2_log[-FINAL_WINDOW:, LOG_COLUMNS.index("mask_rate")].mean())

    def losses(self, stage=2):
        log = self.stage2_log if stage == 2 else self.stage1_log
        return log[:, LOG_COLUMNS.index("loss_total")]


def write_log(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([int(row[0])] + [format(float(v), ".17g") for v in row[1:]])


def _child_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _model_extras_kind(method):
    if method == "pl_feature":
        return "onehot"
    if method == "zeromatch_emb":
        return "embedding"
    return None


def build_model(method, ds, pls, hyper, rng):
    kind = _model_extras_kind(method)
    extra_dim = pls.embedding_dim if kind == "embedding" else 0
    return StudentModel(ds.n_features, ds.num_classes, rng, hyper.encoder_widths,
                        hyper.head_widths, extra_kind=kind, extra_dim=extra_dim)


def extras_for(model, pls, gidx):
    """Per-sample head inputs the model variant expects, or ``None``."""
    if model.extra_kind is None:
        return None
    if pls is None:
        raise ConfigurationError(f"{model.extra_kind} model requires pseudo-labels")
    if model.extra_kind == "onehot":
        return onehot(pls.labels_for(gidx), model.num_classes)
    return pls.embeddings_for(gidx)


def _kd_targets(pls, idx, hyper):
    if hyper.soft_kd:
        return pls.soft_for(idx)
    return pls.labels_for(idx)


def _vstack_extras(parts):
    return None if parts[0] is None else np.concatenate(parts, axis=0)


def _check_inputs(method, pls):
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    if method in NEEDS_PSEUDO_LABELS and pls is None:
        raise ConfigurationError(f"method {method!r} requires pseudo-labels")
    if method == "zeromatch_emb" and pls.embeddings is None:
        raise ConfigurationError("zeromatch_emb requires pseudo-labels with embeddings")


def _stage1(model, ds, pls, hyper, seeds, log_rows):
    """Distill hard teacher labels into the main head on pooled batches."""
    opt = AdamW(model.parameters(), hyper.lr, hyper.betas, hyper.adam_eps, hyper.weight_decay)
    sched = LrSchedule(hyper.lr, hyper.t1, min(hyper.warmup, hyper.t1 - 1))
    batches = batch_iter(ds, hyper.batch_labeled, hyper.batch_unlabeled, seeds[0])
    aug_rng = np.random.default_rng(seeds[1])
    x_all = ds.train_features
    for t in range(hyper.t1):
        lb, ulb = next(batches)
        idx = np.concatenate([lb, ulb])
        x = augment(x_all[idx], hyper.kd_augment, hyper.augmentor, aug_rng)
        probs = model.forward(x, extras_for(model, pls, idx))
        loss = kd_loss(probs, _kd_targets(pls, idx, hyper))
        lr = lr_at(sched, t)
        opt.zero_grad()
        loss.backward()
        opt.step(lr)
        log_rows.append((t, lr, 0.0, loss.item(), 0.0, 0.0, 0.0, 0.0))


def _consistency_step(model, ds, pls, hyper, method, lb, ulb, aligner, aug_rng, alpha):
    aug = hyper.augmentor
    x_all = ds.train_features
    nl, nu = len(lb), len(ulb)
    x_lb = augment(x_all[lb], "weak", aug, aug_rng)
    u_w = augment(x_all[ulb], "weak", aug, aug_rng)
    u_s = augment(x_all[ulb], "strong", aug, aug_rng)
    ex_lb, ex_ulb = extras_for(model, pls, lb), extras_for(model, pls, ulb)
    feats = model.encode(np.concatenate([x_lb, u_w, u_s]))
    probs = softmax(model.main_logits(feats, _vstack_extras([ex_lb, ex_ulb, ex_ulb])))
    p_lb = probs[:nl]
    p_w = probs.data[nl:nl + nu]
    p_s = probs[nl + nu:]

    loss_s = supervised_loss(p_lb, ds.train_labels[lb])
    aligner.update(p_lb.data, p_w)
    p_hat = aligner.align(p_w)
    tau = hyper.tau
    if hyper.relative_threshold:
        tau = tau * float(p_lb.data.max(axis=1).mean())
    loss_u, mask_rate = unsupervised_loss(p_s, p_hat, tau)

    if method in AUX_KD:
        aux_feats = feats[: nl + nu]
        q = softmax(model.aux_logits(aux_feats, _vstack_extras([ex_lb, ex_ulb])))
        loss_kd2 = aux_kd_loss(q[:nl], _kd_targets(pls, lb, hyper),
                               q[nl:], _kd_targets(pls, ulb, hyper))
        total = kd_ssl_total(loss_s, loss_u, alpha, hyper.lambda_p, loss_kd2)
        kd2 = loss_kd2.item()
    else:
        total = loss_s + loss_u
        kd2 = 0.0
    return total, loss_s.item(), loss_u.item(), kd2, mask_rate


def _pseudo_step(model, ds, pls, hyper, method, lb, ulb, aug_rng, alpha):
    aug = hyper.augmentor
    x_all = ds.train_features
    nl = len(lb)
    if method == "supervised":
        probs = model.forward(augment(x_all[lb], "weak", aug, aug_rng))
        loss = supervised_loss(probs, ds.train_labels[lb])
        return loss, loss.item(), 0.0, 0.0, 0.0
    x = np.concatenate([augment(x_all[lb], "weak", aug, aug_rng),
                        augment(x_all[ulb], "weak", aug, aug_rng)])
    probs = model.forward(x)
    p_lb, p_ulb = probs[:nl], probs[nl:]
    y_lb = ds.train_labels[lb]
    pl_ulb = _kd_targets(pls, ulb, hyper)
    if method == "pseudo_supervise":
        loss = pseudo_supervised_loss(p_lb, y_lb, p_ulb, pl_ulb)
    else:
        loss = doubly_robust_loss(p_lb, y_lb, _kd_targets(pls, lb, hyper), p_ulb, pl_ulb, alpha)
    return loss, 0.0, 0.0, 0.0, 0.0


def _stage2(model, ds, pls, hyper, method, seeds, log_rows):
    opt = AdamW(model.parameters(), hyper.lr, hyper.betas, hyper.adam_eps, hyper.weight_decay)
    sched = LrSchedule(hyper.lr, hyper.steps, min(hyper.warmup, hyper.steps - 1))
    anneal = AnnealSchedule(hyper.alpha_p, hyper.steps)
    batches = batch_iter(ds, hyper.batch_labeled, hyper.batch_unlabeled, seeds[0])
    aug_rng = np.random.default_rng(seeds[1])
    aligner = DistributionAligner(ds.num_classes, hyper.da_momentum)
    for t in range(hyper.steps):
        lb, ulb = next(batches)
        alpha = alpha_at(anneal, t)
        if method in CONSISTENCY:
            total, ls, lu, kd2, mask = _consistency_step(
                model, ds, pls, hyper, method, lb, ulb, aligner, aug_rng, alpha
            )
        else:
            total, ls, lu, kd2, mask = _pseudo_step(model, ds, pls, hyper, method, lb, ulb,
                                                    aug_rng, alpha)
        lr = lr_at(sched, t)
        opt.zero_grad()
        total.backward()
        opt.step(lr)
        log_rows.append((t, lr, alpha, total.item(), ls, lu, kd2, mask))
    return aligner


def train(method, ds, pls=None, hyper=None, seed=0, checkpoint_dir=None):
    """Train one student with ``method`` and return a :class:`TrainResult`.

    ``zeromatch`` / ``zeromatch_emb`` / ``zm_no_aux`` run the distillation stage
    for ``hyper.t1`` steps first; stage 2 always starts a fresh optimizer and
    learning-rate schedule. When ``checkpoint_dir`` is given, the stage-1 and
    final weights are written there and the hand-off goes through the file.
    """
    hyper = hyper or SslHyper()
    _check_inputs(method, pls)
    if pls is not None and pls.num_classes != ds.num_classes:
        raise ConfigurationError("pseudo-label K does not match dataset K")
    start = time.perf_counter()
    init_seed, s1_batch, s1_aug, s2_batch, s2_aug = _child_seeds(seed, 5)
    model = build_model(method, ds, pls, hyper, np.random.default_rng(init_seed))

    stage1_rows = []
    t1 = hyper.t1 if method in TWO_STAGE else 0
    if t1 > 0:
        _stage1(model, ds, pls, hyper, (s1_batch, s1_aug), stage1_rows)
        state = model.state_dict()
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            path = os.path.join(checkpoint_dir, "stage1.npz")
            save_checkpoint(path, state)
            state, _ = load_checkpoint(path)
        model.load_state_dict(state)

    stage2_rows = []
    aligner = _stage2(model, ds, pls, hyper, method, (s2_batch, s2_aug), stage2_rows)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        save_checkpoint(os.path.join(checkpoint_dir, "final.npz"), model.state_dict())

    return TrainResult(
        model=model,
        method=method,
        stage1_log=np.array(stage1_rows, dtype=np.float64).reshape(-1, len(LOG_COLUMNS)) if t1 else None,
        stage2_log=np.array(stage2_rows, dtype=np.float64).reshape(-1, len(LOG_COLUMNS)),
        stage1_steps=t1,
        stage2_steps=hyper.steps,
        wall_seconds=time.perf_counter() - start,
        extras={"aligner": aligner},
    )


def predict(model, ds, split="test", pls=None):
    x = ds.features(split)
    probs = model.predict_proba(x, extras_for(model, pls, ds.global_indices(split)))
    return probs.argmax(axis=1)


def evaluate(model, ds, split="test", pls=None):
    """Accuracy of the main head's argmax on un-augmented inputs."""
    if len(ds.labels(split)) == 0:
        raise ValueError(f"split {split!r} is empty")
    return float(np.mean(predict(model, ds, split, pls) == ds.labels(split)))


def teacher_agreement(model, ds, pls, split="train"):
    pred = predict(model, ds, split, pls)
    return float(np.mean(pred == pls.labels_for(ds.global_indices(split))))
