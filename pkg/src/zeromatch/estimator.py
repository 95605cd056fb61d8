"""scikit-learn compatible wrapper around :func:`zeromatch.train.train`.

Unlabeled rows are marked with ``y == -1``, following
``sklearn.semi_supervised``. Teacher pseudo-labels (in the same label space
as ``y``) and optional teacher embeddings are passed to ``fit`` as
per-row arrays.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import SemiDataset
from .model import onehot
from .oracle import PseudoLabelSet
from .train import METHODS, NEEDS_PSEUDO_LABELS, SslHyper, train

UNLABELED = -1


class ZeroMatchClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised MLP classifier trained with any of the package's methods.

    Parameters mirror :class:`~zeromatch.train.SslHyper`; ``method`` picks the
    objective (default: two-stage distillation + consistency training).

    Attributes
    ----------
    classes_ : ndarray
        Labels seen among the labeled rows, in sorted order.
    model_ : StudentModel
    training_log_ : ndarray
        Per-step stage-2 log, columns as in ``zeromatch.train.LOG_COLUMNS``.
    """

    def __init__(self, method="zeromatch", steps=3000, stage1_steps=None, lr=3e-3, warmup=150,
                 tau=0.95, lambda_p=1.0, alpha_p=1, batch_labeled=16, batch_unlabeled=16,
                 weight_decay=1e-4, encoder_widths=(64,), head_widths=(64,), da_momentum=0.999,
                 kd_augment="weak", random_state=None):
        self.method = method
        self.steps = steps
        self.stage1_steps = stage1_steps
        self.lr = lr
        self.warmup = warmup
        self.tau = tau
        self.lambda_p = lambda_p
        self.alpha_p = alpha_p
        self.batch_labeled = batch_labeled
        self.batch_unlabeled = batch_unlabeled
        self.weight_decay = weight_decay
        self.encoder_widths = encoder_widths
        self.head_widths = head_widths
        self.da_momentum = da_momentum
        self.kd_augment = kd_augment
        self.random_state = random_state

    def _hyper(self, n_rows):
        return SslHyper(
            tau=self.tau, lambda_p=self.lambda_p, alpha_p=self.alpha_p,
            batch_labeled=self.batch_labeled, batch_unlabeled=min(self.batch_unlabeled, n_rows),
            steps=self.steps, stage1_steps=self.stage1_steps, lr=self.lr, warmup=self.warmup,
            weight_decay=self.weight_decay, encoder_widths=tuple(self.encoder_widths),
            head_widths=tuple(self.head_widths), da_momentum=self.da_momentum,
            kd_augment=self.kd_augment,
        )

    def _encode_labels(self, labels, name):
        labels = np.asarray(labels)
        pos = np.searchsorted(self.classes_, labels)
        pos = np.clip(pos, 0, len(self.classes_) - 1)
        if np.any(self.classes_[pos] != labels):
            raise ValueError(f"{name} contains labels not seen among labeled rows")
        return pos.astype(np.int64)

    def _extras(self, n, pseudo_labels, embeddings):
        kind = self.model_.extra_kind
        if kind is None:
            return None
        if kind == "onehot":
            if pseudo_labels is None:
                raise ValueError("pl_feature models need pseudo_labels at prediction time")
            pl = self._encode_labels(np.asarray(pseudo_labels).reshape(-1), "pseudo_labels")
            if len(pl) != n:
                raise ValueError("pseudo_labels must have one entry per row")
            return onehot(pl, len(self.classes_))
        if embeddings is None:
            raise ValueError("embedding models need embeddings at prediction time")
        return check_array(embeddings, dtype=np.float64)

    def fit(self, X, y, pseudo_labels=None, embeddings=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        X, y = check_X_y(X, y, dtype=np.float64)
        labeled = np.flatnonzero(y != UNLABELED)
        if len(labeled) == 0:
            raise ValueError("no labeled rows (all y == -1)")
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) < 2:
            raise ValueError("need labeled rows from at least two classes")
        self.n_features_in_ = X.shape[1]
        y_enc = np.full(len(y), -1, dtype=np.int64)
        y_enc[labeled] = self._encode_labels(y[labeled], "y")

        pls = None
        if pseudo_labels is not None:
            pl = self._encode_labels(np.asarray(pseudo_labels).reshape(-1), "pseudo_labels")
            if len(pl) != len(y):
                raise ValueError("pseudo_labels must have one entry per row of X")
            emb = None if embeddings is None else check_array(embeddings, dtype=np.float64)
            pls = PseudoLabelSet(len(self.classes_), np.arange(len(y)), pl, embeddings=emb,
                                 source="fit")
        elif self.method in NEEDS_PSEUDO_LABELS:
            raise ValueError(f"method {self.method!r} requires pseudo_labels")

        # ground truth of unlabeled rows is never read by training; fill with 0
        ds = SemiDataset(
            train_features=X,
            train_labels=np.where(y_enc < 0, 0, y_enc),
            test_features=np.zeros((0, X.shape[1])),
            test_labels=np.zeros(0, dtype=np.int64),
            num_classes=len(self.classes_),
            seed=0,
            labeled_indices=labeled.astype(np.int64),
        )
        rs = self.random_state
        seed = rs if isinstance(rs, (int, np.integer)) else int(check_random_state(rs).randint(2**31))
        result = train(self.method, ds, pls, self._hyper(len(y)), seed=int(seed))
        self.model_ = result.model
        self.training_log_ = result.stage2_log
        self.stage1_log_ = result.stage1_log
        return self

    def predict_proba(self, X, pseudo_labels=None, embeddings=None):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict_proba(X, self._extras(len(X), pseudo_labels, embeddings))

    def predict(self, X, pseudo_labels=None, embeddings=None):
        proba = self.predict_proba(X, pseudo_labels, embeddings)
        return self.classes_[proba.argmax(axis=1)]
