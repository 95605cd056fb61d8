"""Student network: shared encoder, non-linear main head and linear auxiliary head."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError
from .nn import MLP, Linear, Module, Tensor, concat, softmax

EXTRA_KINDS = (None, "onehot", "embedding")


class StudentModel(Module):
    """``p(y|x) = softmax(h(g(x)[, extra]))`` and ``q(y|x) = softmax(h_p(g(x)[, extra]))``.

    ``extra_kind="onehot"`` widens only the main head by ``num_classes`` so a
    one-hot pseudo-label can ride along with the encoder output.
    ``extra_kind="embedding"`` widens both heads by ``extra_dim``.
    """

    def __init__(self, n_features, num_classes, rng, encoder_widths=(64,), head_widths=(64,),
                 extra_kind=None, extra_dim=0):
        super().__init__()
        if extra_kind not in EXTRA_KINDS:
            raise ValueError(f"extra_kind must be one of {EXTRA_KINDS}")
        if extra_kind == "onehot":
            extra_dim = num_classes
        elif extra_kind is None:
            extra_dim = 0
        elif extra_dim <= 0:
            raise ValueError("embedding extras need extra_dim > 0")
        self.n_features = n_features
        self.num_classes = num_classes
        self.extra_kind = extra_kind
        self.extra_dim = extra_dim
        encoder_widths = tuple(encoder_widths)
        if not encoder_widths:
            raise ValueError("encoder needs at least one layer")
        self.encoder = self.add_child(
            "encoder", MLP((n_features,) + encoder_widths, rng, final_activation=True)
        )
        self.feature_dim = encoder_widths[-1]
        head_in = self.feature_dim + extra_dim
        self.head = self.add_child("head", MLP((head_in,) + tuple(head_widths) + (num_classes,), rng))
        aux_in = self.feature_dim + (extra_dim if extra_kind == "embedding" else 0)
        self.aux_head = self.add_child("aux_head", Linear(aux_in, num_classes, rng))

    def config(self):
        return {
            "n_features": self.n_features,
            "num_classes": self.num_classes,
            "encoder_widths": list(self.encoder.sizes[1:]),
            "head_widths": list(self.head.sizes[1:-1]),
            "extra_kind": self.extra_kind,
            "extra_dim": self.extra_dim,
        }

    def _check_extra(self, extra, n):
        if self.extra_kind is None:
            if extra is not None:
                raise DimensionError("model takes no extra head inputs")
            return None
        if extra is None:
            raise DimensionError(f"model needs {self.extra_kind} extras of width {self.extra_dim}")
        extra = np.asarray(extra, dtype=np.float64)
        if extra.shape != (n, self.extra_dim):
            raise DimensionError(f"extras have shape {extra.shape}, expected {(n, self.extra_dim)}")
        return extra

    def encode(self, x):
        return self.encoder(x)

    def main_logits(self, features, extra=None):
        extra = self._check_extra(extra, features.shape[0])
        if extra is not None:
            features = concat([features, Tensor(extra)], axis=1)
        return self.head(features)

    def aux_logits(self, features, extra=None):
        extra = self._check_extra(extra, features.shape[0])
        if self.extra_kind == "embedding":
            features = concat([features, Tensor(extra)], axis=1)
        return self.aux_head(features)

    def forward(self, x, extra=None):
        return softmax(self.main_logits(self.encode(x), extra))

    def predict_proba(self, x, extra=None):
        return self.forward(np.asarray(x, dtype=np.float64), extra).data

    def predict_aux_proba(self, x, extra=None):
        return softmax(self.aux_logits(self.encode(np.asarray(x, dtype=np.float64)), extra)).data


def onehot(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out
