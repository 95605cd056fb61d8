"""Training objectives, written against predicted class distributions.

Probabilities arrive as :class:`~zeromatch.nn.Tensor` rows when gradients
are needed and as plain arrays when they only supply targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Tensor, cross_entropy

DA_EPS = 1e-6


def supervised_loss(probs, labels):
    """Mean cross-entropy of ``probs`` rows against true labels."""
    return cross_entropy(labels, probs)


def unsupervised_loss(strong_probs, aligned_weak, tau):
    """Confidence-masked consistency loss.

    Targets are the argmax of the aligned weak-view predictions and a row
    contributes only if its top probability is strictly above ``tau``. The
    masked sum is divided by the full batch size. Returns ``(loss, mask_rate)``.
    """
    if isinstance(aligned_weak, Tensor):
        aligned_weak = aligned_weak.data  # targets never carry gradient
    aligned_weak = np.asarray(aligned_weak, dtype=np.float64)
    n = aligned_weak.shape[0]
    mask = (aligned_weak.max(axis=1) > tau).astype(np.float64)
    targets = aligned_weak.argmax(axis=1)
    per_row = cross_entropy(targets, strong_probs, reduction="none")
    loss = (per_row * mask).sum() * (1.0 / n)
    return loss, float(mask.mean())


def kd_loss(probs, pseudo_labels):
    """Distillation onto hard teacher labels, averaged over the pooled batch."""
    return cross_entropy(pseudo_labels, probs)


def aux_kd_loss(q_labeled, pl_labeled, q_unlabeled, pl_unlabeled):
    """Auxiliary-head distillation summed over both batches, divided by their combined size."""
    b = q_labeled.shape[0] + q_unlabeled.shape[0]
    total = (cross_entropy(pl_labeled, q_labeled, reduction="sum")
             + cross_entropy(pl_unlabeled, q_unlabeled, reduction="sum"))
    return total * (1.0 / b)


def pseudo_supervised_loss(p_labeled, labels, p_unlabeled, pl_unlabeled):
    b = p_labeled.shape[0] + p_unlabeled.shape[0]
    total = (cross_entropy(labels, p_labeled, reduction="sum")
             + cross_entropy(pl_unlabeled, p_unlabeled, reduction="sum"))
    return total * (1.0 / b)


def doubly_robust_terms(p_labeled, labels, pl_labeled, p_unlabeled, pl_unlabeled, alpha):
    """The three summands of the doubly-robust objective, returned separately.

    ``alpha/B_L * sum H(y, p)``, ``-alpha/B_L * sum H(pl_L, p)`` and the
    pooled pseudo-label term over ``B = B_L + B_U`` rows.
    """
    b_l = p_labeled.shape[0]
    b = b_l + p_unlabeled.shape[0]
    h_true = cross_entropy(labels, p_labeled, reduction="sum")
    h_pl_lab = cross_entropy(pl_labeled, p_labeled, reduction="sum")
    h_pl_unl = cross_entropy(pl_unlabeled, p_unlabeled, reduction="sum")
    first = h_true * (alpha / b_l)
    second = h_pl_lab * (-alpha / b_l)
    pooled = (h_pl_lab + h_pl_unl) * (1.0 / b)
    return first, second, pooled


def doubly_robust_loss(p_labeled, labels, pl_labeled, p_unlabeled, pl_unlabeled, alpha):
    first, second, pooled = doubly_robust_terms(
        p_labeled, labels, pl_labeled, p_unlabeled, pl_unlabeled, alpha
    )
    return (first + second) + pooled


@dataclass
class LossBreakdown:
    total: Tensor
    loss_s: float
    loss_u: float
    alpha: float
    loss_kd2: float
    mask_rate: float


def kd_ssl_total(loss_s, loss_u, alpha, lambda_p, loss_kd2):
    """``L_s + L_u + alpha * lambda_p * L_kd2``."""
    return loss_s + loss_u + loss_kd2 * (alpha * lambda_p)


class DistributionAligner:
    """Rescales weak-view predictions by the labeled/unlabeled class-frequency ratio.

    Both running estimates start uniform and are exponential moving averages
    of batch-mean predictions, renormalized after every update.
    """

    def __init__(self, num_classes, momentum=0.999):
        self.num_classes = num_classes
        self.momentum = momentum
        self.ema_labeled = np.full(num_classes, 1.0 / num_classes)
        self.ema_unlabeled = np.full(num_classes, 1.0 / num_classes)

    def update(self, labeled_probs, unlabeled_probs):
        m = self.momentum
        for name, probs in (("ema_labeled", labeled_probs), ("ema_unlabeled", unlabeled_probs)):
            e = m * getattr(self, name) + (1.0 - m) * np.asarray(probs).mean(axis=0)
            setattr(self, name, e / e.sum())

    def align(self, probs):
        return align(probs, self.ema_labeled, self.ema_unlabeled)


def align(probs, ema_labeled, ema_unlabeled, eps=DA_EPS):
    probs = np.asarray(probs, dtype=np.float64)
    scaled = probs * (ema_labeled / (ema_unlabeled + eps))
    return scaled / scaled.sum(axis=-1, keepdims=True)
