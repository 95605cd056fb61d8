"""Semi-supervised learning with foundation-model pseudo-labels, at desk scale.

The two-stage method distills a teacher's hard pseudo-labels into a small
student, then continues with confidence-masked consistency training while a
linear auxiliary head keeps fitting the teacher labels.
"""
from .data import AugmentorPair, SemiDataset, augment, batch_iter, gen_blobs, split_semisupervised
from .estimator import ZeroMatchClassifier
from .model import StudentModel
from .oracle import OracleSpec, PseudoLabelSet, generate, zero_shot_accuracy
from .train import METHODS, SslHyper, TrainResult, evaluate, train

__all__ = [
    "AugmentorPair",
    "METHODS",
    "OracleSpec",
    "PseudoLabelSet",
    "SemiDataset",
    "SslHyper",
    "StudentModel",
    "TrainResult",
    "ZeroMatchClassifier",
    "augment",
    "batch_iter",
    "evaluate",
    "gen_blobs",
    "generate",
    "split_semisupervised",
    "train",
    "zero_shot_accuracy",
]

__version__ = "0.1.0"
