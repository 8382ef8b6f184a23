"""Target-domain inference from a trained dictionary.

Two routes: train on a labeled barycenter synthesised with the target's
weights (reconstruction), or mix per-atom classifiers with those weights
(ensemble). Both use the multinomial logistic regression below.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .barycenter import BarycenterConfig, check_weights, free_support_barycenter
from .dictionary import Dictionary

_MODEL_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 500
    lr: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class LinearClassifier:
    weights: np.ndarray  # (d, n_c)
    bias: np.ndarray  # (n_c,)
    losses: np.ndarray | None = None

    def logits(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_bytes(self) -> bytes:
        d, n_c = self.weights.shape
        return (_MODEL_HEADER.pack(d, n_c)
                + self.weights.astype("<f8").tobytes(order="C")
                + self.bias.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "LinearClassifier":
        if len(raw) < _MODEL_HEADER.size:
            raise ValueError("truncated model header")
        d, n_c = _MODEL_HEADER.unpack_from(raw)
        expected = _MODEL_HEADER.size + 8 * (d * n_c + n_c)
        if len(raw) != expected:
            raise ValueError(f"model blob has {len(raw)} bytes, expected {expected}")
        body = np.frombuffer(raw, dtype="<f8", offset=_MODEL_HEADER.size)
        return cls(body[: d * n_c].reshape(d, n_c).astype(float), body[d * n_c:].astype(float))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LinearClassifier":
        return cls.from_bytes(Path(path).read_bytes())


def _cross_entropy(W, b, X, Y):
    logits = X @ W + b
    return float(-(Y * log_softmax(logits, axis=1)).sum(axis=1).mean())


def train_classifier(X, y_onehot, cfg: ClassifierConfig | None = None) -> LinearClassifier:
    """Full-batch gradient descent on mean cross-entropy from zero weights.

    A step that would raise the loss is rejected and the learning rate
    halved, so the recorded loss never increases.
    """
    cfg = cfg or ClassifierConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(y_onehot, dtype=float))
    if X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}")
    if np.count_nonzero(Y.sum(axis=0) > 0) < 2:
        raise ValueError("training data contains a single class")
    n, d = X.shape
    W = np.zeros((d, Y.shape[1]))
    b = np.zeros(Y.shape[1])
    lr = cfg.lr
    loss = _cross_entropy(W, b, X, Y)
    losses = [loss]
    for _ in range(cfg.epochs):
        R = softmax(X @ W + b, axis=1) - Y
        gW, gb = X.T @ R / n, R.mean(axis=0)
        while True:
            W_new, b_new = W - lr * gW, b - lr * gb
            new = _cross_entropy(W_new, b_new, X, Y)
            if new <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new > loss:
            break
        W, b, loss = W_new, b_new, new
        losses.append(loss)
    return LinearClassifier(W, b, np.asarray(losses))


def hard_labels(Y) -> np.ndarray:
    """Row argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(Y), axis=1)


def _one_hot(y, n_c):
    out = np.zeros((len(y), n_c))
    out[np.arange(len(y)), y] = 1.0
    return out


def synthesize_target(D: Dictionary, alpha, cfg: BarycenterConfig | None = None):
    """Labeled sample ``(X, y)`` of the barycenter of the full atoms."""
    alpha = check_weights(alpha, D.K)
    B = free_support_barycenter(D.distributions(), alpha, cfg).distribution
    return B.support, hard_labels(B.labels)


def feddadil_r(D: Dictionary, alpha_T, cfg: BarycenterConfig | None = None,
               classifier_cfg: ClassifierConfig | None = None) -> LinearClassifier:
    """Classifier trained on the labeled barycenter synthesised for the target."""
    X, y = synthesize_target(D, alpha_T, cfg)
    if np.unique(y).size < 2:
        raise ValueError(f"degenerate barycenter: every synthesised point has class {y[0]}")
    return train_classifier(X, _one_hot(y, D.n_classes), classifier_cfg)


@dataclass
class EnsemblePrediction:
    per_atom: list[np.ndarray]
    weights: np.ndarray
    proba: np.ndarray
    labels: np.ndarray


def atom_classifiers(D: Dictionary, classifier_cfg: ClassifierConfig | None = None):
    out = []
    for atom in D.atoms:
        y = hard_labels(atom.labels)
        try:
            out.append(train_classifier(atom.features, _one_hot(y, D.n_classes), classifier_cfg))
        except ValueError as exc:
            raise ValueError(f"atom {atom.atom_id}: {exc}") from exc
    return out


def feddadil_e(D: Dictionary, alpha_T, target_X,
               classifier_cfg: ClassifierConfig | None = None) -> EnsemblePrediction:
    """Mix per-atom classifiers with the target's barycentric weights."""
    alpha = check_weights(alpha_T, D.K)
    probs = [clf.predict_proba(target_X) for clf in atom_classifiers(D, classifier_cfg)]
    mix = sum(w * p for w, p in zip(alpha, probs))
    return EnsemblePrediction(probs, alpha, mix, hard_labels(mix))


def source_only(datasets, classifier_cfg: ClassifierConfig | None = None) -> LinearClassifier:
    """Classifier on the pooled labeled clients."""
    labeled = [d for d in datasets if d.labeled]
    if not labeled:
        raise ValueError("no labeled datasets")
    X = np.vstack([d.features for d in labeled])
    Y = np.vstack([d.labels for d in labeled])
    return train_classifier(X, Y, classifier_cfg)


def evaluate_accuracy(pred_labels, true_labels) -> float:
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction")
    return float(np.mean(pred == true))
