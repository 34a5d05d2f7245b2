"""Training objectives: cross-entropy, projection head, class bank and contrastive loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def _labels(labels, num_classes):
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes}): {y.tolist()}")
    return y


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    y = _labels(labels, logits.shape[1])
    return T.scale(T.mean(T.pick(T.log_softmax(logits), y)), -1.0)


@dataclass
class ProjectionHead:
    """Channel-mean pooling of ``Z`` followed by a bias-free linear map ``N*N -> d``.

    Without a bias the normalised output depends only on the direction of
    ``z W``, so a constant offset cannot satisfy the contrastive objective.
    """

    weight: Tensor  # (N*N, d)
    normalize: bool = True

    @classmethod
    def init(cls, pairs: int, dim: int, rng, normalize=True, dtype=np.float64):
        # pooled reconstructions are small, so unit-variance weights keep |zW| away from 0
        w = rng.normal(0.0, 1.0, size=(pairs, dim)).astype(dtype)
        return cls(Tensor(w, requires_grad=True), normalize)

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def named_parameters(self, prefix=""):
        return {f"{prefix}weight": self.weight}

    def __call__(self, Z: Tensor) -> Tensor:
        if Z.shape[-2] != self.weight.shape[0]:
            raise DimensionError(f"Z has {Z.shape[-2]} rows, head expects {self.weight.shape[0]}")
        z = T.mean(Z, axis=-1)
        if z.ndim == 1:
            f = T.reshape(T.reshape(z, (1, z.shape[0])) @ self.weight, (self.dim,))
        else:
            f = z @ self.weight
        return T.l2_normalize(f, axis=-1) if self.normalize else f


def project(Z: Tensor, head: ProjectionHead) -> Tensor:
    return head(Z)


class ClassAggregationBank:
    """Per-class momentum averages of contrastive features.

    The bank is a running statistic: it holds plain arrays and never joins the
    autodiff graph.
    """

    def __init__(self, means: np.ndarray, alpha: float = 0.9):
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {alpha}")
        self.means = np.array(means, dtype=np.float64)
        self.alpha = float(alpha)

    @classmethod
    def init(cls, num_classes: int, dim: int, rng, alpha: float = 0.9):
        m = rng.normal(size=(num_classes, dim))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        return cls(m, alpha)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    def update(self, features, labels):
        f = features.data if isinstance(features, Tensor) else np.asarray(features)
        y = _labels(labels, self.num_classes)
        if f.shape[0] == 0 or y.size == 0:
            raise ValueError("cannot update the bank from an empty batch")
        for k in np.unique(y):
            class_mean = f[y == k].mean(axis=0)
            self.means[k] = self.alpha * self.means[k] + (1.0 - self.alpha) * class_mean
        if not np.all(np.isfinite(self.means)):
            raise ArithmeticError("class bank became non-finite")
        return self


def bank_update(bank: ClassAggregationBank, features, labels) -> ClassAggregationBank:
    return bank.update(features, labels)


def csc_loss(f: Tensor, labels, bank: ClassAggregationBank, tau: float = 0.125, normalize: bool = True) -> Tensor:
    """Mean class-specific contrastive loss of features ``f`` (B, d) against the bank."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if f.ndim == 1:
        f = T.reshape(f, (1, f.shape[0]))
    y = _labels(labels, bank.num_classes)
    anchors = bank.means
    if normalize:
        anchors = anchors / np.maximum(np.linalg.norm(anchors, axis=1, keepdims=True), 1e-12)
    anchors = Tensor(anchors.T.astype(f.dtype))
    sims = T.scale(f @ anchors, 1.0 / tau)
    return T.scale(T.mean(T.pick(T.log_softmax(sims), y)), -1.0)


def total_loss(ce: Tensor, csc: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"balance weight must be non-negative, got {lam}")
    return T.add(ce, T.scale(csc, lam))
