"""Evaluation: losses, accuracy, macro-F1, pair-invariance score, head stats.

Cross-entropy and accuracy are Monte-Carlo estimates over freshly sampled
examples; regret is the estimate minus the exact enumeration-based optimum,
so a perfectly invariant, source-optimal model drives it to zero.  The
invariance score measures how far a model is from treating the two members
of a semantic-sharing pair identically (mean Jensen-Shannon divergence, so 0
means exact invariance and ln 2 is the worst case).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cld import (
    DomainSpec,
    FamilySpec,
    SSPair,
    bayes_oracle,
    make_ss_pair,
    sample_batch,
    uniform_style_distribution,
)
from .network import ModelParams, forward
from .penalties import js_divergence
from .validation import PROB_FLOOR


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Counts[i, j] = examples with true class i predicted as class j."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    counts = np.bincount(labels * num_classes + predictions, minlength=num_classes**2)
    return counts.reshape(num_classes, num_classes)


def precision_recall_f1(predictions, labels, num_classes: int):
    """Per-class precision/recall/F1 arrays; undefined ratios count as 0."""
    cm = confusion_matrix(predictions, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1.0), 0.0)
    recall = np.where(actual > 0, tp / np.where(actual > 0, actual, 1.0), 0.0)
    denom = precision + recall
    f1 = np.where(denom > 0, 2.0 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return precision, recall, f1


def macro_f1(predictions, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes."""
    _, _, f1 = precision_recall_f1(predictions, labels, num_classes)
    return float(f1.mean())


def cross_entropy_and_accuracy(params: ModelParams, observations, labels) -> tuple[float, float]:
    """Mean negative log-probability of the true class, and accuracy."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = forward(params, np.asarray(observations, dtype=np.float64)).probabilities
    picked = probs[np.arange(labels.shape[0]), labels]
    ce = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    acc = float((np.argmax(probs, axis=1) == labels).mean())
    return ce, acc


def invariance_score(params: ModelParams, pairs: Sequence[SSPair]) -> float:
    """Mean JS divergence between predictions on the two sides of each pair."""
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    originals = np.stack([p.original.observation for p in pairs])
    augmented = np.stack([p.augmented_observation for p in pairs])
    probs_a = forward(params, originals).probabilities
    probs_b = forward(params, augmented).probabilities
    return float(np.mean(js_divergence(probs_a, probs_b)))


@dataclass(frozen=True)
class HeadWeightHistogram:
    """Histogram of absolute head weights plus a high-weight focus count."""

    bin_edges: np.ndarray
    counts: np.ndarray
    high_weight_threshold: float
    high_weight_count: int

    def to_dict(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "counts": self.counts.tolist(),
            "high_weight_threshold": self.high_weight_threshold,
            "high_weight_count": self.high_weight_count,
        }


def head_weight_histogram(
    params: ModelParams,
    bin_edges=None,
    num_bins: int = 30,
    high_weight_threshold: float | None = None,
) -> HeadWeightHistogram:
    """Histogram of |w| over all head entries.

    Default edges are ``num_bins`` uniform bins over [0, max|w|]; counts then
    sum to ``num_feature_units * num_classes``.  The threshold for the
    high-weight count defaults to half the largest magnitude.
    """
    magnitudes = np.abs(params.head).ravel()
    top = float(magnitudes.max()) if magnitudes.size else 0.0
    if bin_edges is None:
        bin_edges = np.linspace(0.0, top if top > 0 else 1.0, num_bins + 1)
    else:
        bin_edges = np.asarray(bin_edges, dtype=np.float64)
        if bin_edges.ndim != 1 or bin_edges.size < 2:
            raise ValueError("bin_edges must contain at least two edges")
        if np.any(np.diff(bin_edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
    counts, _ = np.histogram(magnitudes, bins=bin_edges)
    if high_weight_threshold is None:
        high_weight_threshold = 0.5 * top
    high = int((magnitudes > high_weight_threshold).sum())
    return HeadWeightHistogram(bin_edges, counts, float(high_weight_threshold), high)


@dataclass(frozen=True)
class EvalReport:
    cross_entropy: float
    accuracy: float
    macro_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    invariance_score: float
    head_histogram: HeadWeightHistogram
    regret: float

    def to_dict(self) -> dict:
        return {
            "cross_entropy": self.cross_entropy,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "invariance_score": self.invariance_score,
            "head_histogram": self.head_histogram.to_dict(),
            "regret": self.regret,
        }


def evaluate(
    params: ModelParams,
    family: FamilySpec,
    domain: DomainSpec,
    num_samples: int,
    rng: np.random.Generator,
    num_invariance_pairs: int = 200,
    num_bins: int = 30,
    high_weight_threshold: float | None = None,
) -> EvalReport:
    """Monte-Carlo evaluation on fresh samples from one domain.

    Draws ``num_samples`` labeled examples for the loss metrics, then
    ``num_invariance_pairs`` fidelity-1 pairs for the invariance score;
    regret is the cross-entropy estimate minus the exact domain optimum.
    """
    if num_samples < 1:
        raise ValueError(f"num_samples must be >= 1, got {num_samples}")
    batch = sample_batch(family, domain, num_samples, rng)
    probs = forward(params, batch.observations).probabilities
    predictions = np.argmax(probs, axis=1)
    picked = probs[np.arange(num_samples), batch.labels]
    ce = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    acc = float((predictions == batch.labels).mean())
    precision, recall, f1 = precision_recall_f1(predictions, batch.labels, family.num_classes)

    styles = uniform_style_distribution(family)
    base = sample_batch(family, domain, max(1, num_invariance_pairs), rng)
    pairs = [
        make_ss_pair(family, base.example(i), 1.0, styles, rng) for i in range(len(base))
    ]
    return EvalReport(
        cross_entropy=ce,
        accuracy=acc,
        macro_f1=float(f1.mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        invariance_score=invariance_score(params, pairs),
        head_histogram=head_weight_histogram(params, num_bins=num_bins, high_weight_threshold=high_weight_threshold),
        regret=ce - bayes_oracle(family, domain),
    )


__all__ = [
    "EvalReport",
    "HeadWeightHistogram",
    "confusion_matrix",
    "cross_entropy_and_accuracy",
    "evaluate",
    "head_weight_histogram",
    "invariance_score",
    "macro_f1",
    "precision_recall_f1",
]
