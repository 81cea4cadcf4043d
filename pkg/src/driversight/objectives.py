"""Cost-sensitive training loss and the skew-aware evaluation suite.

The loss reweights per-sample cross-entropy by the mean off-diagonal cost of
the true class's row, so a uniform cost matrix reduces it to plain
cross-entropy. The metric report scores each class one-vs-rest and macro
averages: precision, recall, specificity, F1, geometric mean of recall and
specificity, and the index of balanced accuracy
iba_c = (1 + alpha * (recall - specificity)) * recall * specificity.
Ratios with a zero denominator resolve to 0 and are flagged, so a
majority-only predictor scores badly instead of erroring out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PER_CLASS_METRICS = ("precision", "recall", "specificity", "f1", "g_mean", "iba")


@dataclass
class CostMatrix:
    """c[i][j] = cost of predicting class j when the truth is class i."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        if self.c.ndim != 2 or self.c.shape[1] != n:
            raise ValueError(f"cost matrix must be square, got {self.c.shape}")
        if (self.c < 0).any():
            raise ValueError("costs must be nonnegative")
        if np.diagonal(self.c).any():
            raise ValueError("diagonal costs must be zero")

    @property
    def n_classes(self) -> int:
        return self.c.shape[0]

    def class_weights(self) -> np.ndarray:
        """Mean off-diagonal cost per true class (the loss reweighting)."""
        n = self.n_classes
        return self.c.sum(axis=1) / (n - 1)


def uniform_cost_matrix(n_classes: int) -> CostMatrix:
    c = np.ones((n_classes, n_classes)) - np.eye(n_classes)
    return CostMatrix(c)


def default_cost_matrix(class_counts) -> CostMatrix:
    """Inverse-frequency costs: c[i][j] = max(counts) / counts[i] off-diagonal."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if (counts <= 0).any():
        raise ValueError(f"class counts must all be positive, got {class_counts}")
    w = counts.max() / counts
    c = w[:, None] * (1.0 - np.eye(len(counts)))
    return CostMatrix(c)


def cost_sensitive_loss(probabilities: Tensor, truths, costs: CostMatrix) -> Tensor:
    """Batch-mean cross-entropy, each sample weighted by its true class's cost.

    `probabilities` is (B, N) with rows summing to 1; gradients flow through it.
    """
    probabilities = T.as_tensor(probabilities)
    truths = np.asarray(truths, dtype=np.int64)
    b, n = probabilities.shape
    if n != costs.n_classes:
        raise ValueError(f"{n} probability columns vs {costs.n_classes} cost classes")
    if truths.ndim != 1 or len(truths) != b:
        raise ValueError(f"expected {b} labels, got shape {truths.shape}")
    if truths.min() < 0 or truths.max() >= n:
        raise ValueError(f"labels out of range for {n} classes")
    rowsums = probabilities.data.sum(axis=1)
    if not np.allclose(rowsums, 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1 (+-1e-6)")
    w = costs.class_weights()[truths].astype(probabilities.dtype)
    p_true = probabilities[np.arange(b), truths]
    return -(Tensor(w) * T.log(p_true)).mean()


def cost_sensitive_loss_from_logits(logits: Tensor, truths, costs: CostMatrix) -> Tensor:
    """Same value as cost_sensitive_loss(softmax(logits), ...) but computed via
    log-softmax, which stays finite for confidently wrong predictions."""
    logits = T.as_tensor(logits)
    truths = np.asarray(truths, dtype=np.int64)
    b = logits.shape[0]
    w = costs.class_weights()[truths].astype(logits.dtype)
    logp = T.log_softmax(logits, axis=-1)[np.arange(b), truths]
    return -(Tensor(w) * logp).mean()


def confusion(truths, predictions, n_classes: int) -> np.ndarray:
    """Counts matrix m[i][j] = samples of true class i predicted as class j."""
    truths = np.asarray(truths, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if truths.shape != predictions.shape:
        raise ValueError(f"length mismatch: {truths.shape} truths vs {predictions.shape} predictions")
    if len(truths) and (truths.min() < 0 or truths.max() >= n_classes):
        raise ValueError("truth label out of range")
    if len(predictions) and (predictions.min() < 0 or predictions.max() >= n_classes):
        raise ValueError("predicted label out of range")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (truths, predictions), 1)
    return m


def _safe_ratio(num: float, den: float, flags: list, what: str) -> float:
    if den == 0:
        flags.append(what)
        return 0.0
    return num / den


@dataclass
class MetricReport:
    """Per-class and macro-averaged skew-aware metrics."""

    per_class: dict[str, np.ndarray]
    macro: dict[str, float]
    support: np.ndarray
    confusion_matrix: np.ndarray
    iba_alpha: float
    zero_division_flags: list[str] = field(default_factory=list)

    def as_lines(self) -> list[str]:
        """Line-delimited key=value rendering."""
        lines = []
        n = len(self.support)
        for name in PER_CLASS_METRICS:
            for c in range(n):
                lines.append(f"class{c}.{name}={self.per_class[name][c]:.6f}")
        for name in PER_CLASS_METRICS:
            lines.append(f"macro.{name}={self.macro[name]:.6f}")
        for c in range(n):
            lines.append(f"class{c}.support={int(self.support[c])}")
        lines.append(f"iba_alpha={self.iba_alpha}")
        if self.zero_division_flags:
            lines.append("zero_division=" + ",".join(self.zero_division_flags))
        return lines

    def as_dict(self) -> dict:
        return {
            "per_class": {k: [float(v) for v in vals] for k, vals in self.per_class.items()},
            "macro": {k: float(v) for k, v in self.macro.items()},
            "support": [int(s) for s in self.support],
            "confusion_matrix": [[int(v) for v in row] for row in self.confusion_matrix],
            "iba_alpha": self.iba_alpha,
            "zero_division_flags": list(self.zero_division_flags),
        }


def metric_report(m: np.ndarray, iba_alpha: float = 0.1) -> MetricReport:
    """Score a confusion matrix one-vs-rest per class, then macro average."""
    m = np.asarray(m)
    n = m.shape[0]
    total = m.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    per = {name: np.zeros(n) for name in PER_CLASS_METRICS}
    flags: list[str] = []
    for c in range(n):
        tp = float(m[c, c])
        fn = float(m[c].sum() - tp)
        fp = float(m[:, c].sum() - tp)
        tn = float(total - tp - fn - fp)
        recall = _safe_ratio(tp, tp + fn, flags, f"class{c}.recall")
        precision = _safe_ratio(tp, tp + fp, flags, f"class{c}.precision")
        specificity = _safe_ratio(tn, tn + fp, flags, f"class{c}.specificity")
        f1 = _safe_ratio(2 * precision * recall, precision + recall, flags, f"class{c}.f1")
        per["recall"][c] = recall
        per["precision"][c] = precision
        per["specificity"][c] = specificity
        per["f1"][c] = f1
        per["g_mean"][c] = np.sqrt(recall * specificity)
        per["iba"][c] = (1.0 + iba_alpha * (recall - specificity)) * recall * specificity
    macro = {name: float(per[name].mean()) for name in PER_CLASS_METRICS}
    return MetricReport(
        per_class=per,
        macro=macro,
        support=m.sum(axis=1),
        confusion_matrix=m.copy(),
        iba_alpha=iba_alpha,
        zero_division_flags=flags,
    )
