"""Window scoring, percentile thresholding, and detection metrics.

A window's anomaly score is its composite reconstruction loss under the
trained model. The decision threshold is a percentile (default 99) of
validation scores, and a window is flagged iff its score strictly
exceeds the threshold. Evaluation is purely per-window: there is no
point adjustment or any other cross-window credit assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .model import ModelConfig, ModelParams
from .train import LossWeights, composite_loss


class DetectError(ValueError):
    pass


@dataclass
class ScoreSeries:
    """Per-window scores and labels with the applied threshold."""

    scores: np.ndarray
    labels: np.ndarray
    threshold: float

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise DetectError(
                f"scores/labels must be matching 1-D arrays, got "
                f"{self.scores.shape} and {self.labels.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise DetectError("scores contain non-finite values")


@dataclass
class EvalReport:
    """Per-class precision/recall/F1, accuracy, ranking metrics, and the
    confusion counts they derive from. roc_auc / average_precision are
    None when the labels contain a single class (undefined, not zero)."""

    precision_attack: float
    recall_attack: float
    f1_attack: float
    precision_normal: float
    recall_normal: float
    f1_normal: float
    accuracy: float
    roc_auc: float | None
    average_precision: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [
            f"{'':10s} {'prec':>8s} {'rec':>8s} {'f1':>8s}",
            f"{'normal':10s} {self.precision_normal:8.4f} "
            f"{self.recall_normal:8.4f} {self.f1_normal:8.4f}",
            f"{'attack':10s} {self.precision_attack:8.4f} "
            f"{self.recall_attack:8.4f} {self.f1_attack:8.4f}",
            f"accuracy  {self.accuracy:.4f}",
            f"roc_auc   {self.roc_auc if self.roc_auc is not None else 'undefined'}",
            f"avg_prec  {self.average_precision if self.average_precision is not None else 'undefined'}",
            f"threshold {self.threshold}",
            f"confusion tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}",
        ]
        return "\n".join(lines)


def score_windows(windows, cfg: ModelConfig, params: ModelParams,
                  weights: LossWeights) -> np.ndarray:
    """One non-negative anomaly score per window; parameters untouched."""
    scores = np.empty(len(windows))
    for i, window in enumerate(windows):
        breakdown, _ = composite_loss(window, cfg, params, weights)
        scores[i] = breakdown.total
    return scores


def percentile_threshold(val_scores, p: float = 99.0) -> float:
    """Linear-interpolation percentile of the validation scores."""
    val_scores = np.asarray(val_scores, dtype=np.float64)
    if val_scores.size == 0:
        raise DetectError("cannot take a percentile of empty scores")
    if not 0.0 < p <= 100.0:
        raise DetectError(f"percentile must be in (0, 100], got {p}")
    return float(np.percentile(val_scores, p, method="linear"))


def classify(scores, threshold: float) -> np.ndarray:
    """Predict attack iff score > threshold (strict inequality)."""
    if not np.isfinite(threshold):
        raise DetectError(f"threshold must be finite, got {threshold}")
    return (np.asarray(scores, dtype=np.float64) > threshold).astype(np.int64)


def roc_auc(labels, scores) -> float | None:
    """ROC-AUC via the rank statistic with midranks for ties.

    Equals the fraction of (attack, normal) pairs ordered correctly,
    counting ties as 1/2. None when only one class is present.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(labels.size)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_precision(labels, scores) -> float | None:
    """Area under the precision-recall curve by step integration over the
    descending-score sweep (distinct scores as thresholds)."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        return None
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut_points = np.concatenate([distinct, [labels.size - 1]])
    tp = np.cumsum(sorted_labels)[cut_points]
    count = cut_points + 1
    precision = tp / count
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def _prf(tp: int, fp: int, fn: int):
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate(predictions, labels, scores, threshold: float = float("nan")) -> EvalReport:
    """Full detection report from per-window predictions, labels, scores."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if not (predictions.shape == labels.shape == scores.shape):
        raise DetectError(
            f"length mismatch: predictions {predictions.shape}, labels "
            f"{labels.shape}, scores {scores.shape}")
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    tn = int(((predictions == 0) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    p_att, r_att, f1_att = _prf(tp, fp, fn)
    p_nor, r_nor, f1_nor = _prf(tn, fn, fp)
    return EvalReport(
        precision_attack=p_att, recall_attack=r_att, f1_attack=f1_att,
        precision_normal=p_nor, recall_normal=r_nor, f1_normal=f1_nor,
        accuracy=(tp + tn) / labels.size,
        roc_auc=roc_auc(labels, scores),
        average_precision=average_precision(labels, scores),
        tp=tp, fp=fp, tn=tn, fn=fn, threshold=float(threshold))
