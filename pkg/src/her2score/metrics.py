"""Clinical evaluation metrics.

Confusion matrices, binary classification metrics, ROC/AUC, mean IoU for
segmentation masks, and decision curve analysis. Multiclass problems are
unbundled one-vs-rest before the binary metrics apply. Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError, UndefinedRocError

# DCA threshold grid: 0.00 .. 0.30 step 0.01 (clinical cap at 0.30)
DCA_DEFAULT_THRESHOLDS = tuple(i / 100 for i in range(31))


@dataclass
class ConfusionMatrix:
    labels: List[str]
    counts: np.ndarray  # (true, predicted)

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if arr.shape != (n, n):
            raise InvalidArgumentError(f"counts must be {n}x{n}, got {arr.shape}")
        if (arr < 0).any():
            raise InvalidArgumentError("counts must be nonnegative")
        self.counts = arr

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, predicted_labels, label_order: Sequence[str]) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise InvalidArgumentError("label sequences must have equal length")
    index = {label: i for i, label in enumerate(label_order)}
    counts = np.zeros((len(label_order), len(label_order)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise InvalidArgumentError(f"unknown true label {t!r}")
        if p not in index:
            raise InvalidArgumentError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(list(label_order), counts)


def one_vs_rest(matrix: ConfusionMatrix, positive_label: str) -> ConfusionMatrix:
    """Collapse a multiclass matrix to binary [positive, rest]."""
    if positive_label not in matrix.labels:
        raise InvalidArgumentError(f"unknown label {positive_label!r}")
    i = matrix.labels.index(positive_label)
    tp = matrix.counts[i, i]
    fn = matrix.counts[i].sum() - tp
    fp = matrix.counts[:, i].sum() - tp
    tn = matrix.total - tp - fn - fp
    return ConfusionMatrix(
        [positive_label, "rest"], np.array([[tp, fn], [fp, tn]], dtype=np.int64)
    )


@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    sensitivity: float  # = recall; reported separately to mirror the table schema
    specificity: float
    f1: float
    degenerate: Tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
            "degenerate": list(self.degenerate),
        }


def classification_metrics(matrix: ConfusionMatrix, positive_label: str) -> ClassificationMetrics:
    """Standard binary metrics; zero-denominator cases yield 0 and are flagged."""
    if len(matrix.labels) != 2:
        raise InvalidArgumentError("binary matrix required; use one_vs_rest first")
    p = matrix.labels.index(positive_label) if positive_label in matrix.labels else None
    if p is None:
        raise InvalidArgumentError(f"unknown label {positive_label!r}")
    n = 1 - p
    tp = int(matrix.counts[p, p])
    fn = int(matrix.counts[p, n])
    fp = int(matrix.counts[n, p])
    tn = int(matrix.counts[n, n])
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    accuracy = ratio(tp + tn, tp + tn + fp + fn, "accuracy")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    specificity = ratio(tn, tn + fp, "specificity")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return ClassificationMetrics(
        accuracy, precision, recall, recall, specificity, f1, tuple(degenerate)
    )


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

@dataclass
class RocCurve:
    points: List[Tuple[float, float]]  # (fpr, tpr), sorted by fpr
    auc: float


def roc(scores: Sequence[Tuple[float, bool]]) -> RocCurve:
    """Threshold sweep over distinct scores, ties grouped; AUC by trapezoid.

    The trapezoid over grouped ties credits each tied positive/negative pair
    one half, so the AUC equals the Mann-Whitney concordance statistic.
    """
    pos = sum(1 for _, is_pos in scores if is_pos)
    neg = len(scores) - pos
    if pos == 0 or neg == 0:
        raise UndefinedRocError(
            f"ROC needs both classes (got {pos} positives, {neg} negatives)"
        )
    by_score: Dict[float, List[int]] = {}
    for score, is_pos in scores:
        bucket = by_score.setdefault(float(score), [0, 0])
        bucket[0 if is_pos else 1] += 1
    points = [(0.0, 0.0)]
    tp = fp = 0
    auc = 0.0
    prev_fpr, prev_tpr = 0.0, 0.0
    for score in sorted(by_score, reverse=True):
        dtp, dfp = by_score[score]
        tp += dtp
        fp += dfp
        fpr, tpr = fp / neg, tp / pos
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((fpr, tpr))
        prev_fpr, prev_tpr = fpr, tpr
    return RocCurve(points=points, auc=auc)


# ---------------------------------------------------------------------------
# Mean IoU
# ---------------------------------------------------------------------------

@dataclass
class IouReport:
    per_label: Dict[int, float]
    mean_iou: float


def mean_iou(pred, truth) -> IouReport:
    """IoU per label present in either map, averaged over those labels only."""
    pred_arr = np.asarray(getattr(pred, "labels", pred))
    truth_arr = np.asarray(getattr(truth, "labels", truth))
    if pred_arr.shape != truth_arr.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {pred_arr.shape} vs {truth_arr.shape}"
        )
    labels = sorted(set(np.unique(pred_arr)) | set(np.unique(truth_arr)))
    per_label = {}
    for k in labels:
        p = pred_arr == k
        t = truth_arr == k
        union = int(np.logical_or(p, t).sum())
        inter = int(np.logical_and(p, t).sum())
        per_label[int(k)] = inter / union if union else 0.0
    mean = sum(per_label.values()) / len(per_label) if per_label else 0.0
    return IouReport(per_label=per_label, mean_iou=mean)


# ---------------------------------------------------------------------------
# Decision curve analysis
# ---------------------------------------------------------------------------

@dataclass
class DcaCurve:
    thresholds: List[float]
    model_nb: List[float]
    treat_all_nb: List[float]
    treat_none_nb: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.treat_none_nb:
            self.treat_none_nb = [0.0] * len(self.thresholds)


def dca(scores: Sequence[Tuple[float, bool]], thresholds=None) -> DcaCurve:
    """Net benefit NB(t) = TP(t)/N - FP(t)/N * t/(1-t).

    A sample is called positive at threshold t when its probability is >= t.
    treat-all assumes every sample positive; treat-none is identically zero.
    """
    if thresholds is None:
        thresholds = DCA_DEFAULT_THRESHOLDS
    thresholds = [float(t) for t in thresholds]
    for t in thresholds:
        if not (0.0 <= t < 1.0):
            raise InvalidArgumentError(f"thresholds must lie in [0, 1), got {t}")
    n = len(scores)
    if n == 0:
        raise InvalidArgumentError("dca needs at least one sample")
    probs = np.asarray([s for s, _ in scores], dtype=np.float64)
    truth = np.asarray([bool(p) for _, p in scores])
    prevalence = truth.mean()
    model_nb, treat_all_nb = [], []
    for t in thresholds:
        called = probs >= t
        tp = int(np.count_nonzero(called & truth))
        fp = int(np.count_nonzero(called & ~truth))
        odds = t / (1.0 - t)
        model_nb.append(tp / n - fp / n * odds)
        treat_all_nb.append(prevalence - (1.0 - prevalence) * odds)
    return DcaCurve(thresholds=thresholds, model_nb=model_nb, treat_all_nb=treat_all_nb)


# ---------------------------------------------------------------------------
# Prediction-file ingestion and curve emission
# ---------------------------------------------------------------------------

@dataclass
class PredictionSet:
    ids: List[str]
    true_labels: List[str]
    pred_labels: List[str]
    probabilities: Dict[str, List[float]]  # label -> per-sample probability

    @property
    def labels(self) -> List[str]:
        return sorted(self.probabilities)

    def binary_scores(self, label: str) -> List[Tuple[float, bool]]:
        return [
            (p, t == label)
            for p, t in zip(self.probabilities[label], self.true_labels)
        ]


def read_predictions(path) -> PredictionSet:
    """Parse `id,true_label,pred_label,prob_<label>...` CSV.

    Malformed rows raise InvalidArgumentError naming the line number.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"prediction file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file (line 1)") from None
        required = ["id", "true_label", "pred_label"]
        if header[: len(required)] != required:
            raise InvalidArgumentError(
                f"{path}: line 1: header must start with {','.join(required)}"
            )
        prob_labels = []
        for col in header[len(required) :]:
            if not col.startswith("prob_"):
                raise InvalidArgumentError(
                    f"{path}: line 1: unexpected column {col!r} (want prob_<label>)"
                )
            prob_labels.append(col[len("prob_") :])
        ids, trues, preds = [], [], []
        probs: Dict[str, List[float]] = {label: [] for label in prob_labels}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidArgumentError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            ids.append(row[0])
            trues.append(row[1])
            preds.append(row[2])
            for label, value in zip(prob_labels, row[3:]):
                try:
                    probs[label].append(float(value))
                except ValueError:
                    raise InvalidArgumentError(
                        f"{path}: line {lineno}: bad probability {value!r}"
                    ) from None
    return PredictionSet(ids, trues, preds, probs)


def roc_csv(curve: RocCurve) -> str:
    lines = ["fpr,tpr"]
    lines += [f"{fpr!r},{tpr!r}" for fpr, tpr in curve.points]
    return "\n".join(lines) + "\n"


def dca_csv(curve: DcaCurve) -> str:
    lines = ["threshold,model_nb,treat_all_nb,treat_none_nb"]
    for t, m, a, z in zip(curve.thresholds, curve.model_nb, curve.treat_all_nb, curve.treat_none_nb):
        lines.append(f"{t!r},{m!r},{a!r},{z!r}")
    return "\n".join(lines) + "\n"
