"""Evaluation metrics: ACC, AUC, precision, recall, F1, AP and AC.

The positive class is malignant (label 1). Thresholded metrics predict
positive when the positive-class score exceeds 0.5, which agrees with an
arg-max over two probabilities that breaks ties toward class 0.
"""

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInput

THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalReport:
    acc: float
    auc: Optional[float]
    precision: float
    recall: float
    f1: float
    ap: Optional[float]
    ac: Optional[float]
    n_samples: int
    positive_class: str = "malignant"

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self, title=None):
        rows = [
            ("ACC", self.acc), ("AUC", self.auc), ("F1", self.f1),
            ("Prec", self.precision), ("Reca", self.recall),
            ("AP", self.ap), ("AC", self.ac),
        ]
        lines = [title] if title else []
        lines += [f"{name:<5} {_fmt(v)}" for name, v in rows]
        lines.append(f"{'n':<5} {self.n_samples}")
        return "\n".join(lines)


def _fmt(v):
    return "undefined" if v is None else f"{v:.4f}"


def roc_auc(scores, labels):
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly, ties count half.

    Returns None unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks; exact half-integers
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels):
    """Step-wise area under the precision-recall curve.

    Thresholds run over the distinct scores in descending order; each adds
    ``(recall_k - recall_{k-1}) * precision_k``. Returns None without positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0 or n_pos == len(labels):
        return None
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], (labels[order] == 1)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def compute_report(scores, labels, confidences=None, predicted=None):
    """All seven metrics for positive-class ``scores`` against 0/1 ``labels``.

    ``predicted`` overrides the thresholded class decisions (an ensemble
    vote, say). ``confidences`` defaults to the probability of the predicted
    class. AC is their mean over correctly classified samples. AUC and AP
    are None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n = len(scores)
    if n < 1:
        raise InvalidInput("no samples to evaluate")
    if len(labels) != n:
        raise InvalidInput(f"{n} scores but {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise InvalidInput("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    if predicted is None:
        pred = (scores > THRESHOLD).astype(np.int64)
    else:
        pred = np.asarray(predicted).ravel().astype(np.int64)
        if len(pred) != n:
            raise InvalidInput(f"{n} scores but {len(pred)} predicted classes")
    if confidences is None:
        confidences = np.where(pred == 1, scores, 1.0 - scores)
    confidences = np.asarray(confidences, dtype=np.float64).ravel()
    if len(confidences) != n:
        raise InvalidInput(f"{n} scores but {len(confidences)} confidences")

    correct = pred == labels
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        acc=float(correct.mean()),
        auc=roc_auc(scores, labels),
        precision=precision,
        recall=recall,
        f1=f1,
        ap=average_precision(scores, labels),
        ac=float(confidences[correct].mean()) if correct.any() else None,
        n_samples=n,
    )
