"""Weighted majority voting over classifier outputs."""

from dataclasses import dataclass

import numpy as np

from .classifier import Prediction
from .errors import InvalidInput

TIE_TOL = 1e-12


@dataclass(frozen=True)
class EnsembleConfig:
    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) < 1:
            raise InvalidInput("an ensemble needs at least one member")
        if any(x < 0 or not np.isfinite(x) for x in w):
            raise InvalidInput("ensemble weights must be finite and non-negative")
        if abs(sum(w) - 1.0) > 1e-9:
            raise InvalidInput(f"ensemble weights must sum to 1, got {sum(w)!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, raw):
        raw = np.asarray(raw, dtype=np.float64)
        total = raw.sum()
        if raw.ndim != 1 or not total > 0:
            raise InvalidInput("raw weights must be a non-empty vector with a positive sum")
        return cls(tuple(raw / total))

    @classmethod
    def uniform(cls, k):
        return cls.normalized(np.ones(k))

    @property
    def k(self):
        return len(self.weights)


def majority_vote(votes, cfg, confidences=None, n_classes=2):
    """Class with the largest total weight among the members voting for it.

    Ties go to the tied class with the larger weighted confidence sum (when
    ``confidences`` is given), then to the lower class index.
    """
    votes = [int(v) for v in votes]
    if len(votes) != cfg.k:
        raise InvalidInput(f"{len(votes)} votes for {cfg.k} weights")
    if any(v < 0 or v >= n_classes for v in votes):
        raise InvalidInput(f"votes must be class indices in [0, {n_classes})")
    mass = np.zeros(n_classes)
    conf_mass = np.zeros(n_classes)
    for j, v in enumerate(votes):
        mass[v] += cfg.weights[j]
        if confidences is not None:
            conf_mass[v] += cfg.weights[j] * confidences[j]
    tied = np.flatnonzero(mass >= mass.max() - TIE_TOL)
    if len(tied) > 1 and confidences is not None:
        best = conf_mass[tied].max()
        tied = tied[conf_mass[tied] >= best - TIE_TOL]
    return int(tied[0])


def ensemble_predict(predictions, cfg):
    """Combine member predictions: class by weighted vote, probabilities by weighted mean."""
    if len(predictions) != cfg.k:
        raise InvalidInput(f"{len(predictions)} predictions for {cfg.k} weights")
    votes = [p.predicted_class for p in predictions]
    conf = [p.confidence for p in predictions]
    n_classes = len(predictions[0].probs)
    cls = majority_vote(votes, cfg, conf, n_classes)
    probs = sum(w * np.asarray(p.probs, dtype=np.float64) for w, p in zip(cfg.weights, predictions))
    probs = probs / probs.sum()
    return Prediction(probs, cls, float(probs[cls]))


def ensemble_arrays(prob_arrays, cfg):
    """Row-wise :func:`ensemble_predict` over K arrays of shape (N, n_classes).

    Returns ``(probs, classes, confidences)``.
    """
    if len(prob_arrays) != cfg.k:
        raise InvalidInput(f"{len(prob_arrays)} members for {cfg.k} weights")
    arrays = [np.asarray(a, dtype=np.float64) for a in prob_arrays]
    if len({a.shape for a in arrays}) != 1:
        raise InvalidInput("member prediction arrays differ in shape")
    out = [
        ensemble_predict([Prediction.from_probs(a[i]) for a in arrays], cfg)
        for i in range(arrays[0].shape[0])
    ]
    n_classes = arrays[0].shape[1]
    probs = np.array([p.probs for p in out]).reshape(-1, n_classes)
    classes = np.array([p.predicted_class for p in out], dtype=np.int64)
    conf = np.array([p.confidence for p in out])
    return probs, classes, conf
