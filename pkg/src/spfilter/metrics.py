"""Classifier and filter quality measures recorded once per epoch."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .mixture import MixtureModel, posterior

VIRTUAL_GRID = np.arange(1, 10000) * 1e-4

METRICS_COLUMNS = [
    "epoch", "test_error", "test_loss", "labeled_train_loss", "filter_auroc",
    "med_conf_correct", "q25_conf_correct", "q75_conf_correct",
    "med_conf_incorrect", "q25_conf_incorrect", "q75_conf_incorrect",
    "virtual_threshold", "mean_pseudo_weight", "pseudo_accuracy",
]
META_AUROC_COLUMNS = ["auroc_bmm_conf", "auroc_gmm_conf", "auroc_bmm_loss", "auroc_gmm_loss"]


def auroc(scores, positives) -> float | None:
    """Probability that a random positive outscores a random negative (ties count half).

    Returns ``None`` unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValueError("scores and flags must have equal length")
    value = kernels.midrank_auroc(scores, positives)
    return None if math.isnan(value) else float(value)


def error_rate(model, test_x, test_y) -> float:
    from .nn import forward

    test_y = np.asarray(test_y)
    if test_y.size == 0:
        raise ValueError("empty test set")
    pred = np.argmax(forward(model, test_x), axis=1)
    return float(np.mean(pred != test_y))


@dataclass(frozen=True)
class GroupSummary:
    median: float | None = None
    q25: float | None = None
    q75: float | None = None


def summarize(values) -> GroupSummary:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return GroupSummary()
    q25, med, q75 = np.percentile(values, [25, 50, 75])
    return GroupSummary(float(med), float(q25), float(q75))


def confidence_summary(scores, correct) -> tuple[GroupSummary, GroupSummary]:
    """Median and quartiles of confidence for correct and for incorrect pseudo-labels."""
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    return summarize(scores[correct]), summarize(scores[~correct])


def virtual_threshold(model: MixtureModel | None, weight_level: float = 0.95) -> float | None:
    """Smallest grid confidence above which every posterior weight reaches ``weight_level``."""
    if model is None:
        return None
    ok = posterior(model, VIRTUAL_GRID) >= weight_level
    if not ok[-1]:
        return None
    failing = np.flatnonzero(~ok)
    if failing.size == 0:
        return float(VIRTUAL_GRID[0])
    return float(VIRTUAL_GRID[failing[-1] + 1])


@dataclass
class MetricsRecord:
    epoch: int
    test_error: float
    test_loss: float
    labeled_train_loss: float
    filter_auroc: float | None = None
    med_conf_correct: float | None = None
    q25_conf_correct: float | None = None
    q75_conf_correct: float | None = None
    med_conf_incorrect: float | None = None
    q25_conf_incorrect: float | None = None
    q75_conf_incorrect: float | None = None
    virtual_threshold: float | None = None
    mean_pseudo_weight: float | None = None
    pseudo_accuracy: float | None = None
    auroc_bmm_conf: float | None = None
    auroc_gmm_conf: float | None = None
    auroc_bmm_loss: float | None = None
    auroc_gmm_loss: float | None = None

    def row(self, columns) -> list[str]:
        return [format_value(getattr(self, c)) for c in columns]

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        kw = {}
        for f in fields(cls):
            if f.name not in row:
                continue
            v = row[f.name]
            if f.name == "epoch":
                kw[f.name] = int(v)
            else:
                kw[f.name] = None if v == "" else float(v)
        return cls(**kw)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))
