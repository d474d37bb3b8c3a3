"""Accuracy and group-fairness metrics from per-group confusion counts.

A metric whose conditioning cell is empty in either group is undefined and
reported as ``None``; it is never coerced to zero. Lower is fairer for every
difference metric here.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def scaled(self, k: int) -> "Counts":
        return Counts(k * self.tp, k * self.fp, k * self.tn, k * self.fn)


@dataclass(frozen=True)
class GroupConfusion:
    a: Counts
    b: Counts

    def swapped(self) -> "GroupConfusion":
        return GroupConfusion(self.b, self.a)

    def to_dict(self) -> dict:
        return {"a": asdict(self.a), "b": asdict(self.b)}


def confusion(y_true, y_pred, groups) -> GroupConfusion:
    """Per-group confusion counts for labels in {-1, +1} and groups in {0, 1}."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    groups = np.asarray(groups)
    if not (y_true.shape == y_pred.shape == groups.shape):
        raise ValueError("y_true, y_pred and groups must have equal length")
    if not np.all(np.isin(groups, (0, 1))):
        raise ValueError("groups must be coded 0/1")
    out = []
    for g in (0, 1):
        m = groups == g
        t, p = y_true[m] > 0, y_pred[m] > 0
        out.append(Counts(
            tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)),
            tn=int(np.sum(~t & ~p)), fn=int(np.sum(t & ~p)),
        ))
    return GroupConfusion(*out)


def _rate_diff(conf: GroupConfusion, num, den) -> Optional[float]:
    rates = []
    for c in (conf.a, conf.b):
        d = den(c)
        if d == 0:
            return None
        rates.append(num(c) / d)
    return abs(rates[0] - rates[1])


def deo(conf: GroupConfusion) -> Optional[float]:
    """Difference of equal opportunity: gap between the groups' true positive rates."""
    return _rate_diff(conf, lambda c: c.tp, lambda c: c.tp + c.fn)


def npv_diff(conf: GroupConfusion) -> Optional[float]:
    """Gap between the groups' negative predictive values tn / (tn + fn)."""
    return _rate_diff(conf, lambda c: c.tn, lambda c: c.tn + c.fn)


def tnr_diff(conf: GroupConfusion) -> Optional[float]:
    return _rate_diff(conf, lambda c: c.tn, lambda c: c.tn + c.fp)


def accuracy_from(conf: GroupConfusion) -> float:
    total = conf.a.total + conf.b.total
    if total == 0:
        raise ValueError("accuracy of an empty evaluation set")
    return (conf.a.tp + conf.a.tn + conf.b.tp + conf.b.tn) / total


@dataclass(frozen=True)
class FairnessReport:
    accuracy: float
    deo: Optional[float]
    npv_diff: Optional[float]
    tnr_diff: Optional[float]
    confusion: GroupConfusion

    @classmethod
    def from_confusion(cls, conf: GroupConfusion) -> "FairnessReport":
        return cls(accuracy_from(conf), deo(conf), npv_diff(conf), tnr_diff(conf), conf)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "deo": self.deo, "npv_diff": self.npv_diff,
            "tnr_diff": self.tnr_diff, "confusion": self.confusion.to_dict(),
        }


def evaluate(y_true, y_pred, groups) -> FairnessReport:
    return FairnessReport.from_confusion(confusion(y_true, y_pred, groups))


def format_metric(value: Optional[float], digits: int = 4) -> str:
    return "—" if value is None else f"{value:.{digits}f}"
