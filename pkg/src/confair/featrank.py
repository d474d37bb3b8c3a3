"""Permutation feature importance and the critical feature set."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .dataio import TabularDataset


EXHAUSTIVE_MAX_ROWS = 8


class Classifier(Protocol):
    def predict(self, X) -> np.ndarray: ...


def accuracy(clf: Classifier, X, y) -> float:
    """Fraction of ``clf.predict(X)`` equal to ``y``."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("accuracy of an empty set")
    pred = np.asarray(clf.predict(X))
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {y.shape}")
    return float(np.mean(pred == y))


ScoreFn = Callable[[Classifier, np.ndarray, np.ndarray], float]


@dataclass(frozen=True, eq=False)
class FeatureRanking:
    importances: np.ndarray
    order: np.ndarray
    baseline_accuracy: float
    permutations_per_feature: int
    per_feature_scores: np.ndarray

    @classmethod
    def from_scores(cls, baseline: float, scores) -> "FeatureRanking":
        scores = np.asarray(scores, dtype=float)
        # mean of the drops, so a feature whose shuffles never change the
        # score gets exactly 0 rather than an ulp of rounding
        importances = (baseline - scores).mean(axis=1)
        # descending importance, ties by ascending index
        order = np.lexsort((np.arange(importances.size), -importances))
        return cls(importances, order, float(baseline), scores.shape[1], scores)

    @property
    def std(self) -> np.ndarray:
        ddof = 1 if self.permutations_per_feature > 1 else 0
        return self.per_feature_scores.std(axis=1, ddof=ddof)

    def to_csv(self, path: str, feature_names: Sequence[str]):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_name", "importance", "std_over_K"])
            for j in self.order:
                w.writerow([feature_names[j], repr(float(self.importances[j])), repr(float(self.std[j]))])


@dataclass(frozen=True)
class CriticalFeatureSet:
    indices: tuple
    threshold: float

    def __contains__(self, j):
        return j in self.indices

    def __len__(self):
        return len(self.indices)


def find_crit_feats(
    train: Optional[TabularDataset],
    test: TabularDataset,
    clf: Classifier,
    K: int = 5,
    seed: int = 0,
    score: ScoreFn = accuracy,
    exhaustive: bool = False,
) -> FeatureRanking:
    """Importance of each feature as the drop in ``score`` when its test
    column is shuffled, averaged over ``K`` shuffles.

    ``clf`` must already be trained on ``train``. Shuffle k of feature j is
    drawn from a generator seeded with ``(seed, j, k)``. With ``exhaustive``
    every one of the n! orderings is used instead (tiny test sets only), which
    gives the exact expected importance.
    """
    if test.n == 0:
        raise ValueError("empty test set")
    if exhaustive:
        if test.n > EXHAUSTIVE_MAX_ROWS:
            raise ValueError(f"exhaustive permutation needs n <= {EXHAUSTIVE_MAX_ROWS}, got {test.n}")
        perms = [np.array(p) for p in itertools.permutations(range(test.n))]
        K = math.factorial(test.n)
    if K < 1:
        raise ValueError("K must be at least 1")
    if train is not None and train.d != test.d:
        raise ValueError("train and test have different feature counts")
    X = np.array(test.features, dtype=float)  # private working copy
    y = test.labels
    base = score(clf, X, y)
    scores = np.empty((test.d, K))
    for j in range(test.d):
        original = X[:, j].copy()
        for k in range(K):
            perm = perms[k] if exhaustive else np.random.default_rng([seed, j, k]).permutation(test.n)
            X[:, j] = original[perm]
            scores[j, k] = score(clf, X, y)
        X[:, j] = original
    return FeatureRanking.from_scores(base, scores)


def to_critical_set(ranking: FeatureRanking, threshold: float = 0.0) -> CriticalFeatureSet:
    """Features whose importance is strictly above ``threshold``, in ranking order."""
    idx = tuple(int(j) for j in ranking.order if ranking.importances[j] > threshold)
    return CriticalFeatureSet(idx, float(threshold))
