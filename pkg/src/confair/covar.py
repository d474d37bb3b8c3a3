"""Maximum-likelihood covariance and detection of sensitive-feature covariates."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .dataio import TabularDataset


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    values: np.ndarray
    sample_count: int

    def to_csv(self, path: str, feature_names=None):
        d = self.values.shape[0]
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + names)
            for name, row in zip(names, self.values):
                w.writerow([name] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class CovariateSet:
    indices: tuple
    covariances: tuple

    def __len__(self):
        return len(self.indices)


def mle_covariance(train: TabularDataset) -> CovarianceMatrix:
    """Gaussian ML covariance, normalized by n rather than n - 1."""
    X = train.features
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need more samples than features for a covariance estimate (n={n}, d={d})")
    if n < 5 * d:
        warnings.warn(f"only {n} samples for {d} features; covariance estimate is noisy", stacklevel=2)
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    if not np.any(cov):
        warnings.warn("all features are constant; covariance is identically zero", stacklevel=2)
    return CovarianceMatrix(cov, n)


def find_covariates(train: TabularDataset, s: int) -> CovariateSet:
    """Features with positive covariance with column ``s``, largest first.

    Column ``s`` itself is excluded. Ties keep ascending feature order.
    """
    if not 0 <= s < train.d:
        raise ValueError(f"feature index {s} out of range")
    column = mle_covariance(train).values[:, s]
    keep = [j for j in np.flatnonzero(column > 0.0) if j != s]
    keep.sort(key=lambda j: (-column[j], j))
    return CovariateSet(tuple(int(j) for j in keep), tuple(float(column[j]) for j in keep))
