"""Soft-margin kernel SVM with a variance-scaled barycenter fairness constraint.

The dual is solved in alpha-space (``gamma_i = alpha_i * y_i``)::

    maximize   sum(alpha) - 1/2 alpha' (yy' * K) alpha
    subject to 0 <= alpha <= C,  y'alpha = 0,
               |r'alpha| <= f_tol

where ``r_i = y_i * (mean_a(K[i]) / sigma_a - mean_b(K[i]) / sigma_b)`` and
``mean_g(K[i])`` averages the kernel against the criterion-labeled points of
group g.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import qpsolve
from .dataio import TabularDataset
from .kernel import KernelSpec, gram

CRITERIA = ("equal_opportunity", "equal_tnr")
MODES = ("two_sided_inequality", "equality")
MODEL_FORMAT_VERSION = 1


class FairSvmError(RuntimeError):
    pass


class FairnessInfeasibleError(FairSvmError):
    pass


class DegenerateGroupError(FairSvmError, ValueError):
    pass


@dataclass(frozen=True)
class FairnessConstraintSpec:
    criterion: str = "equal_opportunity"
    f_tol: float = 0.0
    mode: str = "two_sided_inequality"

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if not self.f_tol >= 0:
            raise ValueError("f_tol must be non-negative")

    @property
    def active(self) -> bool:
        return math.isfinite(self.f_tol)

    @property
    def label_sign(self) -> int:
        return 1 if self.criterion == "equal_opportunity" else -1


@dataclass(frozen=True, eq=False)
class GroupBarycenter:
    group: str
    positive_indices: np.ndarray
    count: int
    sigma: float
    mean_kernel_row: np.ndarray

    @property
    def scaled_row(self) -> np.ndarray:
        return self.mean_kernel_row / self.sigma


def barycenters(train: TabularDataset, gram_matrix: np.ndarray, criterion: str = "equal_opportunity"):
    """Barycenters of both groups' criterion-labeled points in feature space.

    Each group's spread ``sigma_g`` is the root of the mean squared feature-
    space distance from its points to the *other* group's mean, computed with
    the kernel trick.
    """
    sign = 1 if criterion == "equal_opportunity" else -1
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    K = np.asarray(gram_matrix)
    idx = []
    for g in (0, 1):
        members = np.flatnonzero((train.sensitive_values == g) & (train.labels == sign))
        if members.size == 0:
            raise DegenerateGroupError(
                f"group {'ab'[g]} has no samples with label {sign:+d}; the constraint is undefined")
        idx.append(members)
    out = []
    for g in (0, 1):
        own, other = idx[g], idx[1 - g]
        mean_row = K[:, own].mean(axis=1)
        if own.size == 1:
            warnings.warn(
                f"group {'ab'[g]} has a single criterion-labeled point; using sigma = 1",
                stacklevel=2)
            sigma = 1.0
        else:
            cross = K[np.ix_(own, other)].mean(axis=1)
            other_sq = K[np.ix_(other, other)].mean()
            sq = K[own, own] - 2.0 * cross + other_sq
            var = float(sq.sum()) / (own.size - 1)
            if var > 0:
                sigma = math.sqrt(var)
            else:
                warnings.warn(f"group {'ab'[g]} has zero spread; using sigma = 1", stacklevel=2)
                sigma = 1.0
        out.append(GroupBarycenter("ab"[g], own, int(own.size), sigma, mean_row))
    return out[0], out[1]


def build_constraint_row(bary_a: GroupBarycenter, bary_b: GroupBarycenter, labels) -> np.ndarray:
    labels = np.asarray(labels, float)
    if bary_a.mean_kernel_row.shape != labels.shape or bary_b.mean_kernel_row.shape != labels.shape:
        raise ValueError("barycenter rows and labels differ in length")
    return labels * (bary_a.scaled_row - bary_b.scaled_row)


@dataclass(frozen=True, eq=False)
class FairSvmModel:
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: KernelSpec
    train_features: np.ndarray
    feature_subset: tuple
    n_features_in: int
    regularization_C: float
    constraint: Optional[FairnessConstraintSpec] = None
    constraint_value: Optional[float] = None
    solver_status: str = "optimal"

    @property
    def sv_eps(self) -> float:
        return 1e-6 * self.regularization_C

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alphas > self.sv_eps)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in:
            raise ValueError(
                f"expected a matrix with {self.n_features_in} columns, got shape {X.shape}")
        sv = self.support_indices
        coef = self.alphas[sv] * self.labels[sv]
        Xs = X[:, list(self.feature_subset)]
        out = np.empty(X.shape[0])
        # chunk so the test-by-SV kernel block stays small
        step = max(1, 4_000_000 // max(sv.size, 1))
        for start in range(0, X.shape[0], step):
            block = gram(Xs[start:start + step], self.train_features[sv], self.kernel)
            out[start:start + step] = block @ coef + self.bias
        return out

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1.0, -1.0)

    def to_dict(self) -> dict:
        sv = self.support_indices
        c = self.constraint
        return {
            "format": "confair-svm",
            "version": MODEL_FORMAT_VERSION,
            "kernel": self.kernel.to_dict(),
            "feature_subset": list(map(int, self.feature_subset)),
            "n_features_in": int(self.n_features_in),
            "C": float(self.regularization_C),
            "bias": float(self.bias),
            "support_vectors": self.train_features[sv].tolist(),
            "support_alphas": self.alphas[sv].tolist(),
            "support_labels": self.labels[sv].tolist(),
            "constraint": None if c is None else {
                "criterion": c.criterion,
                "f_tol": c.f_tol if c.active else None,
                "mode": c.mode,
            },
            "constraint_value": self.constraint_value,
            "solver_status": self.solver_status,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FairSvmModel":
        if doc.get("format") != "confair-svm" or doc.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a confair-svm model document of a supported version")
        c = doc["constraint"]
        constraint = None if c is None else FairnessConstraintSpec(
            c["criterion"], math.inf if c["f_tol"] is None else c["f_tol"], c["mode"])
        subset = tuple(doc["feature_subset"])
        sv = np.array(doc["support_vectors"], dtype=float).reshape(-1, len(subset))
        return cls(
            alphas=np.array(doc["support_alphas"], dtype=float),
            labels=np.array(doc["support_labels"], dtype=float),
            bias=float(doc["bias"]),
            kernel=KernelSpec.from_dict(doc["kernel"]),
            train_features=sv,
            feature_subset=subset,
            n_features_in=int(doc["n_features_in"]),
            regularization_C=float(doc["C"]),
            constraint=constraint,
            constraint_value=doc.get("constraint_value"),
            solver_status=doc.get("solver_status", "optimal"),
        )

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "FairSvmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _bias(alphas, labels, K, C, sv_eps) -> float:
    g = K @ (alphas * labels)
    free = (alphas > sv_eps) & (alphas < C - sv_eps)
    if free.any():
        return float(np.mean(labels[free] - g[free]))
    # no free vector: midpoint of the interval of biases satisfying the KKT
    # conditions at the bounds
    at_zero = alphas <= sv_eps
    at_c = ~at_zero
    pos, neg = labels > 0, labels < 0
    lower = np.concatenate([(1 - g)[at_zero & pos], (-1 - g)[at_c & neg]])
    upper = np.concatenate([(1 - g)[at_c & pos], (-1 - g)[at_zero & neg]])
    lo = lower.max() if lower.size else -np.inf
    hi = upper.min() if upper.size else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    if np.isfinite(lo):
        return float(lo)
    if np.isfinite(hi):
        return float(hi)
    return 0.0


def train(
    train: TabularDataset,
    feature_subset: Optional[Sequence[int]] = None,
    kernel: KernelSpec = KernelSpec(),
    C: float = 1.0,
    constraint: Optional[FairnessConstraintSpec] = None,
    settings: Optional[qpsolve.QpSettings] = None,
    gram_matrix: Optional[np.ndarray] = None,
) -> FairSvmModel:
    """Fit the (optionally fairness-constrained) SVM dual.

    ``constraint=None`` or an infinite ``f_tol`` drops the fairness rows and
    gives the ordinary soft-margin SVM. ``gram_matrix`` may be passed to reuse
    a kernel matrix already computed on the same rows and feature subset.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    subset = tuple(range(train.d)) if feature_subset is None else tuple(int(j) for j in feature_subset)
    if not subset:
        raise ValueError("feature_subset must not be empty")
    X = train.features[:, list(subset)]
    y = train.labels
    n = train.n
    K = gram(X, X, kernel) if gram_matrix is None else np.asarray(gram_matrix)
    if K.shape != (n, n):
        raise ValueError(f"gram matrix has shape {K.shape}, expected {(n, n)}")

    row = None
    criterion = constraint.criterion if constraint is not None else "equal_opportunity"
    if constraint is not None and constraint.active:
        row = build_constraint_row(*barycenters(train, K, criterion), y)
    else:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                row = build_constraint_row(*barycenters(train, K, criterion), y)
        except DegenerateGroupError:
            row = None

    r = None
    if constraint is not None and constraint.active:
        # y'a = 0 holds, so only the part of r orthogonal to y matters; using
        # it keeps [y; r] full rank
        r = row - (row @ y) / n * y
        if np.max(np.abs(r)) <= 1e-12 * max(1.0, np.max(np.abs(row))):
            if constraint.mode == "equality" and constraint.f_tol > 0:
                raise FairnessInfeasibleError(
                    f"the constraint row vanishes, so r'a = {constraint.f_tol} cannot hold")
            r = None

    # identical (x, y) pairs share their kernel row and constraint entry, so
    # only the sum of their multipliers matters; solving for that sum removes
    # the flat directions that make the Newton matrix singular
    _, first, inverse, counts = np.unique(
        np.column_stack([X, y]), axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if first.size == n:
        first, inverse, counts = np.arange(n), np.arange(n), np.ones(n, dtype=int)
    yu = y[first]
    nu = first.size
    P = np.outer(yu, yu) * K[np.ix_(first, first)]
    q = -np.ones(nu)
    eye = sp.identity(nu, format="csr")
    G_blocks = [-eye, eye]
    h = [np.zeros(nu), float(C) * counts.astype(float)]
    A = [yu[None, :]]
    b = [0.0]
    if r is not None:
        ru = r[first]
        # |r'a| <= 0 has an empty interior; it is the equality r'a = 0
        if constraint.mode == "two_sided_inequality" and constraint.f_tol > 0:
            G_blocks += [sp.csr_matrix(ru[None, :]), sp.csr_matrix(-ru[None, :])]
            h += [np.array([constraint.f_tol]), np.array([constraint.f_tol])]
        else:
            A.append(ru[None, :])
            b.append(constraint.f_tol)
    qp = qpsolve.QuadraticProgram(
        P, q, sp.vstack(G_blocks, format="csr"), np.concatenate(h), np.vstack(A), np.array(b))
    sol = qpsolve.solve(qp, settings)
    if sol.status == "infeasible":
        raise FairnessInfeasibleError(
            "f_tol infeasible for this data; increase f_tol" if row is not None and constraint is not None
            and constraint.active else "SVM dual reported infeasible")
    if sol.status != "optimal":
        raise FairSvmError(f"QP solver stopped with status {sol.status} after {sol.iterations} iterations")

    alphas = np.clip(sol.x[inverse] / counts[inverse], 0.0, C)
    sv_eps = 1e-6 * C
    bias = _bias(alphas, y, K, C, sv_eps)
    value = None if row is None else float(abs(row @ alphas))
    return FairSvmModel(
        alphas=alphas, labels=y.copy(), bias=bias, kernel=kernel,
        train_features=np.ascontiguousarray(X), feature_subset=subset,
        n_features_in=train.d, regularization_C=float(C), constraint=constraint,
        constraint_value=value, solver_status=sol.status,
    )


def predict(model: FairSvmModel, X) -> np.ndarray:
    """Labels in {-1, +1}; a zero decision value maps to +1."""
    return model.predict(X)


def constraint_value(model: FairSvmModel, bary_a: GroupBarycenter, bary_b: GroupBarycenter) -> float:
    row = build_constraint_row(bary_a, bary_b, model.labels)
    return float(abs(row @ model.alphas))
