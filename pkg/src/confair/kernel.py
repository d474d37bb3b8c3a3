"""Linear and RBF kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError("rbf kernel needs gamma > 0")

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear"}
        return {"kind": "rbf", "gamma": float(self.gamma)}

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelSpec":
        return cls(doc["kind"], float(doc.get("gamma", 1.0)))


def _as_matrix(X, what):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"{what} must be a matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{what} contains non-finite values")
    return X


def gram(X, Y, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix with entry (i, j) = k(X[i], Y[j]).

    Passing the same array object for ``X`` and ``Y`` returns an exactly
    symmetric matrix.
    """
    same = Y is X
    X = _as_matrix(X, "X")
    Y = X if same else _as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]} columns")
    inner = X @ Y.T
    if spec.kind == "linear":
        K = inner
    else:
        sq_x = np.einsum("ij,ij->i", X, X)
        sq_y = sq_x if same else np.einsum("ij,ij->i", Y, Y)
        # ||x-y||^2 = ||x||^2 + ||y||^2 - 2<x,y>, clamped against round-off
        dist = sq_x[:, None] + sq_y[None, :] - 2.0 * inner
        np.maximum(dist, 0.0, out=dist)
        if same:
            np.fill_diagonal(dist, 0.0)
        dist *= -spec.gamma
        K = np.exp(dist, out=dist)
    if same:
        K = 0.5 * (K + K.T)
    return K


def kernel_row(x, X, spec: KernelSpec) -> np.ndarray:
    """Vector of k(x, X[i]) over the rows of ``X``."""
    x = np.asarray(x, dtype=float).ravel()
    return gram(X, x[None, :], spec)[:, 0]
