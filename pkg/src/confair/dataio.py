"""Loading, encoding, splitting and standardizing tabular fairness datasets."""
from __future__ import annotations

import itertools
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

DATASET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "datasets")

#: Column kinds understood by :func:`load_csv`.
KINDS = ("numeric", "categorical", "one-hot", "binary")

# kinds whose values are rescaled by Standardizer
CONTINUOUS_KINDS = ("numeric", "categorical")


class DataError(ValueError):
    """Raised for malformed data files or schemas."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Feature matrix, labels in {-1, +1} and a binary sensitive column.

    ``sensitive_values`` is 0 for group *a* and 1 for group *b* and always
    equals ``features[:, sensitive_index]``. Arrays are read-only.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive_index: int
    feature_names: tuple
    column_kinds: tuple = ()
    name: str = "dataset"
    sensitive_values: np.ndarray = field(init=False)

    def __post_init__(self):
        X = _frozen(self.features, float)
        y = _frozen(self.labels, float)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = X.shape
        if y.shape != (n,):
            raise DataError(f"expected {n} labels, got {y.shape}")
        if n < 2:
            raise DataError("a dataset needs at least two rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be -1 or +1")
        s = int(self.sensitive_index)
        if not 0 <= s < d:
            raise DataError(f"sensitive_index {s} out of range for {d} features")
        col = X[:, s]
        if not np.all((col == 0) | (col == 1)):
            raise DataError("sensitive column must be coded 0/1")
        if col.min() == col.max():
            raise DataError("both sensitive groups must be non-empty")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise DataError(f"expected {d} feature names, got {len(names)}")
        kinds = tuple(self.column_kinds) or ("numeric",) * d
        if len(kinds) != d:
            raise DataError(f"expected {d} column kinds, got {len(kinds)}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive_index", s)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "column_kinds", kinds)
        object.__setattr__(self, "sensitive_values", _frozen(col, np.int8))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(
            self.features[rows], self.labels[rows], self.sensitive_index,
            self.feature_names, self.column_kinds, self.name,
        )

    def with_features(self, features) -> "TabularDataset":
        return TabularDataset(
            features, self.labels, self.sensitive_index, self.feature_names,
            self.column_kinds, self.name,
        )

    def strata(self) -> np.ndarray:
        """Joint (label, group) cell id per row, in 0..3."""
        return 2 * (self.labels > 0).astype(int) + self.sensitive_values


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple = ()

    def encoded_names(self) -> list:
        if self.kind == "one-hot":
            return [f"{self.name}={c}" for c in self.categories]
        return [self.name]


@dataclass(frozen=True)
class DatasetSchema:
    label_column: str
    positive_label: str
    sensitive_column: str
    sensitive_positive_value: str
    columns: tuple
    negative_label: Optional[str] = None
    name: str = "dataset"

    @classmethod
    def from_dict(cls, doc: dict, name: str = "dataset") -> "DatasetSchema":
        try:
            cols = tuple(
                ColumnSpec(c["name"], c["kind"], tuple(str(v) for v in c.get("categories", ())))
                for c in doc["columns"]
            )
            schema = cls(
                label_column=doc["label_column"],
                positive_label=str(doc["positive_label"]),
                sensitive_column=doc["sensitive_column"],
                sensitive_positive_value=str(doc["sensitive_positive_value"]),
                columns=cols,
                negative_label=None if doc.get("negative_label") is None else str(doc["negative_label"]),
                name=doc.get("name", name),
            )
        except KeyError as exc:
            raise DataError(f"schema is missing field {exc}") from None
        schema.validate()
        return schema

    @classmethod
    def from_json(cls, path: str) -> "DatasetSchema":
        with open(path) as fh:
            doc = json.load(fh)
        name = os.path.splitext(os.path.basename(path))[0]
        return cls.from_dict(doc, name=name)

    def validate(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        for c in self.columns:
            if c.kind not in KINDS:
                raise DataError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.kind in ("categorical", "one-hot") and not c.categories:
                raise DataError(f"column {c.name!r}: {c.kind} needs a categories list")
            if c.kind == "binary" and c.categories and len(c.categories) != 2:
                raise DataError(f"column {c.name!r}: binary needs exactly two categories")
        sens = [c for c in self.columns if c.name == self.sensitive_column]
        if not sens:
            raise DataError(f"sensitive column {self.sensitive_column!r} is not a schema column")
        if sens[0].kind == "one-hot":
            raise DataError("the sensitive column cannot be one-hot encoded")

    def encoded_names(self) -> list:
        return [n for c in self.columns for n in c.encoded_names()]

    def source_columns(self, encoded_names: Sequence[str]) -> list:
        """Map encoded feature names back to schema columns, first-seen order."""
        lookup = {n: c.name for c in self.columns for n in c.encoded_names()}
        out = []
        for n in encoded_names:
            src = lookup[n]
            if src not in out:
                out.append(src)
        return out


def load_schema(schema) -> DatasetSchema:
    if isinstance(schema, DatasetSchema):
        return schema
    if isinstance(schema, dict):
        return DatasetSchema.from_dict(schema)
    return DatasetSchema.from_json(schema)


def load_csv(path: str, schema) -> TabularDataset:
    """Read a headered CSV and encode it according to ``schema``.

    ``schema`` may be a :class:`DatasetSchema`, a dict, or a path to a JSON
    schema file.
    """
    schema = load_schema(schema)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    needed = [schema.label_column] + [c.name for c in schema.columns]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise DataError(f"{path}: unknown column(s) {missing}")

    raw_y = df[schema.label_column].str.strip()
    allowed = {schema.positive_label}
    if schema.negative_label is not None:
        allowed.add(schema.negative_label)
        bad = sorted(set(raw_y) - allowed)
        if bad:
            raise DataError(f"label values outside schema: {bad[:5]}")
    elif len(set(raw_y) - allowed) > 1:
        raise DataError(f"label column has more than two values: {sorted(set(raw_y))[:5]}")
    y = np.where(raw_y == schema.positive_label, 1.0, -1.0)

    blocks, kinds = [], []
    sensitive_index = None
    for col in schema.columns:
        values = df[col.name].str.strip()
        if col.name == schema.sensitive_column:
            distinct = set(values)
            if len(distinct) > 2:
                raise DataError(
                    f"sensitive column {col.name!r} has {len(distinct)} values; it must be binary")
            sensitive_index = sum(b.shape[1] for b in blocks)
            blocks.append((values == schema.sensitive_positive_value).to_numpy(float)[:, None])
            kinds.append("binary")
            continue
        blocks.append(_encode_column(col, values, path))
        kinds.extend([col.kind] * blocks[-1].shape[1])

    X = np.hstack(blocks)
    return TabularDataset(X, y, sensitive_index, schema.encoded_names(), kinds, schema.name)


def _encode_column(col: ColumnSpec, values: pd.Series, path: str) -> np.ndarray:
    if col.kind == "numeric":
        out = pd.to_numeric(values, errors="coerce").to_numpy(float)
        bad = ~np.isfinite(out)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"{path}: non-numeric cell {values.iloc[row]!r} in numeric column "
                f"{col.name!r} (row {row + 2})")
        return out[:, None]
    if col.kind == "binary" and not col.categories:
        cats = sorted(set(values))
        if len(cats) > 2:
            raise DataError(f"binary column {col.name!r} has values {cats[:5]}")
    else:
        cats = list(col.categories)
    index = {c: i for i, c in enumerate(cats)}
    codes = values.map(index)
    if codes.isna().any():
        bad = sorted(set(values[codes.isna()]))
        raise DataError(f"{path}: column {col.name!r} has values outside schema: {bad[:5]}")
    codes = codes.to_numpy(int)
    if col.kind == "one-hot":
        return np.eye(len(cats))[codes]
    return codes.astype(float)[:, None]


BUILTIN = {
    "adult": ("adult_train.csv", "adult_test.csv"),
    "compas": ("compas.csv", None),
    "german": ("german.csv", None),
}


def load_builtin(name: str):
    """Return ``(dataset, test_or_None)`` for one of the bundled datasets."""
    if name not in BUILTIN:
        raise DataError(f"unknown dataset {name!r}; choose from {sorted(BUILTIN)}")
    train_file, test_file = BUILTIN[name]
    schema = DatasetSchema.from_json(os.path.join(DATASET_DIR, f"{name}.json"))
    data = load_csv(os.path.join(DATASET_DIR, train_file), schema)
    test = load_csv(os.path.join(DATASET_DIR, test_file), schema) if test_file else None
    return data, test


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "random_holdout"
    holdout_fraction: float = 0.2
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        if self.mode not in ("provided_test", "random_holdout"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _cell_quotas(cells: np.ndarray, total: int) -> np.ndarray:
    """Round per-cell targets so that the total, both label marginals and
    both group marginals are each within one sample of exact proportion.

    ``cells`` holds the size of the four (label, group) strata.
    """
    n = cells.sum()
    exact = cells * total / n
    lo = np.floor(exact).astype(int)
    best, best_err = None, np.inf
    for bump in itertools.product((0, 1), repeat=4):
        q = np.minimum(lo + np.array(bump), cells)
        if q.sum() != total:
            continue
        label_err = max(abs(q[0] + q[1] - exact[0] - exact[1]), abs(q[2] + q[3] - exact[2] - exact[3]))
        group_err = max(abs(q[0] + q[2] - exact[0] - exact[2]), abs(q[1] + q[3] - exact[1] - exact[3]))
        err = max(label_err, group_err) + 1e-3 * np.abs(q - exact).sum()
        if err < best_err:
            best, best_err = q, err
    if best is None:
        # tiny strata can make every rounding overshoot; fall back to largest remainder
        best = lo.copy()
        order = np.argsort(-(exact - lo), kind="stable")
        for i in order[: total - lo.sum()]:
            best[i] += 1
    return best


def _stratified_pick(dataset: TabularDataset, size: int, seed: int, stratify: bool = True):
    """Select ``size`` row indices; returns (picked, rest) both sorted."""
    rng = np.random.default_rng(seed)
    n = dataset.n
    if not stratify:
        perm = rng.permutation(n)
        return np.sort(perm[:size]), np.sort(perm[size:])
    strata = dataset.strata()
    cells = np.bincount(strata, minlength=4)
    quotas = _cell_quotas(cells, size)
    picked = []
    for c in range(4):
        members = np.flatnonzero(strata == c)
        picked.append(rng.permutation(members)[: quotas[c]])
    picked = np.sort(np.concatenate(picked))
    rest = np.setdiff1d(np.arange(n), picked)
    return picked, rest


def _check_nonempty(part: TabularDataset, what: str):
    for lab in (-1, 1):
        if not np.any(part.labels == lab):
            raise DataError(f"{what} split has no samples with label {lab:+d}")


def split(dataset: TabularDataset, spec: SplitSpec, test: Optional[TabularDataset] = None):
    """Partition into ``(train, test)``.

    With ``mode="provided_test"`` the companion ``test`` dataset is returned
    unchanged alongside ``dataset``.
    """
    if spec.mode == "provided_test":
        if test is None:
            raise DataError("provided_test split requested but no test file was loaded")
        return dataset, test
    n_test = int(round(dataset.n * spec.holdout_fraction))
    if not 0 < n_test < dataset.n:
        raise DataError(f"holdout of {n_test} rows out of {dataset.n} leaves a side empty")
    test_idx, train_idx = _stratified_pick(dataset, n_test, spec.seed, spec.stratify)
    try:
        train_part = dataset.subset(train_idx)
        test_part = dataset.subset(test_idx)
    except DataError as exc:
        raise DataError(f"holdout leaves a part degenerate: {exc}") from None
    _check_nonempty(train_part, "train")
    _check_nonempty(test_part, "test")
    return train_part, test_part


def split_indices(dataset: TabularDataset, spec: SplitSpec):
    """Index form of a random holdout split: ``(train_idx, test_idx)``."""
    n_test = int(round(dataset.n * spec.holdout_fraction))
    test_idx, train_idx = _stratified_pick(dataset, n_test, spec.seed, spec.stratify)
    return train_idx, test_idx


def stratified_subsample(dataset: TabularDataset, size: int, seed: int) -> TabularDataset:
    """Keep ``size`` rows, stratified on (label, group). No-op if already small enough."""
    if size >= dataset.n:
        return dataset
    picked, _ = _stratified_pick(dataset, size, seed)
    return dataset.subset(picked)


# --------------------------------------------------------------------------
# cross-validation folds


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    fold_assignments: np.ndarray

    def __post_init__(self):
        a = _frozen(self.fold_assignments, int)
        object.__setattr__(self, "fold_assignments", a)
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if a.min() < 0 or a.max() >= self.k or len(np.unique(a)) != self.k:
            raise ValueError("every fold id in [0, k) must appear")

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_assignments, minlength=self.k)

    def split(self, fold: int):
        """Return ``(train_idx, validation_idx)`` for one fold."""
        val = np.flatnonzero(self.fold_assignments == fold)
        train = np.flatnonzero(self.fold_assignments != fold)
        return train, val

    def __iter__(self):
        return (self.split(i) for i in range(self.k))


def make_folds(dataset: TabularDataset, k: int, seed: int) -> FoldPlan:
    """Label-stratified k-fold assignment.

    Rows are shuffled within each label, the positives are laid out before
    the negatives and dealt round-robin, so fold sizes differ by at most one
    and each fold's positive count is within one of its fair share.
    """
    n = dataset.n
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    rng = np.random.default_rng(seed)
    order = np.concatenate([
        rng.permutation(np.flatnonzero(dataset.labels > 0)),
        rng.permutation(np.flatnonzero(dataset.labels < 0)),
    ])
    assignments = np.empty(n, dtype=int)
    assignments[order] = np.arange(n) % k
    plan = FoldPlan(k, assignments)
    for fold in range(k):
        members = plan.fold_assignments == fold
        for g in (0, 1):
            if not np.any(members & (dataset.sensitive_values == g) & (dataset.labels > 0)):
                warnings.warn(
                    f"fold {fold} has no positive samples in group {'ab'[g]}", stacklevel=2)
    return plan


# --------------------------------------------------------------------------
# standardization


class Standardizer:
    """Zero-mean / unit-variance scaling of the continuous columns.

    Fit on the training split only; binary, one-hot and the sensitive
    column pass through untouched.
    """

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    def fit(self, dataset: TabularDataset) -> "Standardizer":
        X = dataset.features
        mask = np.array([k in CONTINUOUS_KINDS for k in dataset.column_kinds])
        mask[dataset.sensitive_index] = False
        self.mean_ = np.where(mask, X.mean(axis=0), 0.0)
        std = X.std(axis=0)
        self.scale_ = np.where(mask & (std > 0), std, 1.0)
        return self

    def transform(self, dataset: TabularDataset) -> TabularDataset:
        if self.mean_ is None:
            raise RuntimeError("Standardizer.transform called before fit")
        return dataset.with_features((dataset.features - self.mean_) / self.scale_)
