"""Config-driven experiment runs: split, grid-searched CV, training of the
configured methods over an f_tol sweep, and result/plot-data files."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, fairsvm
from .algorithm import EXTRINSIC_BIAS, analyze, retrain
from .dataio import (
    DataError, FoldPlan, SplitSpec, Standardizer, TabularDataset, load_builtin, load_csv,
    load_schema, make_folds, split, stratified_subsample,
)
from .featrank import FeatureRanking
from .kernel import KernelSpec, gram
from .metrics import FairnessReport, evaluate

log = logging.getLogger(__name__)

METHODS = ("unconstrained_svm", "fair_svm_full_features", "confair")
BASELINE = "baseline_svm"

RESULT_COLUMNS = (
    "dataset", "method", "f_tol", "kernel_kind", "run_seed",
    "accuracy", "deo", "npv_diff", "tnr_diff", "constraint_value",
    "confair_case", "chosen_C", "chosen_gamma", "status", "wall_time_s",
)
SUMMARY_COLUMNS = (
    "dataset", "method", "f_tol", "kernel_kind", "runs", "failed_runs",
    "accuracy_mean", "accuracy_std", "deo_mean", "deo_std",
    "npv_diff_mean", "npv_diff_std", "tnr_diff_mean", "tnr_diff_std",
)
TIMING_COLUMNS = ("wall_time_s",)

DEFAULT_SUBSAMPLE = {"adult": 4000}
DEFAULT_HOLDOUT = 0.2


class ConfigError(ValueError):
    pass


class AllCellsFailedError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    dataset: object = "german"
    methods: list = field(default_factory=lambda: ["confair"])
    kernel: str = "rbf"
    C_grid: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, 100.0])
    gamma_grid: list = field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0, 10.0])
    f_tol_list: list = field(default_factory=lambda: [0.0, 0.1, 0.001])
    criterion: str = "equal_opportunity"
    constraint_mode: str = "two_sided_inequality"
    runs: Optional[int] = None
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    cv_folds: int = 10
    cv_subsample: Optional[int] = 1000
    K_permutations: int = 5
    tau: float = 0.0
    subsample: Optional[int] = None
    holdout_fraction: float = DEFAULT_HOLDOUT
    output_dir: str = "results"

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = [self.methods]
        if self.runs is None:
            self.runs = len(self.seeds)
        elif self.runs != len(self.seeds):
            if self.runs < len(self.seeds):
                self.seeds = list(self.seeds[: self.runs])
            else:
                raise ConfigError(f"runs={self.runs} but only {len(self.seeds)} seeds given")
        if self.subsample is None and isinstance(self.dataset, str):
            self.subsample = DEFAULT_SUBSAMPLE.get(self.dataset)
        self.validate()

    def validate(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if not self.C_grid or any(not c > 0 for c in self.C_grid):
            raise ConfigError("C_grid must be a non-empty list of positive numbers")
        if not self.gamma_grid or any(not g > 0 for g in self.gamma_grid):
            raise ConfigError("gamma_grid must be a non-empty list of positive numbers")
        if not self.f_tol_list or any(not f >= 0 for f in self.f_tol_list):
            raise ConfigError("f_tol_list must be a non-empty list of non-negative numbers")
        if self.criterion not in fairsvm.CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.constraint_mode not in fairsvm.MODES:
            raise ConfigError(f"unknown constraint_mode {self.constraint_mode!r}")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.runs < 1 or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.K_permutations < 1:
            raise ConfigError("K_permutations must be at least 1")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if isinstance(self.dataset, dict) and not {"path", "schema"} <= set(self.dataset):
            raise ConfigError("a custom dataset needs 'path' and 'schema' entries")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "method" in doc:
            doc["methods"] = doc.pop("method")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {unknown}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            try:
                doc[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                doc[key.strip()] = raw
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def dataset_name(self) -> str:
        if isinstance(self.dataset, str):
            return self.dataset
        return self.dataset.get("name") or os.path.splitext(os.path.basename(self.dataset["path"]))[0]


@dataclass
class ResultRow:
    dataset: str
    method: str
    f_tol: Optional[float]
    kernel_kind: str
    run_seed: int
    accuracy: Optional[float] = None
    deo: Optional[float] = None
    npv_diff: Optional[float] = None
    tnr_diff: Optional[float] = None
    constraint_value: Optional[float] = None
    confair_case: Optional[str] = None
    chosen_C: Optional[float] = None
    chosen_gamma: Optional[float] = None
    status: str = "ok"
    wall_time_s: float = 0.0

    def fill(self, report: FairnessReport):
        self.accuracy = report.accuracy
        self.deo = report.deo
        self.npv_diff = report.npv_diff
        self.tnr_diff = report.tnr_diff

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SummaryRow:
    dataset: str
    method: str
    f_tol: Optional[float]
    kernel_kind: str
    runs: int
    failed_runs: int
    accuracy_mean: Optional[float] = None
    accuracy_std: Optional[float] = None
    deo_mean: Optional[float] = None
    deo_std: Optional[float] = None
    npv_diff_mean: Optional[float] = None
    npv_diff_std: Optional[float] = None
    tnr_diff_mean: Optional[float] = None
    tnr_diff_std: Optional[float] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    summary: list
    rankings: list
    feature_names: tuple
    runs: list

    def rows_for(self, method: str, f_tol=None) -> list:
        return [r for r in self.rows if r.method == method and (f_tol is None or r.f_tol == f_tol)]


# --------------------------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CONFAIR_THREADS", "1")))
    except ValueError:
        return 1


def _pool_map(fn, items):
    items = list(items)
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _decision_from_gram(model: fairsvm.FairSvmModel, K_rows: np.ndarray) -> np.ndarray:
    """Decision values given kernel rows against the model's training points."""
    sv = model.support_indices
    return K_rows[:, sv] @ (model.alphas[sv] * model.labels[sv]) + model.bias


def select_hyperparams(
    train: TabularDataset,
    folds: FoldPlan,
    C_grid: Sequence[float],
    gamma_grid: Sequence[float],
    kernel_kind: str = "rbf",
    trainer: Optional[Callable] = None,
):
    """Grid cell with the best mean validation accuracy.

    Ties go to the smaller C, then the smaller gamma. ``trainer`` defaults to
    the unconstrained SVM; it is called as ``trainer(train_part, C, kernel,
    gram_matrix)`` and must return a :class:`fairsvm.FairSvmModel`. Returns
    ``(C, gamma, scores)`` where ``scores`` maps each cell to its mean
    accuracy or to the error message that made it fail.
    """
    if not C_grid or not gamma_grid:
        raise ValueError("hyperparameter grids must be non-empty")
    trainer = trainer or (lambda part, C, kernel, K: fairsvm.train(part, None, kernel, C, None, gram_matrix=K))
    gammas = sorted(set(gamma_grid)) if kernel_kind == "rbf" else [None]
    Cs = sorted(set(C_grid))
    X = train.features

    def evaluate_gamma(gamma):
        kernel = KernelSpec(kernel_kind, gamma if gamma is not None else 1.0)
        K_full = gram(X, X, kernel)
        acc = {C: [] for C in Cs}
        errors = {}
        for tr_idx, val_idx in folds:
            part = train.subset(tr_idx)
            K_tr = K_full[np.ix_(tr_idx, tr_idx)]
            K_val = K_full[np.ix_(val_idx, tr_idx)]
            for C in Cs:
                if C in errors:
                    continue
                try:
                    model = trainer(part, C, kernel, K_tr)
                    pred = np.where(_decision_from_gram(model, K_val) >= 0, 1.0, -1.0)
                    acc[C].append(float(np.mean(pred == train.labels[val_idx])))
                except Exception as exc:  # recorded per cell; other cells continue
                    errors[C] = f"{type(exc).__name__}: {exc}"
        return {(C, gamma): errors.get(C, float(np.mean(acc[C])) if C not in errors else None) for C in Cs}

    scores = {}
    for part in _pool_map(evaluate_gamma, gammas):
        scores.update(part)
    best, best_acc = None, -np.inf
    for C in Cs:
        for gamma in gammas:
            s = scores[(C, gamma)]
            if isinstance(s, float) and s > best_acc:
                best, best_acc = (C, gamma), s
    if best is None:
        detail = "; ".join(f"C={c}, gamma={g}: {e}" for (c, g), e in scores.items())
        raise AllCellsFailedError(f"every hyperparameter cell failed: {detail}")
    return best[0], best[1], scores


# --------------------------------------------------------------------------


def load_dataset(config: ExperimentConfig):
    """Return ``(data, provided_test_or_None)`` for the configured dataset."""
    if isinstance(config.dataset, str):
        return load_builtin(config.dataset)
    spec = config.dataset
    schema = load_schema(spec["schema"])
    data = load_csv(spec["path"], schema)
    test = load_csv(spec["test_path"], schema) if spec.get("test_path") else None
    return data, test


def _run_seed(config: ExperimentConfig, data, provided_test, seed: int):
    name = config.dataset_name
    mode = "provided_test" if provided_test is not None else "random_holdout"
    train_ds, test_ds = split(data, SplitSpec(mode, config.holdout_fraction, seed, True), provided_test)
    if config.subsample:
        train_ds = stratified_subsample(train_ds, config.subsample, seed)
    scaler = Standardizer().fit(train_ds)
    train_ds, test_ds = scaler.transform(train_ds), scaler.transform(test_ds)

    cv_ds = train_ds
    if config.cv_subsample:
        cv_ds = stratified_subsample(train_ds, config.cv_subsample, seed)
    folds = make_folds(cv_ds, config.cv_folds, seed)
    t0 = time.perf_counter()
    C, gamma, _ = select_hyperparams(cv_ds, folds, config.C_grid, config.gamma_grid, config.kernel)
    cv_time = time.perf_counter() - t0
    kernel = KernelSpec(config.kernel, gamma if gamma is not None else 1.0)
    log.info("%s seed %d: C=%s gamma=%s (cv %.1fs)", name, seed, C, gamma, cv_time)

    rows = []
    info = {"seed": seed, "train_rows": train_ds.n, "test_rows": test_ds.n,
            "cv_rows": cv_ds.n, "chosen_C": C, "chosen_gamma": gamma}

    def new_row(method, f_tol):
        return ResultRow(name, method, f_tol, config.kernel, seed, chosen_C=C, chosen_gamma=gamma)

    def score(row, model):
        row.fill(evaluate(test_ds.labels, model.predict(test_ds.features), test_ds.sensitive_values))

    t0 = time.perf_counter()
    K_train = gram(train_ds.features, train_ds.features, kernel)
    baseline_row = new_row(BASELINE, None)
    try:
        baseline = fairsvm.train(train_ds, None, kernel, C, None, gram_matrix=K_train)
        score(baseline_row, baseline)
        baseline_row.constraint_value = baseline.constraint_value
    except Exception as exc:
        baseline = None
        baseline_row.status = f"error: {type(exc).__name__}: {exc}"
    baseline_row.wall_time_s = time.perf_counter() - t0
    rows.append(baseline_row)

    ranking = None
    analysis = None
    for method in config.methods:
        if method == "confair" and baseline is not None:
            t0 = time.perf_counter()
            try:
                analysis = analyze(train_ds, test_ds, baseline, None, config.K_permutations, config.tau, seed)
                ranking = analysis.ranking
                info["confair"] = {
                    "case": analysis.decision.case,
                    "critical_features": list(analysis.critical.indices),
                    "covariates": list(analysis.covariates.indices),
                    "training_features": list(analysis.decision.training_features),
                    "analysis_time_s": time.perf_counter() - t0,
                }
            except Exception as exc:
                info["confair"] = {"error": f"{type(exc).__name__}: {exc}"}
                analysis = None
        for f_tol in config.f_tol_list:
            row = new_row(method, f_tol)
            t0 = time.perf_counter()
            constraint = fairsvm.FairnessConstraintSpec(config.criterion, f_tol, config.constraint_mode)
            try:
                if baseline is None:
                    raise RuntimeError("baseline training failed")
                if method == "unconstrained_svm":
                    model = baseline
                elif method == "fair_svm_full_features":
                    model = fairsvm.train(train_ds, None, kernel, C, constraint, gram_matrix=K_train)
                else:
                    if analysis is None:
                        raise RuntimeError(info["confair"].get("error", "confair analysis failed"))
                    result = retrain(analysis, train_ds, baseline, constraint, kernel, C)
                    model = result.model
                    row.confair_case = result.decision.case
                score(row, model)
                if method != "unconstrained_svm" and not (
                        method == "confair" and row.confair_case == EXTRINSIC_BIAS):
                    row.constraint_value = model.constraint_value
            except Exception as exc:
                row.status = f"error: {type(exc).__name__}: {exc}"
            row.wall_time_s = time.perf_counter() - t0
            rows.append(row)
    return rows, ranking, info


def _failed_seed(config: ExperimentConfig, seed: int, exc: Exception) -> list:
    status = f"error: {type(exc).__name__}: {exc}"
    cells = [(BASELINE, None)] + [(m, f) for m in config.methods for f in config.f_tol_list]
    return [ResultRow(config.dataset_name, m, f, config.kernel, seed, status=status) for m, f in cells]


def _mean_std(values):
    if not values or any(v is None for v in values):
        return None, None
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(rows: Sequence[ResultRow], runs: int) -> list:
    """Mean and standard deviation per (method, f_tol) over seeds.

    A metric aggregates to ``None`` if any run failed or left it undefined.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r.dataset, r.method, r.f_tol, r.kernel_kind), []).append(r)
    out = []
    for (dataset, method, f_tol, kind), members in groups.items():
        failed = sum(not r.ok for r in members)
        row = SummaryRow(dataset, method, f_tol, kind, runs, failed)
        if failed == 0 and len(members) == runs:
            for metric in ("accuracy", "deo", "npv_diff", "tnr_diff"):
                mean, std = _mean_std([getattr(r, metric) for r in members])
                setattr(row, f"{metric}_mean", mean)
                setattr(row, f"{metric}_std", std)
        out.append(row)
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    data, provided_test = load_dataset(config)
    rows, rankings, runs = [], [], []
    for seed in config.seeds:
        try:
            seed_rows, ranking, info = _run_seed(config, data, provided_test, seed)
        except (AllCellsFailedError, fairsvm.FairSvmError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            seed_rows, ranking, info = _failed_seed(config, seed, exc), None, {"seed": seed, "error": str(exc)}
        rows.extend(seed_rows)
        if ranking is not None:
            rankings.append(ranking)
        runs.append(info)
    return ExperimentResult(config, rows, aggregate(rows, config.runs), rankings, data.feature_names, runs)


def rank_features(config: ExperimentConfig) -> ExperimentResult:
    """Importances only: baseline SVM plus permutation ranking per seed."""
    cfg = ExperimentConfig.from_dict({**config.to_dict(), "methods": ["confair"], "f_tol_list": [0.0]})
    data, provided_test = load_dataset(cfg)
    rankings, runs = [], []
    for seed in cfg.seeds:
        train_ds, test_ds, C, gamma = _prepare_for_ranking(cfg, data, provided_test, seed)
        kernel = KernelSpec(cfg.kernel, gamma if gamma is not None else 1.0)
        baseline = fairsvm.train(train_ds, None, kernel, C, None)
        analysis = analyze(train_ds, test_ds, baseline, None, cfg.K_permutations, cfg.tau, seed)
        rankings.append(analysis.ranking)
        runs.append({"seed": seed, "chosen_C": C, "chosen_gamma": gamma,
                     "case": analysis.decision.case})
    return ExperimentResult(cfg, [], [], rankings, data.feature_names, runs)


def _prepare_for_ranking(cfg, data, provided_test, seed):
    mode = "provided_test" if provided_test is not None else "random_holdout"
    train_ds, test_ds = split(data, SplitSpec(mode, cfg.holdout_fraction, seed, True), provided_test)
    if cfg.subsample:
        train_ds = stratified_subsample(train_ds, cfg.subsample, seed)
    scaler = Standardizer().fit(train_ds)
    train_ds, test_ds = scaler.transform(train_ds), scaler.transform(test_ds)
    cv_ds = stratified_subsample(train_ds, cfg.cv_subsample, seed) if cfg.cv_subsample else train_ds
    C, gamma, _ = select_hyperparams(
        cv_ds, make_folds(cv_ds, cfg.cv_folds, seed), cfg.C_grid, cfg.gamma_grid, cfg.kernel)
    return train_ds, test_ds, C, gamma


# --------------------------------------------------------------------------
# output files


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_csv(path, columns, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_cell(getattr(rec, c)) for c in columns])


def importance_table(rankings: Sequence[FeatureRanking], feature_names: Sequence[str]) -> list:
    """``(name, mean, std)`` over runs, sorted by descending mean importance."""
    if not rankings:
        return []
    imp = np.vstack([r.importances for r in rankings])
    mean = imp.mean(axis=0)
    std = imp.std(axis=0, ddof=1) if imp.shape[0] > 1 else np.zeros_like(mean)
    order = np.lexsort((np.arange(mean.size), -mean))
    return [(feature_names[j], float(mean[j]), float(std[j])) for j in order]


def emit_outputs(result: ExperimentResult, directory: Optional[str] = None) -> list:
    """Write results.csv, results.json, summary.csv, importances.csv and
    manifest.json into ``directory``; returns the written paths."""
    directory = directory or result.config.output_dir
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, name) for name in (
        "results.csv", "results.json", "summary.csv", "importances.csv", "manifest.json")}

    _write_csv(paths["results.csv"], RESULT_COLUMNS, result.rows)
    _write_csv(paths["summary.csv"], SUMMARY_COLUMNS, result.summary)
    with open(paths["results.json"], "w") as fh:
        json.dump({
            "columns": list(RESULT_COLUMNS),
            "rows": [{c: _json_value(getattr(r, c)) for c in RESULT_COLUMNS} for r in result.rows],
            "summary": [{c: _json_value(getattr(r, c)) for c in SUMMARY_COLUMNS} for r in result.summary],
        }, fh, indent=2)
    with open(paths["importances.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_name", "mean_importance", "std"])
        for name, mean, std in importance_table(result.rankings, result.feature_names):
            w.writerow([name, repr(mean), repr(std)])
    with open(paths["manifest.json"], "w") as fh:
        json.dump({
            "config": result.config.to_dict(),
            "seeds": list(result.config.seeds),
            "training_subsample": result.config.subsample,
            "cv_subsample": result.config.cv_subsample,
            "feature_names": list(result.feature_names),
            "runs": result.runs,
            "versions": _versions(),
        }, fh, indent=2, default=_json_default)
    return list(paths.values())


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _versions() -> dict:
    import scipy
    return {"confair": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}
