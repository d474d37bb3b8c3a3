"""The CONFAIR procedure: find critical features and sensitive covariates,
then retrain under the fairness constraint only where the bias is internal
to the model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import fairsvm
from .covar import CovariateSet, find_covariates
from .dataio import TabularDataset
from .featrank import Classifier, CriticalFeatureSet, FeatureRanking, find_crit_feats, to_critical_set
from .kernel import KernelSpec

SENSITIVE_IN_CRITICAL = "sensitive_in_critical"
COVARIATE_IN_CRITICAL = "covariate_in_critical"
EXTRINSIC_BIAS = "extrinsic_bias"


class ConfairError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConfairDecision:
    """Which branch was taken and on which features.

    ``effective_features`` is the critical set (or its intersection with the
    covariates); ``training_features`` is what the retrained model consumes,
    which in the covariate branch additionally carries the sensitive column.
    """

    case: str
    effective_features: tuple
    covariates_used: tuple = ()
    training_features: tuple = ()


@dataclass(frozen=True, eq=False)
class ConfairAnalysis:
    ranking: FeatureRanking
    critical: CriticalFeatureSet
    covariates: CovariateSet
    decision: ConfairDecision


@dataclass(frozen=True, eq=False)
class ConfairResult:
    model: object
    decision: ConfairDecision
    ranking: FeatureRanking
    covariates: CovariateSet
    critical: Optional[CriticalFeatureSet] = None
    qp_solves: int = 0
    notes: dict = field(default_factory=dict)

    def manifest(self, feature_names) -> dict:
        """JSON-ready summary of the run for interpretability reports."""
        names = list(feature_names)
        return {
            "case": self.decision.case,
            "effective_features": [names[j] for j in self.decision.effective_features],
            "training_features": [names[j] for j in self.decision.training_features],
            "covariates_used": [names[j] for j in self.decision.covariates_used],
            "critical_features": [names[j] for j in (self.critical.indices if self.critical else ())],
            "importances": {names[j]: float(self.ranking.importances[j]) for j in self.ranking.order},
            "baseline_accuracy": self.ranking.baseline_accuracy,
            "covariates": {names[j]: c for j, c in zip(self.covariates.indices, self.covariates.covariances)},
            "model": "baseline" if self.decision.case == EXTRINSIC_BIAS else "retrained_fair_svm",
        }


def decide(critical: CriticalFeatureSet, covariates: CovariateSet, s: int) -> ConfairDecision:
    """Apply the three-way branch to a computed critical set and covariate set."""
    if s in critical.indices:
        feats = tuple(critical.indices)
        return ConfairDecision(SENSITIVE_IN_CRITICAL, feats, (), feats)
    cov = set(covariates.indices)
    if cov and any(j in cov for j in critical.indices):
        # intersection keeps the critical-set ordering
        inter = tuple(j for j in critical.indices if j in cov)
        return ConfairDecision(COVARIATE_IN_CRITICAL, inter, inter, inter + (s,))
    return ConfairDecision(EXTRINSIC_BIAS, tuple(critical.indices), (), ())


def analyze(
    train: TabularDataset,
    test: TabularDataset,
    baseline: Classifier,
    s: Optional[int] = None,
    K: int = 5,
    tau: float = 0.0,
    seed: int = 0,
) -> ConfairAnalysis:
    """Critical features first, then covariates, then the branch decision."""
    s = train.sensitive_index if s is None else int(s)
    if not 0 <= s < train.d:
        raise ValueError(f"sensitive index {s} out of range")
    ranking = find_crit_feats(train, test, baseline, K=K, seed=seed)
    critical = to_critical_set(ranking, tau)
    covariates = find_covariates(train, s)
    return ConfairAnalysis(ranking, critical, covariates, decide(critical, covariates, s))


def retrain(
    analysis: ConfairAnalysis,
    train: TabularDataset,
    baseline: Classifier,
    criterion: fairsvm.FairnessConstraintSpec,
    kernel: KernelSpec,
    C: float,
    settings=None,
) -> ConfairResult:
    decision = analysis.decision
    common = dict(decision=decision, ranking=analysis.ranking, covariates=analysis.covariates,
                  critical=analysis.critical)
    if decision.case == EXTRINSIC_BIAS:
        return ConfairResult(model=baseline, qp_solves=0, **common)
    if not decision.training_features:
        raise ConfairError(f"{decision.case}: retraining feature set is empty")
    try:
        model = fairsvm.train(train, decision.training_features, kernel, C, criterion, settings)
    except fairsvm.FairSvmError as exc:
        raise type(exc)(f"[{decision.case}] {exc}") from exc
    return ConfairResult(model=model, qp_solves=1, **common)


def run_confair(
    train: TabularDataset,
    test: TabularDataset,
    baseline: Classifier,
    s: Optional[int] = None,
    criterion: fairsvm.FairnessConstraintSpec = fairsvm.FairnessConstraintSpec(),
    kernel: KernelSpec = KernelSpec(),
    C: float = 1.0,
    K: int = 5,
    tau: float = 0.0,
    seed: int = 0,
    settings=None,
) -> ConfairResult:
    """Run the full procedure against an already-trained ``baseline``.

    Returns the baseline itself (case ``extrinsic_bias``) when neither the
    sensitive feature nor any of its covariates is critical.
    """
    analysis = analyze(train, test, baseline, s, K, tau, seed)
    return retrain(analysis, train, baseline, criterion, kernel, C, settings)
