import warnings

import numpy as np
import pytest

from conftest import make_dataset
from confair import fairsvm
from confair.fairsvm import FairnessConstraintSpec, FairSvmModel, barycenters, build_constraint_row
from confair.kernel import KernelSpec, gram
from confair.metrics import evaluate
from oracles import svm_dual_oracle

LINEAR = KernelSpec("linear")


def two_point():
    return make_dataset([[1.0], [-1.0]], [1, -1], groups=[0, 1])


def separable(n=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.where(X[:, 0] + X[:, 1] >= 0, 1.0, -1.0)
    X += 0.5 * y[:, None]  # widen the margin
    return make_dataset(X, y, groups=np.resize([0, 1], n))


def cvxopt_dual(K, y, C):
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers
    n = y.size
    P = matrix(np.outer(y, y) * K)
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.r_[np.zeros(n), np.full(n, C)])
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    sol = solvers.qp(P, matrix(-np.ones(n)), G, h, matrix(y[None, :]), matrix(0.0))
    alpha = np.array(sol["x"]).ravel()
    free = (alpha > 1e-6 * C) & (alpha < C * (1 - 1e-6))
    bias = float(np.mean(y[free] - K[free] @ (alpha * y)))
    return alpha, bias


def test_two_point_max_margin():
    model = fairsvm.train(two_point(), [0], LINEAR, C=1e3)
    np.testing.assert_allclose(model.alphas, [0.5, 0.5], atol=1e-6)
    assert model.bias == pytest.approx(0.0, abs=1e-6)
    X = np.array([[0.3, 0.0], [-0.3, 0.0], [2.0, 1.0]])
    np.testing.assert_allclose(model.decision_function(X), [0.3, -0.3, 2.0], atol=1e-5)
    assert list(fairsvm.predict(model, X[:2])) == [1.0, -1.0]


def test_twenty_point_matches_cvxopt():
    data = separable()
    K = gram(data.features, data.features, LINEAR)
    alpha, bias = cvxopt_dual(K, data.labels, 10.0)
    model = fairsvm.train(data, None, LINEAR, C=10.0)
    ref = K @ (alpha * data.labels) + bias
    np.testing.assert_allclose(model.decision_function(data.features), ref, atol=1e-5)
    assert np.all(model.predict(data.features) == data.labels)


def test_small_soft_margin_matches_enumeration():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(7, 2))
    y = np.array([1, 1, 1, -1, -1, -1, 1.0])
    data = make_dataset(X, y, groups=[0, 1, 0, 1, 0, 1, 0])
    kernel = KernelSpec("rbf", 0.5)
    K = gram(data.features, data.features, kernel)
    alpha, _ = svm_dual_oracle(K, y, 1.0)
    model = fairsvm.train(data, None, kernel, C=1.0)
    np.testing.assert_allclose(model.alphas, alpha, atol=1e-6)


def test_vacuous_constraint_reproduces_plain_svm():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    # every point appears once per group, so both barycenters coincide
    data = make_dataset(np.vstack([X, X]), np.r_[y, y], groups=np.r_[np.zeros(10), np.ones(10)])
    kernel = KernelSpec("rbf", 0.5)
    plain = fairsvm.train(data, [0, 1], kernel, 1.0)
    for mode in fairsvm.MODES:
        fair = fairsvm.train(data, [0, 1], kernel, 1.0, FairnessConstraintSpec(f_tol=0.0, mode=mode))
        np.testing.assert_allclose(fair.alphas, plain.alphas, atol=1e-6)
        assert fair.constraint_value == pytest.approx(0.0, abs=1e-12)


def shifted_groups(n=40, seed=3):
    """Group b's positives sit further from the boundary than group a's."""
    rng = np.random.default_rng(seed)
    g = np.resize([0.0, 1.0], n)
    y = np.resize([1.0, 1.0, -1.0, -1.0], n)
    X = rng.normal(scale=0.8, size=(n, 2))
    X[:, 0] += np.where(y > 0, 0.4 + 1.2 * g, -0.6)
    return make_dataset(X, y, groups=g)


def test_equality_constraint_lowers_training_deo():
    data = shifted_groups()
    kernel = KernelSpec("rbf", 0.5)
    plain = fairsvm.train(data, [0, 1], kernel, 1.0)
    fair = fairsvm.train(data, [0, 1], kernel, 1.0, FairnessConstraintSpec(f_tol=0.0, mode="equality"))
    assert fair.constraint_value <= 1e-6
    deo = lambda m: evaluate(data.labels, m.predict(data.features), data.sensitive_values).deo
    assert deo(fair) < deo(plain)


def test_equality_mode_hits_target():
    fair = fairsvm.train(shifted_groups(), [0, 1], KernelSpec("rbf", 0.5), 1.0,
                         FairnessConstraintSpec(f_tol=0.1, mode="equality"))
    assert fair.constraint_value == pytest.approx(0.1, abs=1e-6)


@pytest.mark.parametrize("f_tol", [0.0, 0.001, 0.05])
def test_inequality_mode_respects_bound(f_tol):
    data = shifted_groups()
    kernel = KernelSpec("rbf", 0.5)
    fair = fairsvm.train(data, [0, 1], kernel, 1.0, FairnessConstraintSpec(f_tol=f_tol))
    assert fair.constraint_value <= f_tol + 1e-6
    K = gram(fair.train_features, fair.train_features, kernel)
    recomputed = fairsvm.constraint_value(fair, *barycenters(data, K))
    assert recomputed == pytest.approx(fair.constraint_value, abs=1e-12)


def test_duplicated_points_match_doubled_C():
    # every point twice at C is the original problem with box 2C
    data = separable(16, seed=3)
    twice = make_dataset(np.vstack([data.features[:, :2]] * 2), np.tile(data.labels, 2),
                         groups=np.tile(data.sensitive_values, 2))
    kernel = KernelSpec("rbf", 0.5)
    ref = fairsvm.train(data, [0, 1], kernel, 0.2)
    dup = fairsvm.train(twice, [0, 1], kernel, 0.1)
    grid = np.random.default_rng(0).normal(size=(30, data.d))
    np.testing.assert_allclose(dup.decision_function(grid), ref.decision_function(grid), atol=1e-5)


def test_heavily_duplicated_rows_converge():
    # few distinct rows: the unmerged dual is flat along every duplicate pair
    rng = np.random.default_rng(1)
    X = rng.integers(0, 3, size=(300, 2)).astype(float)
    groups = rng.integers(0, 2, 300)
    y = np.where(X[:, 0] + 0.5 * groups + rng.normal(0, 0.7, 300) > 1.2, 1.0, -1.0)
    data = make_dataset(X, y, groups=groups)
    for f_tol in (0.0, 0.001, 0.1):
        fair = fairsvm.train(data, [0, 1, 2], KernelSpec("rbf", 0.5), 1.0, FairnessConstraintSpec(f_tol=f_tol))
        assert fair.solver_status == "optimal"
        assert fair.constraint_value <= f_tol + 1e-6


def test_barycenter_mean_row():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.0]])
    data = make_dataset(X, [1, 1, -1, 1], groups=[0, 0, 0, 1])
    K = gram(X, X, LINEAR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = barycenters(data, K)
    # barycenter (0.5, 0.5): <(1,1), u> = 1 and <(1,0), u> = 0.5
    assert a.mean_kernel_row[2] == pytest.approx(1.0)
    assert a.mean_kernel_row[0] == pytest.approx(0.5)
    assert b.sigma == 1.0


def six_points():
    X = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.5], [1.5, 1.5], [0.5, -1.0], [3.0, 1.0]])
    return X, make_dataset(X, [1, 1, 1, 1, -1, 1], groups=[0, 0, 1, 1, 0, 1])


def test_sigma_kernel_trick_matches_coordinates():
    X, data = six_points()
    a, b = barycenters(data, gram(X, X, LINEAR))
    pos = {0: [0, 1], 1: [2, 3, 5]}
    for bary, g in ((a, 0), (b, 1)):
        mu_other = X[pos[1 - g]].mean(axis=0)
        own = X[pos[g]]
        sigma2 = np.sum((own - mu_other) ** 2) / (len(own) - 1)
        assert bary.sigma ** 2 == pytest.approx(sigma2, abs=1e-10)


def test_constraint_row_hand_evaluation():
    X, data = six_points()
    K = gram(X, X, LINEAR)
    a, b = barycenters(data, K)
    row = build_constraint_row(a, b, data.labels)
    for i in range(6):
        expected = data.labels[i] * (K[i, [0, 1]].mean() / a.sigma - K[i, [2, 3, 5]].mean() / b.sigma)
        assert row[i] == pytest.approx(expected, abs=1e-12)


def test_constraint_row_single_positive_per_group():
    X = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [-1.0, 0.5]])
    data = make_dataset(X, [1, -1, 1, -1], groups=[0, 0, 1, 1])
    K = gram(X, X, LINEAR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        row = build_constraint_row(*barycenters(data, K), data.labels)
    np.testing.assert_allclose(row, data.labels * (K[:, 0] - K[:, 2]), atol=1e-15)


def test_identical_groups_give_zero_row():
    X = np.array([[1.0], [2.0], [1.0], [2.0], [0.0], [0.0]])
    data = make_dataset(X, [1, 1, 1, 1, -1, -1], groups=[0, 0, 1, 1, 0, 1])
    a, b = barycenters(data, gram(X, X, LINEAR))
    assert a.sigma == pytest.approx(b.sigma)
    assert np.all(build_constraint_row(a, b, data.labels) == 0.0)


def test_missing_group_positives():
    data = make_dataset([[1.0], [2.0], [0.0], [3.0]], [1, -1, -1, 1], groups=[0, 1, 1, 0])
    with pytest.raises(fairsvm.DegenerateGroupError):
        fairsvm.train(data, [0], LINEAR, 1.0, FairnessConstraintSpec(f_tol=0.1))
    # unconstrained training does not need them
    assert fairsvm.train(data, [0], LINEAR, 1.0).constraint_value is None


def test_equal_tnr_uses_negatives():
    data = shifted_groups()
    K = gram(data.features, data.features, LINEAR)
    a, _ = barycenters(data, K, "equal_tnr")
    assert np.all(data.labels[a.positive_indices] == -1)
    fair = fairsvm.train(data, [0, 1], LINEAR, 1.0, FairnessConstraintSpec("equal_tnr", 0.01))
    assert fair.constraint_value <= 0.01 + 1e-6


def test_model_round_trip(tmp_path):
    data = shifted_groups()
    model = fairsvm.train(data, [0, 1], KernelSpec("rbf", 0.5), 1.0, FairnessConstraintSpec(f_tol=0.01))
    path = str(tmp_path / "model.json")
    model.save(path)
    loaded = FairSvmModel.load(path)
    np.testing.assert_allclose(loaded.decision_function(data.features), model.decision_function(data.features),
                               atol=1e-12)
    assert loaded.constraint == model.constraint


def test_argument_checks():
    data = two_point()
    with pytest.raises(ValueError):
        fairsvm.train(data, [0], LINEAR, C=0.0)
    with pytest.raises(ValueError):
        fairsvm.train(data, [], LINEAR)
    with pytest.raises(ValueError):
        FairnessConstraintSpec(f_tol=-1.0)
    with pytest.raises(ValueError):
        FairnessConstraintSpec(criterion="parity")
