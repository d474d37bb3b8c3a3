import numpy as np
import pytest

from conftest import make_dataset
from confair.covar import find_covariates, mle_covariance


def labels(n):
    return np.resize([1.0, -1.0], n)


def test_duplicate_columns_share_variance(rng):
    x = rng.normal(size=30)
    data = make_dataset(np.column_stack([x, x]), labels(30), groups=np.resize([0, 1], 30))
    C = mle_covariance(data).values
    assert C[0, 1] == pytest.approx(C[0, 0], abs=1e-14)


def test_constant_feature_gives_zero_row(rng):
    X = np.column_stack([rng.normal(size=30), np.full(30, 4.0)])
    C = mle_covariance(make_dataset(X, labels(30), groups=np.resize([0, 1], 30))).values
    assert np.all(C[1] == 0.0) and np.all(C[:, 1] == 0.0)


def test_hand_computed_four_by_three():
    X = np.array([[1.0, 2.0, 0.0], [3.0, 0.0, 1.0], [0.0, 1.0, 1.0], [4.0, 5.0, 0.0]])
    C = mle_covariance(make_dataset(X, labels(4), s=2)).values
    expected = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            expected[i, j] = sum((X[r, i] - X[:, i].mean()) * (X[r, j] - X[:, j].mean()) for r in range(4)) / 4
    np.testing.assert_allclose(C, expected, atol=1e-12, rtol=0)


def test_copy_of_sensitive_ranked_first(rng):
    g = np.resize([0.0, 1.0], 40)
    X = np.column_stack([0.3 * g + rng.normal(0, 0.5, 40), g, rng.normal(size=40)])
    data = make_dataset(X, labels(40), groups=g)
    cov = find_covariates(data, data.sensitive_index)
    assert cov.indices[0] == 1
    assert data.sensitive_index not in cov.indices


def test_negative_covariance_rejected():
    g = np.resize([0.0, 1.0], 40)
    data = make_dataset(np.column_stack([-g]), labels(40), groups=g)
    assert find_covariates(data, 1).indices == ()


def test_three_feature_fixture():
    # covariances with s: x0 positive, x1 negative
    g = np.array([0, 1, 0, 1, 0, 1, 0, 1, 1, 0], float)
    x0 = g * 1.6 + np.array([0, 0, 0.2, -0.2, 0.1, 0.1, -0.3, 0, 0.3, 0])
    x1 = -0.4 * g + np.array([0.1, 0.2, -0.1, 0.0, 0.3, -0.2, 0.0, 0.1, 0.2, -0.1])
    data = make_dataset(np.column_stack([x0, x1]), labels(10), groups=g)
    cov_col = ((np.column_stack([x0, x1]) - [x0.mean(), x1.mean()]) * (g - g.mean())[:, None]).mean(axis=0)
    assert cov_col[0] > 0 > cov_col[1]
    result = find_covariates(data, 2)
    assert result.indices == (0,)
    assert result.covariances[0] == pytest.approx(cov_col[0], abs=1e-14)


def test_too_few_samples():
    X = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        mle_covariance(make_dataset(X, [1, -1], groups=[0, 1]))


def test_small_sample_warns(rng):
    X = rng.normal(size=(10, 3))
    with pytest.warns(UserWarning):
        mle_covariance(make_dataset(X, labels(10), groups=np.resize([0, 1], 10)))


def test_covariance_csv(tmp_path, rng):
    data = make_dataset(rng.normal(size=(30, 2)), labels(30), groups=np.resize([0, 1], 30))
    path = tmp_path / "cov.csv"
    mle_covariance(data).to_csv(str(path), data.feature_names)
    assert path.read_text().splitlines()[0] == ",x0,x1,x2"
