import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxaffect.audio import AudioFrontEnd, kbest_merge, standardize, top_k, univariate_scores
from ctxaffect.errors import InputError


def f_oracle(X, y):
    # regression F-test written out with the textbook least-squares sums
    n = len(y)
    out = []
    for j in range(X.shape[1]):
        A = np.c_[X[:, j], np.ones(n)]
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        sse = ((y - A @ coef) ** 2).sum()
        ssr = ((A @ coef - y.mean()) ** 2).sum()
        out.append(ssr / (sse / (n - 2)))
    return np.array(out)


def test_scores_match_least_squares_f_test():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 8))
    y = 0.7 * X[:, 2] - 0.3 * X[:, 5] + rng.normal(size=60)
    np.testing.assert_allclose(univariate_scores(X, y), f_oracle(X, y), rtol=1e-9)


def test_scores_match_sklearn_when_available():
    fs = pytest.importorskip("sklearn.feature_selection")
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 6))
    y = X[:, 0] + rng.normal(size=40)
    np.testing.assert_allclose(univariate_scores(X, y), fs.f_regression(X, y)[0], rtol=1e-9)


def test_constant_column_scores_zero_and_tiny_samples_rejected():
    X = np.c_[np.ones(5), np.arange(5.0)]
    assert univariate_scores(X, np.arange(5.0))[0] == 0.0
    with pytest.raises(InputError):
        univariate_scores(X[:2], np.arange(2.0))


def test_top_k_ties_go_to_lower_index():
    np.testing.assert_array_equal(top_k([1.0, 3.0, 3.0, 3.0, 0.5], 2), [1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 10))
def test_union_bounds(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 12))
    idx = kbest_merge(X, rng.normal(size=30), rng.normal(size=30), k)
    assert k <= len(idx) <= 2 * k
    assert list(idx) == sorted(set(idx.tolist()))


def test_merge_needs_k_columns():
    with pytest.raises(InputError):
        kbest_merge(np.ones((10, 5)), np.ones(10), np.ones(10), 80)


def test_identical_targets_select_exactly_k():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 200))
    y = rng.normal(size=50)
    assert len(kbest_merge(X, y, y, 80)) == 80


def test_standardize_uses_training_statistics():
    train = np.array([[1.0, 5.0], [3.0, 5.0]])
    t, applied, mu, sd = standardize(train, np.array([[5.0, 7.0]]))
    np.testing.assert_array_equal(t, [[-1, 0], [1, 0]])
    np.testing.assert_array_equal(applied, [[3, 2]])
    np.testing.assert_array_equal(sd, [1, 1])  # zero std clamps to 1


def test_front_end_width_and_transform():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 300))
    Y = np.c_[X[:, :5].sum(1), X[:, 3:9].sum(1)] + 0.1 * rng.normal(size=(80, 2))
    front = AudioFrontEnd.fit(X, Y, k=80)
    assert 80 <= front.width <= 160
    assert {0, 1, 2, 3, 4, 5, 6, 7, 8} <= set(front.indices.tolist())
    Z = front.transform(X)
    np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-12)
