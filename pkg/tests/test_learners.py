import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from sramage.errors import InvalidArgumentError, SchemaMismatchError
from sramage.learners import (CLASSIFICATION, REGRESSION, DTParams, KNNParams, RFParams, SVMParams, Standardizer,
                              TrainedModel, fit, params_from_dict, params_to_dict, rbf_kernel,
                              sample_params, solve_binary_svc, solve_svr, squared_distances, vote)


def kkt_residual(K, y, alpha, c):
    """Maximal violating pair gap of the soft-margin dual, computed from scratch."""
    grad = (np.outer(y, y) * K) @ alpha - 1.0
    score = -y * grad
    up = ((alpha < c) & (y > 0)) | ((alpha > 0) & (y < 0))
    low = ((alpha < c) & (y < 0)) | ((alpha > 0) & (y > 0))
    return score[up].max() - score[low].min()


def dual_objective(K, y, alpha):
    return 0.5 * alpha @ (np.outer(y, y) * K) @ alpha - alpha.sum()


def random_problem(rng):
    n = int(rng.integers(2, 41))
    X = rng.normal(size=(n, int(rng.integers(1, 5))))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    return X, y, float(np.exp(rng.uniform(np.log(0.01), np.log(100)))), float(np.exp(rng.uniform(-3, 1)))


def test_svc_kkt_500_problems():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(500):
        X, y, c, gamma = random_problem(rng)
        K = rbf_kernel(X, X, gamma)
        alpha, _, _ = solve_binary_svc(K, y, c)
        assert (alpha >= 0).all() and (alpha <= c).all()
        assert abs(alpha @ y) <= 1e-9 * max(1.0, c)
        worst = max(worst, kkt_residual(K, y, alpha, c))
    assert worst <= 1e-3


def test_svc_matches_generic_optimizer():
    rng = np.random.default_rng(7)
    for _ in range(5):
        X, y, c, gamma = random_problem(rng)
        K = rbf_kernel(X, X, gamma)
        alpha, _, _ = solve_binary_svc(K, y, c, tol=1e-8)
        ref = minimize(lambda a: dual_objective(K, y, a), np.zeros(y.size),
                       jac=lambda a: (np.outer(y, y) * K) @ a - 1.0, bounds=[(0, c)] * y.size,
                       constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}],
                       method="SLSQP", options={"ftol": 1e-12, "maxiter": 1000})
        assert dual_objective(K, y, alpha) <= ref.fun + 1e-6 * max(1.0, abs(ref.fun))


def test_svr_fits_smooth_curve():
    x = np.linspace(0, 1, 40)[:, None]
    z = np.sin(2 * np.pi * x[:, 0])
    K = rbf_kernel(x, x, 20.0)
    coef, rho, _ = solve_svr(K, z, c=100.0, epsilon=0.05)
    assert abs(coef.sum()) <= 1e-9 and np.abs(coef).max() <= 100.0
    fitted = K @ coef - rho
    assert np.abs(fitted - z).max() <= 0.05 + 1e-3


def test_knn_k1_memorizes(rng):
    X = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    assert np.array_equal(fit(KNNParams(k=1), REGRESSION, X, y).predict(X), y)
    labels = rng.integers(0, 3, 30)
    assert np.array_equal(fit(KNNParams(k=1), CLASSIFICATION, X, labels, num_classes=3).predict(X), labels)


def test_knn_mean_of_neighbours():
    X = np.array([[0.0], [1.0], [2.0], [10.0]])
    y = np.array([1.0, 2.0, 3.0, 100.0])
    m = fit(KNNParams(k=3), REGRESSION, X, y)
    assert m.predict([[1.0]])[0] == pytest.approx(2.0)
    # k above the training size is clamped
    assert fit(KNNParams(k=50), REGRESSION, X, y).predict([[0.0]])[0] == pytest.approx(y.mean())


@pytest.mark.parametrize("task", [REGRESSION, CLASSIFICATION])
def test_rf_single_tree_equals_dt(rng, task):
    X = rng.normal(size=(80, 6))
    y = (X[:, 0] + X[:, 1] ** 2 > 0.5).astype(float) if task == CLASSIFICATION else X[:, 0] * 3 + X[:, 2]
    kw = dict(num_classes=2) if task == CLASSIFICATION else {}
    for depth in (None, 3):
        dt = fit(DTParams(max_depth=depth), task, X, y, seed=11, **kw)
        rf = fit(RFParams(max_depth=depth, num_trees=1, bootstrap=False), task, X, y, seed=11, **kw)
        assert dt.payload["trees"][0].same_structure(rf.payload["trees"][0])
        assert np.array_equal(dt.predict(X), rf.predict(X))


@given(st.integers(0, 10_000), st.integers(2, 4))
def test_dt_separable_training_accuracy(seed, n_classes):
    rng = np.random.default_rng(seed)
    X = rng.permutation(np.arange(60.0)).reshape(30, 2) + rng.random((30, 2))
    y = rng.integers(0, n_classes, 30)
    m = fit(DTParams(), CLASSIFICATION, X, y, seed=seed, num_classes=n_classes)
    assert np.array_equal(m.predict(X), y)


def test_dt_feature_subsampling_still_splits():
    # only feature 3 is informative; one feature per node must still find it eventually
    X = np.zeros((20, 4))
    X[:, 3] = np.arange(20)
    y = (np.arange(20) >= 10).astype(float)
    m = fit(DTParams(min_features_per_split=1), CLASSIFICATION, X, y, num_classes=2)
    assert np.array_equal(m.predict(X), y)


def test_duplicate_rows_identical_models(rng):
    X = rng.normal(size=(25, 3))
    y = rng.integers(0, 2, 25)
    a = fit(RFParams(num_trees=5), CLASSIFICATION, X, y, seed=3, num_classes=2)
    b = fit(RFParams(num_trees=5), CLASSIFICATION, X.copy(), y.copy(), seed=3, num_classes=2)
    assert all(t.same_structure(u) for t, u in zip(a.payload["trees"], b.payload["trees"]))
    c = fit(RFParams(num_trees=5), CLASSIFICATION, X, y, seed=4, num_classes=2)
    assert not all(t.same_structure(u) for t, u in zip(a.payload["trees"], c.payload["trees"]))


@pytest.mark.parametrize("params", [KNNParams(k=3), SVMParams(c=10, gamma=0.5), DTParams(max_depth=4),
                                    RFParams(num_trees=4, max_depth=3)])
@pytest.mark.parametrize("task", [REGRESSION, CLASSIFICATION])
def test_model_json_round_trip(rng, params, task):
    X = rng.normal(size=(40, 3))
    y = rng.integers(0, 3, 40) if task == CLASSIFICATION else X @ [1.0, -2.0, 0.5]
    m = fit(params, task, X, y, num_classes=3 if task == CLASSIFICATION else 0, schema_digest="abc")
    back = TrainedModel.from_json(m.to_json())
    Xq = rng.normal(size=(15, 3))
    assert np.array_equal(back.predict(Xq), m.predict(Xq))
    assert back.schema_digest == "abc"
    with pytest.raises(SchemaMismatchError):
        back.predict(np.zeros((2, 4)))


def test_svc_multiclass_separates_blobs(rng):
    centers = np.array([[0, 0], [5, 0], [0, 5]])
    y = np.repeat(np.arange(3), 20)
    X = centers[y] + rng.normal(scale=0.3, size=(60, 2))
    m = fit(SVMParams(c=10, gamma=0.5), CLASSIFICATION, X, y, num_classes=3)
    assert np.array_equal(m.predict(X), y)


def test_vote_ties_go_low():
    assert vote(np.array([[2, 1, 1, 2], [0, 2, 2, 0]]), 3).tolist() == [1, 0]


def test_standardizer_constant_column(caplog):
    s = Standardizer.fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert s.transform(np.array([[2.0, 5.0]])).tolist() == [[0.0, 0.0]]
    assert "constant" in caplog.text


def test_squared_distances_exact():
    a = np.array([[1e8, 1.0]])
    b = np.array([[1e8, 2.0]])
    assert squared_distances(a, b)[0, 0] == 1.0


def test_params_and_sampling(rng):
    for fam in ("knn", "svm", "dt", "rf"):
        p = sample_params(fam, rng)
        assert params_from_dict(params_to_dict(p)) == p
    p = sample_params("svm", rng, {"svm": {"c": ("uniform", 2.0, 2.0)}})
    assert p.c == 2.0 and 1e-4 <= p.gamma <= 10


def test_fit_errors(rng):
    X = rng.normal(size=(10, 2))
    with pytest.raises(InvalidArgumentError):
        fit(DTParams(min_samples_split=1), REGRESSION, X, np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        fit(KNNParams(k=0), REGRESSION, X, np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        fit(SVMParams(c=-1), REGRESSION, X, np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        fit(KNNParams(), REGRESSION, X, np.zeros(9))


def test_four_separable_points():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 0, 1, 1])
    assert np.array_equal(fit(DTParams(), CLASSIFICATION, X, y, num_classes=2).predict(X), y)


def test_three_class_svm_has_three_machines(rng):
    X = rng.normal(size=(30, 2))
    y = np.repeat([0, 1, 2], 10)
    m = fit(SVMParams(c=1, gamma=1), CLASSIFICATION, X, y, num_classes=3)
    assert [(b.positive_class, b.negative_class) for b in m.payload["machines"]] == [(0, 1), (0, 2), (1, 2)]


def test_single_node_forest_is_constant(rng):
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    m = fit(RFParams(max_depth=0, num_trees=5, bootstrap=False), REGRESSION, X, y)
    assert np.allclose(m.predict(rng.normal(size=(4, 3))), y.mean(), rtol=0, atol=1e-14)
    yc = np.array([0] * 12 + [1] * 8)
    mc = fit(RFParams(max_depth=0, num_trees=3), CLASSIFICATION, X, yc, num_classes=2)
    assert (mc.predict(X) == 0).all() or (mc.predict(X) == 1).all()


def test_two_point_svm():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    m = fit(SVMParams(c=10, gamma=0.5), CLASSIFICATION, X, np.array([0, 1]), num_classes=2)
    assert m.predict([[-0.5, 0.0]]).tolist() == [0] and m.predict([[0.5, 0.0]]).tolist() == [1]
    # the standardised machine is odd-symmetric, so the boundary sits at x = 0
    assert m.payload["machines"][0].rho == pytest.approx(0.0, abs=1e-12)


def test_knn_affine_invariance(rng):
    X = rng.normal(size=(50, 4))
    y = rng.normal(size=50)
    Xq = rng.normal(size=(10, 4))
    scale, shift = np.array([3.0, 0.5, 10.0, 2.0]), np.array([1.0, -7.0, 0.0, 100.0])
    a = fit(KNNParams(k=5), REGRESSION, X, y).predict(Xq)
    b = fit(KNNParams(k=5), REGRESSION, X * scale + shift, y).predict(Xq * scale + shift)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("task", [REGRESSION, CLASSIFICATION])
def test_duplicated_rows_same_tree(rng, task):
    X = rng.normal(size=(40, 5))
    y = rng.integers(0, 3, 40) if task == CLASSIFICATION else rng.normal(size=40)
    kw = {"num_classes": 3} if task == CLASSIFICATION else {}
    once = fit(DTParams(), task, X, y, seed=2, **kw).payload["trees"][0]
    twice = fit(DTParams(), task, np.vstack([X, X]), np.concatenate([y, y]), seed=2, **kw).payload["trees"][0]
    # thresholds live in standardised units, whose statistics differ in the last bit
    assert all(np.array_equal(getattr(once, k), getattr(twice, k)) for k in ("feature", "left", "right"))
    assert np.allclose(once.threshold, twice.threshold, rtol=1e-12, atol=1e-12)


def test_single_class_is_an_error(rng):
    with pytest.raises(InvalidArgumentError):
        fit(DTParams(), CLASSIFICATION, rng.normal(size=(5, 2)), np.zeros(5), num_classes=2)
