import itertools

import numpy as np
import pytest

from htelab.learners import (BoostConfig, ConvergenceError, LearnerSpec, fit_boost,
                             fit_elastic_net, fit_forest, fit_learner, fit_path, fit_tree,
                             kkt_violation, lambda_max, logistic_loss, negative_gradient, tune)
from htelab.rng import RngStream


# ----------------------------------------------------------------- tree


def brute_force_split(x, y, min_leaf=1):
    """Best (feature, threshold) over all midpoints by direct SSE evaluation."""
    best = (np.sum((y - y.mean()) ** 2), None, None)
    for j in range(x.shape[1]):
        u = np.unique(x[:, j])
        for thr in (u[:-1] + u[1:]) / 2:
            left = x[:, j] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
            if sse < best[0] - 1e-12:
                best = (sse, j, thr)
    return best


@pytest.mark.parametrize("seed", range(10))
def test_tree_split_matches_exhaustive_search_on_8_points(seed):
    r = np.random.default_rng(seed)
    x = r.integers(0, 5, size=(8, 3)).astype(float)
    y = r.normal(size=8)
    sse, j, thr = brute_force_split(x, y)
    tree = fit_tree(x, y, max_depth=1, min_leaf=1)
    if j is None:
        assert tree.splits() == []
        return
    (fj, ft), = tree.splits()
    pred = tree.predict(x)
    assert np.isclose(np.sum((y - pred) ** 2), sse, atol=1e-12)
    assert (fj, ft) == (j, pytest.approx(thr))


def test_tree_separable_step():
    x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [3.0]])
    y = (x[:, 0] > 0).astype(float)
    tree = fit_tree(x, y, max_depth=1)
    assert tree.splits() == [(0, 0.0)]
    assert np.allclose(tree.predict(x), y)


def test_tree_constant_target_is_root_leaf():
    x = np.random.default_rng(0).normal(size=(30, 2))
    tree = fit_tree(x, np.full(30, 2.5), max_depth=4)
    assert tree.n_nodes == 1
    assert np.allclose(tree.predict(x), 2.5)


def test_tree_min_leaf_respected():
    r = np.random.default_rng(1)
    x = r.normal(size=(100, 2))
    y = r.normal(size=100)
    tree = fit_tree(x, y, max_depth=6, min_leaf=10)
    counts = np.bincount(tree.apply(x))
    assert counts[counts > 0].min() >= 10


def test_tree_leaf_paths_reproduce_apply():
    r = np.random.default_rng(2)
    x = r.normal(size=(200, 3))
    y = x[:, 0] + (x[:, 1] > 0)
    tree = fit_tree(x, y, max_depth=3, min_leaf=5)
    leaves = tree.apply(x)
    for leaf, path in tree.leaf_paths().items():
        m = np.ones(len(x), bool)
        for f, op, t in path:
            m &= (x[:, f] <= t) if op == "<=" else (x[:, f] > t)
        assert np.array_equal(m, leaves == leaf)


# --------------------------------------------------------------- forest


def test_forest_single_tree_without_bootstrap_equals_tree():
    r = np.random.default_rng(3)
    x = r.normal(size=(80, 3))
    y = x[:, 0] ** 2 + r.normal(size=80)
    f = fit_forest(x, y, n_trees=1, mtry=3, bootstrap=False, min_leaf=5)
    t = fit_tree(x, y, max_depth=64, min_leaf=5)
    assert np.allclose(f.predict(x), t.predict(x))


def test_forest_oob_tracks_heldout_error():
    r = RngStream(5)
    x = r.standard_normal(400 * 3).reshape(400, 3)
    y = 2 * x[:, 0] - x[:, 1] + r.standard_normal(400)
    f = fit_forest(x[:200], y[:200], n_trees=300, rng=r.spawn(1))
    oob = np.mean((f.oob_prediction - y[:200]) ** 2)
    held = np.mean((f.predict(x[200:]) - y[200:]) ** 2)
    assert abs(oob - held) / held < 0.25


def test_forest_deterministic():
    r = np.random.default_rng(4)
    x = r.normal(size=(60, 4))
    y = r.normal(size=60)
    a = fit_forest(x, y, n_trees=20, rng=RngStream(1))
    b = fit_forest(x, y, n_trees=20, rng=RngStream(1))
    assert np.array_equal(a.predict(x), b.predict(x))
    assert np.array_equal(a.inbag_counts, b.inbag_counts)


# ---------------------------------------------------------------- boost


def test_boost_single_round_stump_recovers_step():
    x = np.linspace(-1, 1, 101)[:, None]
    y = (x[:, 0] > 0.1).astype(float)
    m = fit_boost(x, y, BoostConfig(n_rounds=1, learning_rate=1.0, max_depth=1, min_leaf=1))
    assert np.mean((m.predict(x) - y) ** 2) < y.var() / 4


def test_boost_zero_rate_is_base_score():
    r = np.random.default_rng(5)
    x = r.normal(size=(50, 2))
    y = r.normal(size=50)
    m = fit_boost(x, y, BoostConfig(n_rounds=5, learning_rate=0.0))
    assert np.allclose(m.predict(x), y.mean())


def test_boost_depth0_one_round_is_mean():
    r = np.random.default_rng(6)
    x = r.normal(size=(40, 2))
    y = r.normal(size=40) + 3
    m = fit_boost(x, y, BoostConfig(n_rounds=1, learning_rate=1.0, max_depth=0))
    assert np.allclose(m.predict(x), y.mean())


def test_boost_staged_prediction_identity():
    r = np.random.default_rng(7)
    x = r.normal(size=(120, 3))
    y = np.sin(x[:, 0]) + 0.1 * r.normal(size=120)
    m = fit_boost(x, y, BoostConfig(n_rounds=30, learning_rate=0.2, max_depth=2))
    staged = m.staged_predict(x, [1, 10, 30])
    for k, s in zip([1, 10, 30], staged):
        assert np.allclose(s, m.predict(x, n_rounds=k))


def test_logistic_gradient_at_zero():
    assert negative_gradient(np.array([1.0]), np.array([0.0]), "logistic")[0] == pytest.approx(0.5)
    assert logistic_loss(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(np.log(2))


def test_boost_logistic_outputs_probabilities():
    r = np.random.default_rng(8)
    x = r.normal(size=(200, 2))
    y = (x[:, 0] + 0.5 * r.normal(size=200) > 0).astype(float)
    m = fit_boost(x, y, BoostConfig(n_rounds=20, loss="logistic"))
    p = m.predict(x)
    assert np.all((p > 0) & (p < 1))
    assert np.mean((p > 0.5) == y) > 0.8


# ---------------------------------------------------------- elastic net


def test_enet_lambda0_matches_ols():
    r = np.random.default_rng(9)
    x = r.normal(size=(200, 4))
    y = 1.5 + x @ np.array([1.0, -2.0, 0.5, 0.0]) + r.normal(size=200)
    m = fit_elastic_net(x, y, lam=0.0, tol=1e-14)
    design = np.column_stack([np.ones(200), x])
    sol = np.linalg.lstsq(design, y, rcond=None)[0]
    assert abs(m.intercept - sol[0]) < 1e-6
    assert np.max(np.abs(m.coef - sol[1:])) < 1e-6


def test_enet_orthonormal_design_soft_thresholds():
    n, p = 64, 5
    r = np.random.default_rng(10)
    raw = np.column_stack([np.ones(n), r.normal(size=(n, p))])
    q, _ = np.linalg.qr(raw)
    x = np.sqrt(n) * q[:, 1:]            # centered, (1/n) X'X = I
    y = x @ np.array([2.0, -1.0, 0.3, 0.05, 0.0]) + r.normal(size=n)
    ols = x.T @ (y - y.mean()) / n
    for lam in (0.0, 0.1, 0.5, 1.2):
        m = fit_elastic_net(x, y, lam=lam, alpha=1.0, standardize=False, tol=1e-14)
        expected = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0.0)
        assert np.max(np.abs(m.coef - expected)) < 1e-4


def test_enet_huge_lambda_gives_weighted_mean():
    r = np.random.default_rng(11)
    x = r.normal(size=(50, 3))
    y = r.normal(size=50)
    w = r.uniform(0.5, 2.0, size=50)
    m = fit_elastic_net(x, y, w, lam=1e6, alpha=0.5)
    assert np.all(m.coef == 0)
    assert m.intercept == pytest.approx(np.average(y, weights=w))


@pytest.mark.parametrize("alpha,family", [(1.0, "gaussian"), (0.5, "gaussian"),
                                          (1.0, "binomial"), (0.3, "binomial")])
def test_enet_kkt_conditions(alpha, family):
    r = np.random.default_rng(12)
    x = r.normal(size=(300, 6))
    eta = x[:, 0] - 0.5 * x[:, 1]
    y = (r.uniform(size=300) < 1 / (1 + np.exp(-eta))).astype(float) if family == "binomial" \
        else eta + r.normal(size=300)
    lam = 0.2 * lambda_max(x, y, alpha=alpha, family=family)
    m = fit_elastic_net(x, y, lam=lam, alpha=alpha, family=family, tol=1e-12)
    assert kkt_violation(m, x, y) < 1e-5


def test_enet_convergence_error_carries_diagnostics():
    r = np.random.default_rng(13)
    x = r.normal(size=(100, 5))
    y = x[:, 0] + r.normal(size=100)
    with pytest.raises(ConvergenceError):
        fit_elastic_net(x, y, lam=0.01, tol=1e-30, max_iter=1)


def test_enet_path_warm_start_matches_cold_fits():
    r = np.random.default_rng(14)
    x = r.normal(size=(150, 4))
    y = x @ np.array([1.0, 0.0, -1.0, 0.5]) + r.normal(size=150)
    lams = [0.5, 0.1, 0.01]
    for lam, m in zip(lams, fit_path(x, y, lams, tol=1e-12)):
        cold = fit_elastic_net(x, y, lam=lam, tol=1e-12)
        assert np.max(np.abs(m.coef - cold.coef)) < 1e-5


def test_path_truncates_on_separable_binomial():
    x = np.linspace(-1, 1, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    lams = lambda_max(x, y, family="binomial") * np.array([0.5, 0.1, 1e-3, 1e-6, 0.0])
    with pytest.raises(ConvergenceError):
        fit_path(x, y, lams, family="binomial")
    models = fit_path(x, y, lams, family="binomial", truncate=True)
    assert 1 <= len(models) < len(lams)
    spec = LearnerSpec("elastic_net", grid={"lam": list(lams)}, scoring="logloss")
    assert tune(spec, x, y, RngStream(0)).chosen["lam"] > 0


# --------------------------------------------------------------- tuning


def test_tune_singleton_grid():
    spec = LearnerSpec("boost", grid={"max_depth": [2]})
    r = np.random.default_rng(15)
    x = r.normal(size=(40, 2))
    out = tune(spec, x, r.normal(size=40), RngStream(0))
    assert dict(out.chosen) == {"max_depth": 2}


def test_tune_prefers_unpenalized_on_linear_data():
    r = np.random.default_rng(16)
    x = r.normal(size=(200, 3))
    y = 3 * x[:, 0] + 0.1 * r.normal(size=200)
    spec = LearnerSpec("elastic_net", grid={"lam": [0.0, 1e6]})
    out = tune(spec, x, y, RngStream(1))
    assert out.chosen["lam"] == 0.0


def test_tune_deterministic():
    r = np.random.default_rng(17)
    x = r.normal(size=(120, 3))
    y = np.sin(2 * x[:, 0]) + r.normal(size=120)
    spec = LearnerSpec("boost", grid={"max_depth": [1, 3], "n_rounds": [10, 50],
                                      "learning_rate": [0.1]})
    a = tune(spec, x, y, RngStream(3))
    b = tune(spec, x, y, RngStream(3))
    assert a.chosen == b.chosen


def test_fit_learner_kinds_and_spec_roundtrip():
    r = np.random.default_rng(18)
    x = r.normal(size=(80, 2))
    y = x[:, 0] + 0.1 * r.normal(size=80)
    for kind in ("linear", "elastic_net", "boost", "forest", "tree"):
        spec = LearnerSpec(kind)
        assert LearnerSpec.from_dict(spec.to_dict()) == spec
        m = fit_learner(spec, x, y, rng=RngStream(2))
        assert m.predict(x).shape == (80,)
    with pytest.raises(ValueError):
        LearnerSpec("svm")
