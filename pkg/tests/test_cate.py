import numpy as np
import pytest

from htelab.cate import (causal_tree_as_cate, fit_causal_tree, fit_mlm, fit_r_learner,
                         fit_s_learner, fit_t_learner, fit_x_learner, predict_cate)
from htelab.core import Dataset
from htelab.learners import LearnerSpec
from htelab.nuisance import NuisanceFit, fit_nuisance
from htelab.rng import RngStream

LIN = LearnerSpec("linear")


def _const_effect(n, seed=0, tau=2.0, pi=0.5):
    r = RngStream(seed)
    x = r.standard_normal(n * 3).reshape(n, 3)
    t = (r.uniform(n) < pi).astype(int)
    y = 1.0 + tau * t + r.standard_normal(n)
    return Dataset(x, y, t, np.full(n, pi))


def _oracle(d, m0, m1, pi):
    return NuisanceFit.oracle(d, m0, m1, pi)


@pytest.mark.parametrize("method", ["S", "T", "X", "R", "W", "A", "Waug", "Aaug"])
def test_constant_effect_recovered(method):
    d = _const_effect(5000, seed=1)
    fit = fit_nuisance(d, LIN, None, 5, RngStream(2))
    rng = RngStream(3)
    if method == "S":
        m = fit_s_learner(d, LIN, rng)
    elif method == "T":
        m = fit_t_learner(d, LIN, rng)
    elif method == "X":
        m = fit_x_learner(d, LIN, LIN, rng)
    elif method == "R":
        m = fit_r_learner(d, fit, LIN, rng)
    else:
        m = fit_mlm(d, fit, method[0], method.endswith("aug"), LIN, rng)
    err = np.abs(m.predict(d.x) - 2.0)
    if method in ("W", "A"):
        # targets 2A*Y and Y/(T - pi) carry the raw outcome scale: noisier slopes
        assert err.mean() < 0.2
    else:
        assert err.max() < 0.3 and err.mean() < 0.1


def test_s_learner_depth0_tree_gives_zero():
    d = _const_effect(200, seed=4)
    m = fit_s_learner(d, LearnerSpec("tree", {"max_depth": 0}), RngStream(1))
    assert np.all(m.predict(d.x) == 0.0)


def test_t_learner_identical_arms_near_zero():
    r = RngStream(5)
    n = 4000
    x = r.standard_normal(n * 2).reshape(n, 2)
    t = (r.uniform(n) < 0.5).astype(int)
    y = x[:, 0] + r.standard_normal(n)
    m = fit_t_learner(Dataset(x, y, t), LIN, RngStream(1))
    se = 2.0 / np.sqrt(n)
    assert np.mean(np.abs(m.predict(x))) < 2 * se * 3


def test_t_learner_with_nuisance_is_arm_difference():
    d = _const_effect(300, seed=6)
    fit = fit_nuisance(d, LIN, None, 5, RngStream(2))
    m = fit_t_learner(d, LIN, nuisance=fit)
    assert np.allclose(m.predict(d.x), fit.predict_m1(d.x) - fit.predict_m0(d.x))


def test_x_learner_weights():
    r = RngStream(7)
    n = 500
    x = r.standard_normal(n).reshape(n, 1)
    t = (r.uniform(n) < 0.5).astype(int)
    y = x[:, 0] * (1 + t) + 0.1 * r.standard_normal(n)
    d = Dataset(x, y, t, np.full(n, 0.5))
    w1 = fit_x_learner(d, LIN, LIN, RngStream(1), weight_fn=lambda z: np.ones(len(z)))
    assert np.allclose(w1.predict(x), w1.components["tau0"](x))
    half = fit_x_learner(d, LIN, LIN, RngStream(1))
    tau0, tau1 = half.components["tau0"](x), half.components["tau1"](x)
    assert np.allclose(half.predict(x), 0.5 * (tau0 + tau1))


def test_r_learner_linear_slope_with_oracle_nuisances():
    r = RngStream(8)
    n = 10_000
    x = r.standard_normal(n * 2).reshape(n, 2)
    pi = 1 / (1 + np.exp(-0.5 * x[:, 1]))
    t = (r.uniform(n) < pi).astype(int)
    tau = 1.0 + 0.5 * x[:, 0]
    y = x[:, 1] + tau * t + r.standard_normal(n)
    d = Dataset(x, y, t)
    fit = _oracle(d, lambda z: z[:, 1], lambda z: z[:, 1] + 1 + 0.5 * z[:, 0],
                  lambda z: 1 / (1 + np.exp(-0.5 * z[:, 1])))
    m = fit_r_learner(d, fit, LearnerSpec("elastic_net", {"lam": 0.0}), RngStream(1))
    coef = m.components["model"].coef
    assert abs(coef[0] - 0.5) < 0.05 and abs(coef[1]) < 0.05


def test_r_learner_null_effect():
    r = RngStream(9)
    n = 5000
    x = r.standard_normal(n * 3).reshape(n, 3)
    t = (r.uniform(n) < 0.5).astype(int)
    d = Dataset(x, x[:, 0] + r.standard_normal(n), t, np.full(n, 0.5))
    fit = fit_nuisance(d, LIN, None, 5, RngStream(1), roles=("m",))
    m = fit_r_learner(d, fit, LIN, RngStream(2))
    assert np.mean(np.abs(m.predict(x))) < 0.1


def _zero_noise(pi_f, seed):
    r = RngStream(seed)
    n = 10_000
    x = r.standard_normal(n * 2).reshape(n, 2)
    m0_f = lambda z: 2 * z[:, 1]
    tau_f = lambda z: 0.5 - z[:, 0]
    m1_f = lambda z: m0_f(z) + tau_f(z)
    t = (r.uniform(n) < pi_f(x)).astype(int)
    d = Dataset(x, np.where(t == 1, m1_f(x), m0_f(x)), t)
    return d, NuisanceFit.oracle(d, m0_f, m1_f, pi_f), tau_f(x)


def test_zero_noise_oracle_recovery_varying_propensity():
    d, fit, truth = _zero_noise(lambda z: 1 / (1 + np.exp(-0.4 * z[:, 1])), 10)
    models = [fit_r_learner(d, fit, LIN), fit_t_learner(d, LIN),
              fit_x_learner(d, LIN, LIN, nuisance=fit)]
    for m in models:
        assert np.max(np.abs(m.predict(d.x) - truth)) < 1e-2, m.method


def test_zero_noise_oracle_recovery_balanced_assignment():
    # With pi = 1/2 the offset h equals m, so W/A targets are exact.
    d, fit, truth = _zero_noise(lambda z: np.full(len(z), 0.5), 11)
    for m in (fit_mlm(d, fit, "A", True, LIN), fit_mlm(d, fit, "W", True, LIN)):
        assert np.max(np.abs(m.predict(d.x) - truth)) < 1e-2, m.method


def test_label_flip_antisymmetry():
    r = RngStream(11)
    n = 400
    x = r.standard_normal(n * 2).reshape(n, 2)
    t = (r.uniform(n) < 0.4).astype(int)
    y = x[:, 0] + t * x[:, 1] + r.standard_normal(n)
    d = Dataset(x, y, t)
    flip = Dataset(x, y, 1 - t)
    a = fit_t_learner(d, LIN).predict(x)
    b = fit_t_learner(flip, LIN).predict(x)
    assert np.allclose(a, -b, atol=1e-10)
    pi = np.full(n, 0.4)
    for v in ("W", "A"):
        a = fit_mlm(d, pi, v, False, LIN).predict(x)
        b = fit_mlm(flip, 1 - pi, v, False, LIN).predict(x)
        assert np.allclose(a, -b, atol=1e-9), v


def test_outcome_shift_invariance_contrast():
    r = RngStream(12)
    n = 1000
    x = r.standard_normal(n * 2).reshape(n, 2)
    t = (r.uniform(n) < 0.75).astype(int)
    y = x[:, 0] + t * (0.5 + x[:, 1]) + r.standard_normal(n)
    d = Dataset(x, y, t, np.full(n, 0.75))
    fit = fit_nuisance(d, LIN, None, 5, RngStream(1))
    c = 25.0
    ds = d.with_outcome(y + c)
    fits = fit_nuisance(ds, LIN, None, 5, RngStream(1))
    for make in (lambda dd, ff: fit_r_learner(dd, ff, LIN),
                 lambda dd, ff: fit_mlm(dd, ff, "A", True, LIN),
                 lambda dd, ff: fit_mlm(dd, ff, "W", True, LIN)):
        assert np.allclose(make(d, fit).predict(x), make(ds, fits).predict(x), atol=1e-8)
    w0 = fit_mlm(d, fit, "W", False, LIN).predict(x)
    w1 = fit_mlm(ds, fits, "W", False, LIN).predict(x)
    assert np.max(np.abs(w0 - w1)) > 1.0


def test_causal_tree_planted_jump():
    r = RngStream(13)
    n = 4000
    x = r.standard_normal(n * 3).reshape(n, 3)
    t = (r.uniform(n) < 0.5).astype(int)
    y = 2.0 * t * (x[:, 0] > 0) + r.standard_normal(n)
    m = fit_causal_tree(Dataset(x, y, t), rng=RngStream(1))
    assert m.feature[0] == 0 and abs(m.threshold[0]) < 0.1


def _null_tree(seed, prune):
    r = RngStream(seed)
    n = 2000
    x = r.standard_normal(n * 3).reshape(n, 3)
    t = (r.uniform(n) < 0.5).astype(int)
    y = 1.0 * t + r.standard_normal(n)
    return fit_causal_tree(Dataset(x, y, t), rng=RngStream(2), prune=prune)


def test_causal_tree_constant_effect_mostly_root():
    depths = [_null_tree(100 + s, True).depth for s in range(20)]
    assert sum(d == 0 for d in depths) >= 10
    assert _null_tree(100, False).depth > depths[0]


def test_causal_tree_honesty_bookkeeping():
    r = RngStream(15)
    n = 1000
    x = r.standard_normal(n * 2).reshape(n, 2)
    t = (r.uniform(n) < 0.5).astype(int)
    y = t * (x[:, 0] > 0) + r.standard_normal(n)
    m = fit_causal_tree(Dataset(x, y, t), honest_fraction=0.5, rng=RngStream(3))
    assert np.intersect1d(m.split_idx, m.est_idx).size == 0
    rows = np.concatenate(list(m.leaf_est_rows.values()))
    assert np.array_equal(np.sort(rows), m.est_idx)
    for leaf, idx in m.leaf_est_rows.items():
        tt = t[idx]
        assert m.effect[leaf] == pytest.approx(y[idx][tt == 1].mean() - y[idx][tt == 0].mean())
    assert causal_tree_as_cate(m).predict(x).shape == (n,)


def test_predict_cate_shapes_and_errors():
    d = _const_effect(100, seed=16)
    m = fit_t_learner(d, LIN)
    assert predict_cate(m, np.zeros((0, 3))).shape == (0,)
    with pytest.raises(ValueError):
        predict_cate(m, np.zeros((2, 4)))
    row = d.x[:1]
    dup = predict_cate(m, np.vstack([row, row]))
    assert dup[0] == dup[1]


def test_mlm_rejects_bad_variant():
    d = _const_effect(50, seed=17)
    with pytest.raises(ValueError):
        fit_mlm(d, 0.5, "Z", False, LIN)
    with pytest.raises(ValueError):
        fit_mlm(d, 0.5, "W", True, LIN)
