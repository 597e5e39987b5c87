"""CATE estimators behind one interface: meta-learners, modified-loss learners,
the R-learner and an honest causal tree."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset
from .learners import LearnerSpec, fit_learner, tune
from .nuisance import NuisanceFit
from .rng import RngStream
from .transforms import mcm_weights

METHODS = ("S", "T", "X", "R", "W", "Waug", "A", "Aaug", "CausalTree")


@dataclass
class CateModel:
    """A fitted CATE estimator.

    Attributes:
        method: one of ``METHODS``.
        predictor: ``x -> Delta_hat(x)``.
        p: training covariate count.
        info: JSON-ready summary (hyperparameters, diagnostics).
        train_prediction: Delta_hat at the training rows (may be out-of-fold).
    """

    method: str
    predictor: Callable[[np.ndarray], np.ndarray]
    p: int
    info: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict, repr=False)
    train_prediction: np.ndarray | None = field(default=None, repr=False)

    def predict(self, x) -> np.ndarray:
        return predict_cate(self, x)


def predict_cate(model: CateModel, x_new) -> np.ndarray:
    """Delta_hat for each row of ``x_new``.

    Raises:
        ValueError: column count differs from training.
    """
    x = np.asarray(x_new, dtype=float)
    if x.size == 0:
        return np.zeros(0)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != model.p:
        raise ValueError(f"expected {model.p} covariates, got {x.shape[1]}")
    out = np.asarray(model.predictor(np.ascontiguousarray(x)), dtype=float)
    return out


def _rng(rng):
    return RngStream(0) if rng is None else rng


def _spec_info(spec: LearnerSpec) -> dict:
    return spec.to_dict()


def _tuned_fit(spec: LearnerSpec, x, y, weights, rng):
    """Fit and also return the spec with any tuning resolved (for provenance)."""
    if spec.needs_tuning:
        spec = tune(spec, x, y, rng.child(), weights)
    return spec, fit_learner(spec, x, y, weights, rng)


# ---------------------------------------------------------------- meta-learners


def fit_s_learner(data: Dataset, outcome_spec: LearnerSpec, rng: RngStream | None = None,
                  interactions: bool = False) -> CateModel:
    """Single model of Y on (X, T) [and T*X]; Delta_hat = m(1, x) - m(0, x)."""
    rng = _rng(rng)

    def design(x, t):
        cols = [x, t[:, None]]
        if interactions:
            cols.append(x * t[:, None])
        return np.hstack(cols)

    spec, model = _tuned_fit(outcome_spec, design(data.x, data.t.astype(float)), data.y, None, rng)

    def pred(x):
        one = np.ones(x.shape[0])
        return model.predict(design(x, one)) - model.predict(design(x, 0 * one))

    return CateModel("S", pred, data.p, {"outcome_spec": _spec_info(spec),
                                         "interactions": interactions}, {"model": model})


def fit_t_learner(data: Dataset, outcome_spec: LearnerSpec, rng: RngStream | None = None,
                  nuisance: NuisanceFit | None = None) -> CateModel:
    """Separate arm regressions; Delta_hat = m1(x) - m0(x).

    With ``nuisance`` the whole-sample arm refits stored there are reused.
    """
    rng = _rng(rng)
    if nuisance is not None:
        m0, m1 = nuisance.predict_m0, nuisance.predict_m1
        info = {"nuisance_specs": nuisance.specs}
    else:
        for arm in (0, 1):
            if np.sum(data.t == arm) < 2:
                raise ValueError(f"arm T={arm} has fewer than 2 rows")
        c, tr = data.t == 0, data.t == 1
        s0, f0 = _tuned_fit(outcome_spec, data.x[c], data.y[c], None, rng.spawn(0))
        s1, f1 = _tuned_fit(outcome_spec, data.x[tr], data.y[tr], None, rng.spawn(1))
        m0, m1 = f0.predict, f1.predict
        info = {"m0_spec": _spec_info(s0), "m1_spec": _spec_info(s1)}
    return CateModel("T", lambda x: m1(x) - m0(x), data.p, info, {"m0": m0, "m1": m1})


def fit_x_learner(data: Dataset, outcome_spec: LearnerSpec, second_stage_spec: LearnerSpec,
                  rng: RngStream | None = None, nuisance: NuisanceFit | None = None,
                  weight_fn: Callable | None = None,
                  control_stage_spec: LearnerSpec | None = None) -> CateModel:
    """X-learner.

    Imputed effects D1 = Y - m0(X) on treated rows and D0 = m1(X) - Y on
    controls are regressed on X separately; the final estimate is
    w(x) tau0(x) + (1 - w(x)) tau1(x) with w the propensity.

    Args:
        nuisance: if given, out-of-fold m0/m1 impute the effects and its
            propensity predictor supplies w.
        weight_fn: overrides w(x) (e.g. the known randomisation probability).
        control_stage_spec: spec for the control-arm regression tau0 when it
            should differ from ``second_stage_spec``.
    """
    rng = _rng(rng)
    t, y, x = data.t, data.y, data.x
    if nuisance is not None:
        m0_tr, m1_tr = nuisance.oof_m0, nuisance.oof_m1
    else:
        c, tr = t == 0, t == 1
        _, f0 = _tuned_fit(outcome_spec, x[c], y[c], None, rng.spawn(0))
        _, f1 = _tuned_fit(outcome_spec, x[tr], y[tr], None, rng.spawn(1))
        m0_tr, m1_tr = f0.predict(x), f1.predict(x)
    d1 = (y - m0_tr)[t == 1]
    d0 = (m1_tr - y)[t == 0]
    s1, g1 = _tuned_fit(second_stage_spec, x[t == 1], d1, None, rng.spawn(2))
    s0, g0 = _tuned_fit(control_stage_spec or second_stage_spec, x[t == 0], d0, None,
                        rng.spawn(3))
    if weight_fn is None:
        if data.pi_known is not None and np.unique(data.pi_known).size == 1:
            const = float(data.pi_known[0])
            weight_fn = lambda z: np.full(z.shape[0], const)  # noqa: E731
        elif nuisance is not None:
            weight_fn = nuisance.predict_pi
        else:
            raise ValueError("X-learner needs a propensity: pass nuisance or weight_fn")

    def pred(z):
        w = weight_fn(z)
        return w * g0.predict(z) + (1.0 - w) * g1.predict(z)

    return CateModel("X", pred, data.p, {"tau1_spec": _spec_info(s1), "tau0_spec": _spec_info(s0)},
                     {"tau0": g0.predict, "tau1": g1.predict, "w": weight_fn})


def fit_r_learner(data: Dataset, fit: NuisanceFit, final_spec: LearnerSpec,
                  rng: RngStream | None = None) -> CateModel:
    """R-learner: weighted regression of (Y - m)/(T - pi) with weights (T - pi)^2.

    Uses the cross-fitted ``oof_m`` and ``oof_pi`` from ``fit``; this is
    the same minimiser as the R-loss sum (Y - m - (T - pi) tau(X))^2.
    """
    rng = _rng(rng)
    resid_t = data.t - fit.oof_pi
    pseudo = (data.y - fit.oof_m) / resid_t
    spec, model = _tuned_fit(final_spec, data.x, pseudo, resid_t ** 2, rng)
    return CateModel("R", model.predict, data.p, {"final_spec": _spec_info(spec)}, {"model": model})


def fit_mlm(data: Dataset, pi_or_fit, variant: str, augmented: bool, final_spec: LearnerSpec,
            rng: RngStream | None = None, aug=None) -> CateModel:
    """Modified-loss learners.

    W (weighting): regress 2A (Y - b) on X with weights 1/(A pi + (1 - A)/2).
    A (A-learning): least squares of (Y - b) on (T - pi) g(X), solved as a
    weighted regression of (Y - b)/(T - pi) with weights (T - pi)^2.
    With ``augmented`` the offset b is the out-of-fold main effect h; else 0.

    Args:
        pi_or_fit: propensity vector or NuisanceFit (its oof_pi, oof_h).
        aug: explicit offset vector overriding the NuisanceFit main effect.
    """
    if variant not in ("W", "A"):
        raise ValueError("variant must be 'W' or 'A'")
    rng = _rng(rng)
    if isinstance(pi_or_fit, NuisanceFit):
        pi = pi_or_fit.oof_pi
        if augmented and aug is None:
            aug = pi_or_fit.oof_h
    else:
        pi = np.asarray(pi_or_fit, dtype=float)
        if pi.ndim == 0:
            pi = np.full(data.n, float(pi))
    if augmented and aug is None:
        raise ValueError("augmented fit needs a NuisanceFit or explicit aug offsets")
    b = np.asarray(aug, dtype=float) if augmented else np.zeros(data.n)
    resid = data.y - b
    if variant == "W":
        tr = mcm_weights(data, pi)
        target = 2.0 * tr.labels * resid
        weights = tr.weights
    else:
        dt = data.t - pi
        target = resid / dt
        weights = dt ** 2
    spec, model = _tuned_fit(final_spec, data.x, target, weights, rng)
    tag = variant + ("aug" if augmented else "")
    return CateModel(tag, model.predict, data.p, {"final_spec": _spec_info(spec),
                                                  "augmented": augmented}, {"model": model})


# ---------------------------------------------------------------- causal tree


@dataclass
class CausalTreeModel:
    """Honest causal tree.

    Nodes use the flat layout of :class:`htelab.learners.TreeModel`; ``effect``
    holds estimation-half arm-mean differences at the leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    effect: np.ndarray
    split_idx: np.ndarray
    est_idx: np.ndarray
    leaf_est_rows: dict[int, np.ndarray]
    min_leaf: int
    max_depth: int
    p: int

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[i, self.feature[node]] <= self.threshold[node] \
                    else self.right[node]
            out[i] = node
        return out

    def predict(self, x) -> np.ndarray:
        return self.effect[self.apply(x)]

    @property
    def depth(self) -> int:
        d = {0: 0}
        best = 0
        for k in range(len(self.feature)):
            if self.feature[k] >= 0:
                for c in (self.left[k], self.right[k]):
                    d[c] = d[k] + 1
                    best = max(best, d[c])
        return best


def _leaf_score(s1, q1, n1, s0, q0, n0, n_tr, pen, p_t):
    """Honest criterion contribution of a candidate leaf (vectorised).

    n_leaf * tau^2 / n_tr  -  pen * (var1 / p_t + var0 / (1 - p_t)), with
    tau the arm-mean difference and var_a the within-arm sample variances.
    """
    m1 = s1 / n1
    m0 = s0 / n0
    v1 = np.maximum(q1 / n1 - m1 * m1, 0.0) * n1 / np.maximum(n1 - 1, 1)
    v0 = np.maximum(q0 / n0 - m0 * m0, 0.0) * n0 / np.maximum(n0 - 1, 1)
    tau = m1 - m0
    return (n1 + n0) * tau * tau / n_tr - pen * (v1 / p_t + v0 / (1 - p_t))


def fit_causal_tree(data: Dataset, min_leaf: int = 25, max_depth: int = 6,
                    honest_fraction: float = 0.5, rng: RngStream | None = None,
                    min_gain: float = 0.0, prune: bool = True) -> CausalTreeModel:
    """Honest causal tree.

    Rows are split at random into a splitting half and an estimation half.
    Splits are chosen on the splitting half by the honest criterion: the
    sum over leaves of n_leaf * tau_leaf^2 / n_split, minus
    (1/n_split + 1/n_est) times the leaf sampling-variance term.  A split is
    kept only when it raises the criterion by more than ``min_gain``.  Each
    child must hold ``min_leaf`` rows of both arms in both halves.  Leaf
    effects are arm-mean differences computed on estimation-half rows only.

    With ``prune`` the grown tree is collapsed bottom-up wherever the same
    criterion, evaluated on the estimation half, is not raised by the
    subtree below a node.  Without it, noise splits that clear ``min_gain``
    on the splitting half survive.

    Raises:
        ValueError: the root lacks ``min_leaf`` rows of an arm in either half.
    """
    rng = _rng(rng)
    if not 0 < honest_fraction < 1:
        raise ValueError("honest_fraction must lie in (0, 1)")
    n = data.n
    perm = rng.permutation(n)
    n_split = int(round((1 - honest_fraction) * n))
    sp = np.sort(perm[:n_split])
    es = np.sort(perm[n_split:])
    x, y, t = data.x, data.y, data.t
    for name, idx in (("split", sp), ("estimation", es)):
        for arm in (0, 1):
            if np.sum(t[idx] == arm) < min_leaf:
                raise ValueError(f"root {name} half has fewer than {min_leaf} rows with T={arm}")
    p_t = float(t[sp].mean())
    n_tr = float(sp.size)
    pen = 1.0 / n_tr + 1.0 / es.size

    feat, thr, left, right = [-1], [0.0], [-1], [-1]
    leaf_rows: dict[int, np.ndarray] = {}
    node_rows: dict[int, np.ndarray] = {}
    stack = [(0, sp, es, 0)]
    while stack:
        node, rs, re, depth = stack.pop()
        node_rows[node] = re
        best = None
        if depth < max_depth:
            best = _best_causal_split(x, y, t, rs, re, min_leaf, n_tr, pen, p_t, min_gain)
        if best is None:
            leaf_rows[node] = re
            continue
        f, th = best
        feat[node], thr[node] = f, th
        lc, rc = len(feat), len(feat) + 1
        for _ in range(2):
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
        left[node], right[node] = lc, rc
        gl_s = x[rs, f] <= th
        gl_e = x[re, f] <= th
        stack.append((rc, rs[~gl_s], re[~gl_e], depth + 1))
        stack.append((lc, rs[gl_s], re[gl_e], depth + 1))
    if prune:
        pen_e = 1.0 / es.size + 1.0 / n_tr
        p_e = float(t[es].mean())
        _prune_honest(0, feat, left, right, node_rows, leaf_rows, y, t, float(es.size),
                      pen_e, p_e)
        feat, thr, left, right, node_rows = _compact(feat, thr, left, right, node_rows)
        leaf_rows = {k: node_rows[k] for k in range(len(feat)) if feat[k] < 0}
    effect = np.zeros(len(feat))
    for node, re in leaf_rows.items():
        tt = t[re]
        effect[node] = y[re][tt == 1].mean() - y[re][tt == 0].mean()
    return CausalTreeModel(np.array(feat), np.array(thr), np.array(left), np.array(right),
                           effect, sp, es, leaf_rows, int(min_leaf), int(max_depth), data.p)


def _best_causal_split(x, y, t, rs, re, min_leaf, n_tr, pen, p_t, min_gain):
    ys, ts = y[rs], t[rs]
    parent = _leaf_score(*_arm_stats(ys, ts), n_tr, pen, p_t)
    best_gain, best = min_gain, None
    te = t[re]
    for f in range(x.shape[1]):
        xs = x[rs, f]
        order = np.argsort(xs, kind="stable")
        xo, yo, to = xs[order], ys[order], ts[order]
        t1 = to == 1
        c1 = np.cumsum(t1)
        c0 = np.cumsum(~t1)
        s1 = np.cumsum(np.where(t1, yo, 0.0))
        s0 = np.cumsum(np.where(t1, 0.0, yo))
        q1 = np.cumsum(np.where(t1, yo * yo, 0.0))
        q0 = np.cumsum(np.where(t1, 0.0, yo * yo))
        # candidate k: left = first k+1 sorted rows; needs a value change
        k = np.flatnonzero(xo[1:] > xo[:-1])
        if k.size == 0:
            continue
        n1l, n0l = c1[k], c0[k]
        n1r, n0r = c1[-1] - n1l, c0[-1] - n0l
        ok = (n1l >= min_leaf) & (n0l >= min_leaf) & (n1r >= min_leaf) & (n0r >= min_leaf)
        if not ok.any():
            continue
        thr = 0.5 * (xo[k] + xo[k + 1])
        thr = np.where(thr >= xo[k + 1], xo[k], thr)
        xe = x[re, f]
        xe1 = np.sort(xe[te == 1])
        xe0 = np.sort(xe[te == 0])
        e1l = np.searchsorted(xe1, thr, side="right")
        e0l = np.searchsorted(xe0, thr, side="right")
        ok &= (e1l >= min_leaf) & (e0l >= min_leaf)
        ok &= (xe1.size - e1l >= min_leaf) & (xe0.size - e0l >= min_leaf)
        if not ok.any():
            continue
        k, thr = k[ok], thr[ok]
        with np.errstate(invalid="ignore", divide="ignore"):
            gl = _leaf_score(s1[k], q1[k], c1[k], s0[k], q0[k], c0[k], n_tr, pen, p_t)
            gr = _leaf_score(s1[-1] - s1[k], q1[-1] - q1[k], c1[-1] - c1[k],
                             s0[-1] - s0[k], q0[-1] - q0[k], c0[-1] - c0[k], n_tr, pen, p_t)
        gain = gl + gr - parent
        j = int(np.argmax(gain))
        if gain[j] > best_gain + 1e-12 * abs(best_gain):
            best_gain, best = float(gain[j]), (f, float(thr[j]))
    return best


def _prune_honest(node, feat, left, right, node_rows, leaf_rows, y, t, n_e, pen, p_t):
    """Post-order collapse; returns the subtree score on estimation rows."""
    re = node_rows[node]
    own = float(_leaf_score(*_arm_stats(y[re], t[re]), n_e, pen, p_t))
    if feat[node] < 0:
        return own
    sub = (_prune_honest(left[node], feat, left, right, node_rows, leaf_rows, y, t, n_e, pen, p_t)
           + _prune_honest(right[node], feat, left, right, node_rows, leaf_rows, y, t, n_e, pen,
                           p_t))
    if sub > own:
        return sub
    feat[node] = -1
    return own


def _compact(feat, thr, left, right, node_rows):
    """Renumber the nodes reachable from the root in preorder."""
    order, stack = [], [0]
    while stack:
        k = stack.pop()
        order.append(k)
        if feat[k] >= 0:
            stack += [right[k], left[k]]
    new = {k: i for i, k in enumerate(order)}
    f = [feat[k] for k in order]
    th = [thr[k] if feat[k] >= 0 else 0.0 for k in order]
    lo = [new[left[k]] if feat[k] >= 0 else -1 for k in order]
    hi = [new[right[k]] if feat[k] >= 0 else -1 for k in order]
    return f, th, lo, hi, {new[k]: node_rows[k] for k in order}


def _arm_stats(y, t):
    t1 = t == 1
    return (y[t1].sum(), (y[t1] ** 2).sum(), float(t1.sum()),
            y[~t1].sum(), (y[~t1] ** 2).sum(), float((~t1).sum()))


def causal_tree_as_cate(model: CausalTreeModel) -> CateModel:
    return CateModel("CausalTree", model.predict, model.p,
                     {"min_leaf": model.min_leaf, "max_depth": model.max_depth,
                      "depth": model.depth, "n_leaves": int(np.sum(model.feature < 0))},
                     {"tree": model})
