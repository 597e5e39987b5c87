"""Individualized treatment rules: construction, value estimation and learning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .cate import CateModel
from .core import Dataset
from .learners import LearnerSpec, fit_elastic_net, fit_learner, tune
from .nuisance import NuisanceFit
from .rng import RngStream
from .transforms import TransformedSample, aipw_scores, aol_weights, mcm_denominator, owl_weights

KINDS = ("threshold_on_cate", "linear_owl", "linear_aol", "aipw_classify", "policy_tree")
SURROGATES = ("logistic", "smoothed_hinge")


@dataclass
class PolicyModel:
    """A treatment rule D(x) = 1{g(x) > 0}.

    Attributes:
        kind: one of ``KINDS``.
        score: decision score g.
        coef, intercept: linear coefficients for the linear kinds.
        tree: nested dict for policy trees.
    """

    kind: str
    score: Callable[[np.ndarray], np.ndarray]
    p: int
    coef: np.ndarray | None = None
    intercept: float = 0.0
    tree: dict | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def decision_score(self, x) -> np.ndarray:
        x = _matrix(x, self.p)
        return np.asarray(self.score(x), dtype=float)

    def decide(self, x) -> np.ndarray:
        return (self.decision_score(x) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "p": self.p, "info": self.info}
        if self.coef is not None:
            d["coef"] = [float(c) for c in self.coef]
            d["intercept"] = float(self.intercept)
        if self.tree is not None:
            d["tree"] = self.tree
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _matrix(x, p):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != p:
        raise ValueError(f"expected {p} covariates, got {x.shape[1]}")
    return np.ascontiguousarray(x)


def policy_from_dict(d: dict) -> PolicyModel:
    """Rebuild a linear or tree rule from its JSON export.

    Threshold-on-CATE and classifier rules carry a fitted model that is not
    serialised; they are exported for documentation only.
    """
    kind, p = d["kind"], int(d["p"])
    if "coef" in d:
        coef = np.asarray(d["coef"], dtype=float)
        b0 = float(d["intercept"])
        return PolicyModel(kind, lambda x: b0 + x @ coef, p, coef, b0, info=d.get("info", {}))
    if "tree" in d:
        tree = d["tree"]
        return PolicyModel(kind, lambda x: _tree_score(tree, x), p, tree=tree,
                           info=d.get("info", {}))
    raise ValueError(f"policy kind {kind!r} cannot be re-applied from JSON")


def rule_from_cate(model: CateModel, delta: float = 0.0) -> PolicyModel:
    """D(x) = 1{Delta_hat(x) > delta}."""
    return PolicyModel("threshold_on_cate", lambda x: model.predict(x) - delta, model.p,
                       info={"method": model.method, "delta": float(delta)})


# ---------------------------------------------------------------- values


@dataclass(frozen=True)
class ValueEstimate:
    """Estimated value of a rule; the SE is conditional on the rule."""

    estimator: str
    value: float
    se: float
    n_consistent: int

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "value": self.value, "se": self.se,
                "n_consistent": self.n_consistent, "se_note": "conditional on the rule"}


def _decisions(policy, x) -> np.ndarray:
    if isinstance(policy, PolicyModel):
        return policy.decide(x)
    d = np.asarray(policy)
    if d.ndim == 0:
        return np.full(x.shape[0], int(d), dtype=np.int64)
    return d.astype(np.int64)


def _pi_vector(pi, n):
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 0:
        pi = np.full(n, float(pi))
    if not np.all((pi > 0) & (pi < 1)):
        raise ValueError("propensity must lie strictly inside (0, 1)")
    return pi


def _summarise(name, terms, n_consistent):
    n = terms.size
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return ValueEstimate(name, float(terms.mean()), se, int(n_consistent))


def value_ipw(data: Dataset, pi, policy) -> ValueEstimate:
    """mean_i 1{T_i = D_i} Y_i / pi(D_i, X_i).

    Args:
        policy: PolicyModel, a decision vector or a constant 0/1.

    Raises:
        ValueError: no unit received the treatment the rule recommends.
    """
    pi = _pi_vector(pi, data.n)
    d = _decisions(policy, data.x)
    c = data.t == d
    if not c.any():
        raise ValueError("no rule-consistent units; IPW value undefined")
    pd = np.where(d == 1, pi, 1.0 - pi)
    terms = np.where(c, data.y / pd, 0.0)
    return _summarise("ipw", terms, c.sum())


def value_aipw(data: Dataset, fit: NuisanceFit, policy) -> ValueEstimate:
    """Doubly robust value with cross-fitted nuisances:
    mean_i C_i Y_i / pi_D - (C_i - pi_D) / pi_D * m(D_i, X_i)."""
    d = _decisions(policy, data.x)
    pi = fit.oof_pi
    pd = np.where(d == 1, pi, 1.0 - pi)
    md = np.where(d == 1, fit.oof_m1, fit.oof_m0)
    c = (data.t == d).astype(float)
    terms = c * data.y / pd - (c - pd) / pd * md
    return _summarise("aipw", terms, c.sum())


def value_contrast_ipw(data: Dataset, pi, policy) -> ValueEstimate:
    """Consistent-minus-inconsistent value: IPW mean of Y over units following
    the rule minus the IPW mean over units that do not.  Not the same target
    as ``value_ipw``."""
    pi = _pi_vector(pi, data.n)
    d = _decisions(policy, data.x)
    c = data.t == d
    terms = np.where(c, 1.0, -1.0) * data.y / mcm_denominator(data.a, pi)
    return _summarise("ipw_contrast", terms, c.sum())


def eta_utility(true_ate_in_selected: float, selected_fraction: float) -> float:
    """eta = ATE(S_hat) * fraction selected; 0 when nothing is selected."""
    if not 0.0 <= selected_fraction <= 1.0:
        raise ValueError("selected_fraction must lie in [0, 1]")
    if selected_fraction == 0:
        return 0.0
    return float(true_ate_in_selected * selected_fraction)


# ---------------------------------------------------------------- OWL / AOL


def _huber_hinge(u):
    """Smoothed hinge: 0 for u >= 1, (1 - u)^2 / 2 on [0, 1), 1/2 - u below 0."""
    return np.where(u >= 1, 0.0, np.where(u >= 0, 0.5 * (1 - u) ** 2, 0.5 - u))


def _huber_hinge_grad(u):
    return np.where(u >= 1, 0.0, np.where(u >= 0, u - 1.0, -1.0))


def fit_smoothed_hinge(x, labels, weights, lam: float, tol: float = 1e-8,
                       max_iter: int = 20000):
    """L1-penalised weighted smoothed-hinge classifier by proximal gradient.

    Minimises sum_i v_i phi(l_i (b0 + x_i b)) + lam ||b||_1 on standardised
    columns, v = weights / sum(weights).  Returns (intercept, coef) on the
    original scale.
    """
    x = np.asarray(x, float)
    v = np.asarray(weights, float) / np.sum(weights)
    mu = v @ x
    sd = np.sqrt(v @ (x - mu) ** 2)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    zi = np.column_stack([np.ones(len(z)), z])
    step = 1.0 / max(np.linalg.eigvalsh((zi * v[:, None]).T @ zi).max(), 1e-12)
    beta = np.zeros(zi.shape[1])
    for _ in range(max_iter):
        u = labels * (zi @ beta)
        grad = zi.T @ (v * labels * _huber_hinge_grad(u))
        nb = beta - step * grad
        nb[1:] = np.sign(nb[1:]) * np.maximum(np.abs(nb[1:]) - step * lam, 0.0)
        if np.max(np.abs(nb - beta)) < tol:
            beta = nb
            break
        beta = nb
    coef = beta[1:] / sd
    return float(beta[0] - mu @ coef), coef


def _weighted_classifier(x, tr: TransformedSample, lam, surrogate, alpha, rng):
    labels = np.asarray(tr.labels, float)
    keep = tr.weights > 0
    y01 = (labels > 0).astype(float)
    if lam == "cv":
        if surrogate != "logistic":
            raise ValueError("lambda='cv' is available for the logistic surrogate only")
        spec = LearnerSpec("elastic_net", {"alpha": alpha}, {"lam": "path"}, 5, "logloss")
        lam = tune(spec, x[keep], y01[keep], rng, weights=tr.weights[keep]).chosen["lam"]
    lam = float(lam)
    if surrogate == "logistic":
        m = fit_elastic_net(x[keep], y01[keep], tr.weights[keep], lam=lam, alpha=alpha,
                            family="binomial")
        return m.intercept, m.coef, lam
    if surrogate == "smoothed_hinge":
        b0, coef = fit_smoothed_hinge(x[keep], labels[keep], tr.weights[keep], lam)
        return b0, coef, lam
    raise ValueError(f"surrogate must be one of {SURROGATES}")


def fit_owl(data: Dataset, pi, surrogate: str = "logistic", lam="cv", rng: RngStream | None = None,
            alpha: float = 1.0, shift: bool = True) -> PolicyModel:
    """Outcome weighted learning with a linear rule.

    Minimises sum_i W_i phi(A_i g(X_i)) + lam ||beta||_1 with OWL weights
    W = Y / (A pi + (1 - A)/2) (Y shifted to be nonnegative if needed).

    Args:
        lam: penalty, or ``"cv"`` to pick it from the path by weighted CV.
    """
    rng = RngStream(0) if rng is None else rng
    tr = owl_weights(data, pi, shift=shift)
    b0, coef, lam = _weighted_classifier(data.x, tr, lam, surrogate, alpha, rng)
    return PolicyModel("linear_owl", lambda z: b0 + z @ coef, data.p, coef, b0,
                       info={"surrogate": surrogate, "lambda": lam, "shift": tr.shift})


def fit_aol(data: Dataset, fit_or_m, pi=None, surrogate: str = "logistic", lam="cv",
            rng: RngStream | None = None, alpha: float = 1.0) -> PolicyModel:
    """Augmented OWL: residualised outcomes, labels A sign(Y - m), weights |Y - m| / pi_A."""
    rng = RngStream(0) if rng is None else rng
    tr = aol_weights(data, fit_or_m, pi)
    b0, coef, lam = _weighted_classifier(data.x, tr, lam, surrogate, alpha, rng)
    return PolicyModel("linear_aol", lambda z: b0 + z @ coef, data.p, coef, b0,
                       info={"surrogate": surrogate, "lambda": lam})


def fit_aipw_classifier(data: Dataset, fit: NuisanceFit, final_spec: LearnerSpec | None = None,
                        rng: RngStream | None = None) -> PolicyModel:
    """Weighted classification of Z = 1{score > 0} with weights |score|.

    The default classifier is an L1 logistic regression with lambda chosen by
    weighted CV.  When every score has the same sign the rule is constant.
    """
    rng = RngStream(0) if rng is None else rng
    s = aipw_scores(data, fit).pseudo_outcome
    z = (s > 0).astype(float)
    w = np.abs(s)
    info = {"n_positive_scores": int(z.sum())}
    if z.min() == z.max():
        sign = 1.0 if z[0] == 1 else -1.0
        return PolicyModel("aipw_classify", lambda x: np.full(x.shape[0], sign), data.p,
                           info={**info, "constant": True})
    if final_spec is None:
        final_spec = LearnerSpec("elastic_net", {"alpha": 1.0}, {"lam": "path"}, 5, "logloss")
    keep = w > 0
    model = fit_learner(final_spec, data.x[keep], z[keep], w[keep], rng)
    if hasattr(model, "decision_function"):
        return PolicyModel("aipw_classify", model.decision_function, data.p,
                           np.asarray(model.coef, float), float(model.intercept), info=info)
    return PolicyModel("aipw_classify", lambda x: model.predict(x) - 0.5, data.p, info=info)


# ---------------------------------------------------------------- policy tree


@njit(cache=True)
def _best_stump(x, s, rows, order, tol):
    """Best depth-1 rule on ``rows`` (boolean mask).

    Returns (objective, feature, threshold, d_left, d_right); feature -1 means
    no split exists and the node is a leaf assigning d_left.  Scans features
    and thresholds in increasing order and keeps the first maximiser.
    """
    n, p = x.shape
    total = 0.0
    for i in range(n):
        if rows[i]:
            total += s[i]
    best = total if total > tol else 0.0
    bf, bt = -1, 0.0
    bl = 1 if total > tol else 0
    br = bl
    for j in range(p):
        left = 0.0
        prev = 0.0
        started = False
        for r in range(n):
            i = order[r, j]
            if not rows[i]:
                continue
            v = x[i, j]
            if started and v > prev:
                right = total - left
                dl = 1 if left > tol else 0
                dr = 1 if right > tol else 0
                obj = (left if dl else 0.0) + (right if dr else 0.0)
                if obj > best + tol:
                    best, bf, bt, bl, br = obj, j, 0.5 * (prev + v), dl, dr
            left += s[i]
            prev = v
            started = True
    return best, bf, bt, bl, br


@njit(cache=True)
def _best_depth2(x, s, order, tol):
    n, p = x.shape
    all_rows = np.ones(n, dtype=np.bool_)
    best = -np.inf
    res = np.zeros(12)
    res[1] = -1.0
    for j in range(p):
        prev = 0.0
        started = False
        left_rows = np.zeros(n, dtype=np.bool_)
        for r in range(n):
            i = order[r, j]
            v = x[i, j]
            if started and v > prev:
                right_rows = all_rows & ~left_rows
                a = _best_stump(x, s, left_rows, order, tol)
                b = _best_stump(x, s, right_rows, order, tol)
                obj = a[0] + b[0]
                if obj > best + tol:
                    best = obj
                    res[0] = obj
                    res[1] = j
                    res[2] = 0.5 * (prev + v)
                    res[3], res[4], res[5], res[6] = a[1], a[2], a[3], a[4]
                    res[7], res[8], res[9], res[10] = b[1], b[2], b[3], b[4]
            left_rows[i] = True
            prev = v
            started = True
    return best, res


def _stump_dict(f, t, dl, dr):
    if f < 0:
        return {"leaf": int(dl)}
    return {"feature": int(f), "threshold": float(t), "left": {"leaf": int(dl)},
            "right": {"leaf": int(dr)}}


def _tree_score(tree: dict, x) -> np.ndarray:
    """+1 where the tree assigns treatment, -1 elsewhere."""
    x = np.asarray(x, float)
    if "leaf" in tree:
        return np.full(x.shape[0], 1.0 if tree["leaf"] else -1.0)
    go_left = x[:, tree["feature"]] <= tree["threshold"]
    out = np.empty(x.shape[0])
    out[go_left] = _tree_score(tree["left"], x[go_left])
    out[~go_left] = _tree_score(tree["right"], x[~go_left])
    return out


def policy_tree_objective(tree: dict, x, scores) -> float:
    d = _tree_score(tree, x) > 0
    return math.fsum(np.asarray(scores, float)[d])


def fit_policy_tree(scores, x, depth: int = 2) -> PolicyModel:
    """Exhaustive search for the depth-1 or depth-2 axis-aligned tree maximising
    sum_i D(X_i) score_i.

    Candidate thresholds are midpoints between consecutive distinct values of
    each feature within the node.  Ties (up to 1e-12 of sum |score|) go to the
    lexicographically smallest (feature, threshold, assignment) tuple, with
    "no treatment" preferred in a tied leaf.

    Args:
        scores: TransformedSample (its pseudo-outcome) or a score vector.
    """
    if depth not in (1, 2):
        raise ValueError("policy tree depth must be 1 or 2")
    s = scores.pseudo_outcome if isinstance(scores, TransformedSample) else scores
    s = np.ascontiguousarray(s, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != s.shape[0]:
        raise ValueError("x and scores must have matching rows")
    order = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable"))
    tol = 1e-12 * max(float(np.abs(s).sum()), 1e-300)
    if depth == 1:
        _, f, t, dl, dr = _best_stump(x, s, np.ones(x.shape[0], np.bool_), order, tol)
        tree = _stump_dict(f, t, dl, dr)
    else:
        best, res = _best_depth2(x, s, order, tol)
        if res[1] < 0:
            _, f, t, dl, dr = _best_stump(x, s, np.ones(x.shape[0], np.bool_), order, tol)
            tree = _stump_dict(f, t, dl, dr)
        else:
            tree = {"feature": int(res[1]), "threshold": float(res[2]),
                    "left": _stump_dict(int(res[3]), res[4], int(res[5]), int(res[6])),
                    "right": _stump_dict(int(res[7]), res[8], int(res[9]), int(res[10]))}
    obj = policy_tree_objective(tree, x, s)
    return PolicyModel("policy_tree", lambda z: _tree_score(tree, z), x.shape[1], tree=tree,
                       info={"depth": depth, "objective": obj})
