"""Global heterogeneity tests (BLP, sorted-group GATE) and the ITE SD bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cate import fit_t_learner
from .core import Dataset, make_folds
from .learners import LearnerSpec, fit_learner
from .nuisance import NuisanceFit
from .rng import RngStream


@dataclass
class HeterogeneityTestResult:
    """Outcome of a BLP or GATE test.

    Attributes:
        estimates, se: coefficient name -> value (``alpha``/``beta`` for BLP,
            ``gate_1..K`` for GATE, in increasing Delta_hat order).
        p_value: one-sided p for beta > 0 (BLP) or the chi-squared
            homogeneity p (GATE; median over splits).
        p_value_adjusted: GATE median p doubled (capped at 1) when
            n_splits > 1, so that comparing it to alpha applies the
            doubled-alpha rule; equals p_value otherwise.
    """

    kind: str
    estimates: dict
    se: dict
    p_value: float | None
    p_value_adjusted: float | None
    statistic: float | None = None
    n_splits: int = 1
    n_discarded: int = 0
    note: str = ""
    diagnostics: dict = field(default_factory=dict)

    def reject(self, level: float = 0.05) -> bool:
        return self.p_value_adjusted is not None and self.p_value_adjusted < level

    def to_dict(self) -> dict:
        return {"kind": self.kind, "estimates": self.estimates, "se": self.se,
                "p_value": self.p_value, "p_value_adjusted": self.p_value_adjusted,
                "statistic": self.statistic, "n_splits": self.n_splits,
                "n_discarded": self.n_discarded, "note": self.note,
                "diagnostics": self.diagnostics}


def ols_robust(z, y, weights=None):
    """(Weighted) least squares with HC1 sandwich covariance.

    Returns:
        (coef, cov)
    """
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    n, k = z.shape
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    zw = z * w[:, None]
    bread = np.linalg.pinv(z.T @ zw)
    coef = bread @ (zw.T @ y)
    u = y - z @ coef
    meat = (zw * (u ** 2)[:, None]).T @ zw
    cov = bread @ meat @ bread * (n / max(n - k, 1))
    return coef, cov


def blp_test(data: Dataset, fit: NuisanceFit, cate) -> HeterogeneityTestResult:
    """Best-linear-predictor calibration test.

    Regresses Y - m(X) on Dbar (T - pi) and (T - pi)(Delta_hat - Dbar) with
    out-of-fold m, pi and Delta_hat; beta is the heterogeneity loading and
    the p-value is one-sided for beta > 0 with robust SEs.
    """
    d = np.asarray(cate, dtype=float)
    if d.shape != (data.n,):
        raise ValueError("cate must hold one cross-fitted value per row")
    res_t = data.t - fit.oof_pi
    dbar = float(d.mean())
    r1 = dbar * res_t
    r2 = res_t * (d - dbar)
    target = data.y - fit.oof_m
    if np.ptp(d) == 0:
        coef, cov = ols_robust(r1[:, None], target) if dbar != 0 else (np.array([np.nan]),
                                                                         np.full((1, 1), np.nan))
        return HeterogeneityTestResult(
            "blp", {"alpha": float(coef[0]), "beta": None},
            {"alpha": float(math.sqrt(cov[0, 0])), "beta": None}, None, None,
            note="no estimable heterogeneity loading (constant Delta_hat)")
    coef, cov = ols_robust(np.column_stack([r1, r2]), target)
    se = np.sqrt(np.diag(cov))
    zb = coef[1] / se[1]
    p = float(stats.norm.sf(zb))
    return HeterogeneityTestResult(
        "blp", {"alpha": float(coef[0]), "beta": float(coef[1])},
        {"alpha": float(se[0]), "beta": float(se[1])}, p, p, float(zb),
        note="robust (HC1) standard errors; one-sided test of beta > 0",
        diagnostics={"dbar": dbar, "centered_cate_mean": float(np.mean(d - dbar)),
                     "regressor2_mean": float(r2.mean())})


def crossfit_cate(data: Dataset, fit_fn, k: int = 5, rng: RngStream | None = None,
                  folds=None) -> np.ndarray:
    """Out-of-fold Delta_hat: ``fit_fn(train_dataset, rng)`` must return a model
    with ``predict``."""
    rng = RngStream(0) if rng is None else rng
    folds = make_folds(data.n, k, rng.spawn(0), stratify_by=data.t) if folds is None else folds
    out = np.empty(data.n)
    for f in range(folds.k):
        tr, te = folds.train_test(f)
        out[te] = fit_fn(data.subset(tr), rng.spawn(1 + f)).predict(data.x[te])
    return out


def quantile_groups(score, k: int) -> np.ndarray:
    """Group labels 0..k-1 by increasing score; sizes differ by at most one."""
    order = np.argsort(score, kind="stable")
    g = np.empty(len(score), dtype=np.int64)
    for j, part in enumerate(np.array_split(order, k)):
        g[part] = j
    return g


def _adjacent_wald(gamma, cov):
    k = gamma.size
    c = np.zeros((k - 1, k))
    for j in range(k - 1):
        c[j, j], c[j, j + 1] = -1.0, 1.0
    diff = c @ gamma
    v = c @ cov @ c.T
    stat = float(diff @ np.linalg.pinv(v) @ diff)
    return stat, float(stats.chi2.sf(stat, k - 1))


def gate_split(data: Dataset, train_idx, test_idx, learner_spec: LearnerSpec, k: int,
               rng: RngStream, propensity_spec: LearnerSpec | None = None):
    """One GATE split.  Returns (gamma, se, stat, p) or None when a test-set
    group lacks an arm."""
    a, b = data.subset(train_idx), data.subset(test_idx)
    model = fit_t_learner(a, learner_spec, rng.spawn(0))
    d_b = model.predict(b.x)
    m0_b = model.components["m0"](b.x)
    if b.pi_known is not None:
        pi_b = b.pi_known
    else:
        if propensity_spec is None:
            raise ValueError("observational data: pass a propensity_spec")
        pm = fit_learner(propensity_spec, a.x, a.t.astype(float), rng=rng.spawn(1))
        pi_b = np.clip(pm.predict(b.x), 0.01, 0.99)
    g = quantile_groups(d_b, k)
    for j in range(k):
        arms = b.t[g == j]
        if arms.min() == arms.max():
            return None
    res_t = b.t - pi_b
    cols = [np.ones(b.n), m0_b] + [res_t * (g == j) for j in range(k)]
    coef, cov = ols_robust(np.column_stack(cols), b.y, 1.0 / (pi_b * (1.0 - pi_b)))
    gamma, vg = coef[2:], cov[2:, 2:]
    stat, p = _adjacent_wald(gamma, vg)
    return gamma, np.sqrt(np.diag(vg)), stat, p


def gate_test(data: Dataset, learner_spec: LearnerSpec, k: int = 5, n_splits: int = 10,
              rng: RngStream | None = None, propensity_spec: LearnerSpec | None = None,
              train_fraction: float = 0.5) -> HeterogeneityTestResult:
    """Sorted-group ATE homogeneity test with repeated sample splitting.

    Per split: a T-learner fitted on the training half gives Delta_hat and
    the prognostic score m0 on the test half; test rows are cut into k
    Delta_hat quantile groups and Y is regressed on (1, m0, (T - pi) 1{G_j})
    with weights 1/(pi (1 - pi)).  Homogeneity is a Wald chi-squared test on
    the k - 1 adjacent contrasts.  Estimates and p-values are medians over
    splits; with more than one split the p-value is doubled.

    Raises:
        ValueError: more than half of the splits were discarded.
    """
    if k < 2:
        raise ValueError("need k >= 2 groups")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    rng = RngStream(0) if rng is None else rng
    results, discarded = [], 0
    for s in range(n_splits):
        srng = rng.spawn(s)
        fa = make_folds(data.n, 2, srng.spawn(0), stratify_by=data.t) \
            if train_fraction == 0.5 else None
        if fa is not None:
            tr, te = fa.train_test(1)
        else:
            perm = srng.spawn(0).permutation(data.n)
            cut = int(round(train_fraction * data.n))
            tr, te = np.sort(perm[:cut]), np.sort(perm[cut:])
        out = gate_split(data, tr, te, learner_spec, k, srng.spawn(1), propensity_spec)
        if out is None:
            discarded += 1
        else:
            results.append(out)
    if discarded > 0.5 * n_splits:
        raise ValueError(f"{discarded} of {n_splits} splits discarded (a group lacked an arm)")
    gam = np.array([r[0] for r in results])
    ses = np.array([r[1] for r in results])
    pvals = np.array([r[3] for r in results])
    stat = float(np.median([r[2] for r in results]))
    p = float(np.median(pvals))
    p_adj = min(1.0, 2.0 * p) if len(results) > 1 else p
    g_med = np.median(gam, axis=0)
    inversions = int(np.sum(np.diff(g_med) < 0))
    names = [f"gate_{j + 1}" for j in range(k)]
    note = ("median over splits; p_value_adjusted doubles the median p-value"
            if len(results) > 1 else "single split")
    return HeterogeneityTestResult(
        "gate", dict(zip(names, map(float, g_med))),
        dict(zip(names, map(float, np.median(ses, axis=0)))), p, p_adj, stat,
        n_splits, discarded, note,
        {"inversions": inversions, "per_split_p": [float(v) for v in pvals],
         "contrast": "Wald chi-squared on adjacent group differences"})


@dataclass(frozen=True)
class ITEVarianceBound:
    """Lower bound |sd_y1 - sd_y0| on the SD of individual effects."""

    sd_y1: float
    sd_y0: float
    lower_bound: float
    rho: float = 1.0

    def sd_delta(self, rho: float) -> float:
        """SD of Y(1) - Y(0) at potential-outcome correlation ``rho``."""
        v = self.sd_y1 ** 2 + self.sd_y0 ** 2 - 2 * rho * self.sd_y1 * self.sd_y0
        return math.sqrt(max(v, 0.0))

    def to_dict(self) -> dict:
        return {"sd_y1": self.sd_y1, "sd_y0": self.sd_y0, "lower_bound": self.lower_bound,
                "rho": self.rho}


def ite_sd_bound(data: Dataset) -> ITEVarianceBound:
    """Per-arm outcome SDs and the rho = 1 bound L = |sd_y1 - sd_y0|."""
    y1, y0 = data.y[data.t == 1], data.y[data.t == 0]
    if y1.size < 2 or y0.size < 2:
        raise ValueError("each arm needs at least 2 rows")
    s1, s0 = float(y1.std(ddof=1)), float(y0.std(ddof=1))
    return ITEVarianceBound(s1, s0, abs(s1 - s0))
