"""Cross-fitted nuisance functions: m0, m1, pooled m, main effect h, propensity."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset, FoldAssignment, make_folds
from .learners import LearnerSpec, fit_learner, tune
from .rng import RngStream

ROLES = ("m0", "m1", "m", "pi")


class NuisanceError(ValueError):
    pass


@dataclass
class NuisanceFit:
    """Out-of-fold nuisance predictions plus whole-sample refits.

    ``oof_*[i]`` comes from a model that never saw the fold containing row i.
    Roles that were not requested hold NaN.  ``predictors`` map a role to a
    callable ``x -> values`` used for new covariates.

    Attributes:
        eps: propensity clipping level; oof_pi and predict_pi lie in [eps, 1-eps].
        specs: tuned learner specs per role (serialisable provenance).
    """

    oof_m0: np.ndarray
    oof_m1: np.ndarray
    oof_m: np.ndarray
    oof_pi: np.ndarray
    folds: FoldAssignment | None
    predictors: dict[str, Callable] = field(default_factory=dict)
    eps: float = 0.01
    specs: dict[str, dict] = field(default_factory=dict)
    pi_source: str = "estimated"

    @property
    def oof_h(self) -> np.ndarray:
        return 0.5 * (self.oof_m0 + self.oof_m1)

    def oof_m_t(self, t) -> np.ndarray:
        """m(T_i, X_i) from the arm-wise out-of-fold predictions."""
        t = np.asarray(t)
        return np.where(t == 1, self.oof_m1, self.oof_m0)

    def _get(self, role: str) -> Callable:
        if role not in self.predictors:
            raise NuisanceError(f"no fitted predictor for {role}")
        return self.predictors[role]

    def predict_m0(self, x) -> np.ndarray:
        return self._get("m0")(x)

    def predict_m1(self, x) -> np.ndarray:
        return self._get("m1")(x)

    def predict_m(self, x) -> np.ndarray:
        return self._get("m")(x)

    def predict_pi(self, x) -> np.ndarray:
        return np.clip(self._get("pi")(x), self.eps, 1 - self.eps)

    def h(self, x) -> np.ndarray:
        """Main effect  h(x) = (m0(x) + m1(x)) / 2."""
        return 0.5 * (self.predict_m0(x) + self.predict_m1(x))

    @classmethod
    def oracle(cls, data: Dataset, m0: Callable, m1: Callable, pi: Callable,
               m: Callable | None = None, eps: float = 0.01) -> "NuisanceFit":
        """Inject true nuisance functions (simulation validation)."""
        x = data.x
        if m is None:
            def m(z):
                p = np.clip(pi(z), eps, 1 - eps)
                return p * m1(z) + (1 - p) * m0(z)
        return cls(m0(x).astype(float), m1(x).astype(float), m(x).astype(float),
                   np.clip(pi(x), eps, 1 - eps), None,
                   {"m0": m0, "m1": m1, "m": m, "pi": pi}, eps, {}, "oracle")


def _const(v: float) -> Callable:
    return lambda x: np.full(np.asarray(x).shape[0], v)


def fit_nuisance(data: Dataset, outcome_spec: LearnerSpec, propensity_spec: LearnerSpec | None,
                 k: int = 5, rng: RngStream | None = None, eps: float = 0.01,
                 roles=ROLES, pooled_spec: LearnerSpec | None = None,
                 folds: FoldAssignment | None = None, refit: bool = True,
                 role_specs=None) -> NuisanceFit:
    """Cross-fit the requested nuisance roles.

    Arm models m0/m1 are fitted on the arm subsets of each training fold; the
    pooled m omits the treatment column.  When ``data.pi_known`` is present the
    propensity model is skipped and the known values are passed through (then
    clipped).  ``role_specs`` maps a role name to a spec that overrides the
    defaults for that role.  A spec with a grid is tuned once on the full sample (per role)
    and the chosen hyperparameters are reused in every fold.

    Raises:
        NuisanceError: a training fold lacks one arm.
    """
    rng = RngStream(0) if rng is None else rng
    n = data.n
    x, y, t = data.x, data.y, data.t
    roles = tuple(roles)
    if folds is None:
        folds = make_folds(n, k, rng.spawn(1), stratify_by=t)
    pooled_spec = outcome_spec if pooled_spec is None else pooled_spec
    spec_for = {"m0": outcome_spec, "m1": outcome_spec, "m": pooled_spec, "pi": propensity_spec}
    spec_for.update(role_specs or {})
    rows_for = {"m0": t == 0, "m1": t == 1, "m": np.ones(n, bool), "pi": np.ones(n, bool)}
    target_for = {"m0": y, "m1": y, "m": y, "pi": t.astype(float)}
    known_pi = data.pi_known is not None
    todo = [r for r in roles if not (r == "pi" and known_pi)]
    if "pi" in todo and spec_for["pi"] is None:
        raise NuisanceError("propensity spec required when no known propensity is supplied")

    tuned: dict[str, LearnerSpec] = {}
    for j, role in enumerate(todo):
        spec = spec_for[role]
        rows = rows_for[role]
        if spec.needs_tuning:
            spec = tune(spec, x[rows], target_for[role][rows], rng.spawn(100 + j))
        tuned[role] = spec

    oof = {r: np.full(n, np.nan) for r in ROLES}
    for f in range(folds.k):
        tr, te = folds.train_test(f)
        for j, role in enumerate(todo):
            sel = tr[rows_for[role][tr]]
            if role in ("m0", "m1") and sel.size == 0:
                raise NuisanceError(
                    f"training fold {f} has no rows with T={role[1]}; use arm-stratified folds")
            if role == "pi" and np.unique(t[sel]).size < 2:
                raise NuisanceError(f"training fold {f} lacks one arm; use arm-stratified folds")
            model = fit_learner(tuned[role], x[sel], target_for[role][sel],
                                rng=rng.spawn(1000 * (f + 1) + j))
            oof[role][te] = model.predict(x[te])

    predictors: dict[str, Callable] = {}
    if refit:
        for j, role in enumerate(todo):
            rows = rows_for[role]
            model = fit_learner(tuned[role], x[rows], target_for[role][rows],
                                rng=rng.spawn(500 + j))
            predictors[role] = model.predict
    pi_source = "estimated"
    if known_pi:
        oof["pi"] = np.asarray(data.pi_known, dtype=float).copy()
        pi_source = "known"
        uniq = np.unique(data.pi_known)
        if uniq.size == 1:
            predictors["pi"] = _const(float(uniq[0]))
    oof["pi"] = np.clip(oof["pi"], eps, 1 - eps)
    return NuisanceFit(oof["m0"], oof["m1"], oof["m"], oof["pi"], folds, predictors, eps,
                       {r: s.to_dict() for r, s in tuned.items()}, pi_source)


# ---------------------------------------------------------------- overlap


@dataclass(frozen=True)
class OverlapReport:
    quantiles: dict[str, list[float]]
    quantile_levels: list[float]
    outside_fraction: dict[str, float]
    histogram_edges: list[float]
    histogram_counts: dict[str, list[int]]
    poor_overlap: bool
    bounds: tuple[float, float] = (0.05, 0.95)
    threshold: float = 0.10

    def to_dict(self) -> dict:
        return {"quantile_levels": self.quantile_levels, "quantiles": self.quantiles,
                "outside_fraction": self.outside_fraction, "bounds": list(self.bounds),
                "threshold": self.threshold, "poor_overlap": self.poor_overlap,
                "histogram_edges": self.histogram_edges,
                "histogram_counts": self.histogram_counts}


def overlap_report(fit_or_pi, t, bins: int = 20, bounds=(0.05, 0.95),
                   threshold: float = 0.10) -> OverlapReport:
    """Propensity overlap summary by arm.

    Args:
        fit_or_pi: a NuisanceFit (its ``oof_pi`` is used) or a propensity vector.
        t: treatment vector.

    The flag is raised when more than ``threshold`` of either arm has a
    propensity outside ``bounds``.
    """
    pi = fit_or_pi.oof_pi if isinstance(fit_or_pi, NuisanceFit) else np.asarray(fit_or_pi, float)
    t = np.asarray(t)
    levels = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0]
    edges = np.linspace(0.0, 1.0, bins + 1)
    q, out, hist = {}, {}, {}
    lo, hi = bounds
    for name, arm in (("control", 0), ("treated", 1)):
        p = pi[t == arm]
        q[name] = [float(v) for v in np.quantile(p, levels)] if p.size else []
        out[name] = float(np.mean((p < lo) | (p > hi))) if p.size else 0.0
        hist[name] = [int(c) for c in np.histogram(p, bins=edges)[0]]
    out["all"] = float(np.mean((pi < lo) | (pi > hi)))
    flag = out["control"] > threshold or out["treated"] > threshold
    return OverlapReport(q, levels, out, [float(e) for e in edges], hist, bool(flag),
                         tuple(bounds), threshold)

