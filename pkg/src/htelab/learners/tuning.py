"""Learner specifications, a uniform fit entry point, and CV tuning."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from ..core import make_folds
from ..rng import RngStream
from .boost import BoostConfig, fit_boost, logistic_loss
from .elastic_net import fit_elastic_net, fit_path, lambda_path
from .forest import fit_forest
from .tree import fit_tree

KINDS = ("mean", "linear", "elastic_net", "tree", "forest", "boost")
SCORINGS = ("mse", "logloss")


@dataclass(frozen=True)
class LearnerSpec:
    """A base learner plus an optional hyperparameter grid.

    Attributes:
        kind: one of ``KINDS``.
        params: fixed hyperparameters.
        grid: name -> list of candidate values; the Cartesian product is
            searched in insertion order.  For ``elastic_net`` the value
            ``"path"`` for ``lam`` expands to the data-driven lambda path.
        cv_folds: folds used by :func:`tune`.
        scoring: ``"mse"`` (regression) or ``"logloss"`` (binary response).
        chosen: grid point picked by :func:`tune`; None until tuned.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    grid: Mapping[str, Any] | None = None
    cv_folds: int = 5
    scoring: str = "mse"
    chosen: Mapping[str, Any] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        if self.scoring not in SCORINGS:
            raise ValueError(f"unknown scoring {self.scoring!r}")

    @property
    def binary(self) -> bool:
        return self.scoring == "logloss"

    @property
    def needs_tuning(self) -> bool:
        return bool(self.grid) and self.chosen is None

    def resolved_params(self) -> dict:
        out = dict(self.params)
        if self.chosen:
            out.update(self.chosen)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(dict(self.params)),
                "grid": _jsonable(dict(self.grid)) if self.grid else None,
                "cv_folds": self.cv_folds, "scoring": self.scoring,
                "chosen": _jsonable(dict(self.chosen)) if self.chosen else None}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LearnerSpec":
        return cls(kind=d["kind"], params=dict(d.get("params") or {}),
                   grid=dict(d["grid"]) if d.get("grid") else None,
                   cv_folds=int(d.get("cv_folds", 5)), scoring=d.get("scoring", "mse"),
                   chosen=dict(d["chosen"]) if d.get("chosen") else None)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


class MeanModel:
    def __init__(self, value: float, binary: bool = False):
        self.value = float(value)
        self.binary = binary

    def predict(self, x):
        return np.full(np.asarray(x).shape[0], self.value)


class LinearModel:
    """Weighted least squares (or a constant fallback when rank deficient)."""

    def __init__(self, intercept: float, coef: np.ndarray):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.coef.shape[0])
        return self.intercept + x @ self.coef


def fit_linear(x, y, weights=None) -> LinearModel:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    design = np.column_stack([np.ones(len(y)), x]) * sw[:, None]
    sol, *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    return LinearModel(sol[0], sol[1:])


def _boost_config(params: Mapping, binary: bool) -> BoostConfig:
    keys = BoostConfig.__dataclass_fields__.keys()
    cfg = {k: params[k] for k in keys if k in params}
    cfg["loss"] = "logistic" if binary else "squared"
    return BoostConfig(**cfg)


def fit_learner(spec: LearnerSpec, x, y, weights=None, rng: RngStream | None = None):
    """Fit ``spec`` (tuning first when it has an untuned grid).

    Returns an object with ``predict(x)``; for ``logloss`` specs the
    prediction is a probability.
    """
    if spec.needs_tuning:
        spec = tune(spec, x, y, rng.child() if rng is not None else RngStream(0), weights)
    return _fit_fixed(spec.kind, spec.resolved_params(), spec.binary, x, y, weights, rng)


def _fit_fixed(kind, params, binary, x, y, weights, rng):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    if kind == "mean":
        w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
        return MeanModel(np.sum(w * y) / np.sum(w), binary)
    if kind == "linear":
        if binary:
            return fit_elastic_net(x, y, weights, lam=0.0, family="binomial",
                                   standardize=params.get("standardize", True))
        return fit_linear(x, y, weights)
    if kind == "elastic_net":
        lam = params.get("lam", 0.0)
        if isinstance(lam, str):
            raise ValueError("elastic-net lambda 'path' must be resolved by tune()")
        return fit_elastic_net(x, y, weights, lam=float(lam), alpha=float(params.get("alpha", 1.0)),
                               family="binomial" if binary else "gaussian",
                               tol=float(params.get("tol", 1e-7)),
                               standardize=bool(params.get("standardize", True)))
    if kind == "tree":
        return fit_tree(x, y, weights, max_depth=int(params.get("max_depth", 3)),
                        min_leaf=params.get("min_leaf", 5))
    if kind == "forest":
        return fit_forest(x, y, n_trees=int(params.get("n_trees", 300)), mtry=params.get("mtry"),
                          min_leaf=params.get("min_leaf", 5), rng=rng.child() if rng else RngStream(0),
                          weights=weights)
    if kind == "boost":
        return fit_boost(x, y, _boost_config(params, binary),
                         rng=rng.child() if rng else RngStream(0), weights=weights)
    raise ValueError(kind)


def _loss(y, pred, w, binary):
    if binary:
        p = np.clip(pred, 1e-12, 1 - 1e-12)
        f = np.log(p / (1 - p))
        return w * logistic_loss(y, f)
    return w * (y - pred) ** 2


def _expand_grid(spec: LearnerSpec, x, y, weights) -> list[dict]:
    grid = {k: (list(v) if not isinstance(v, str) else v) for k, v in spec.grid.items()}
    if spec.kind == "elastic_net" and grid.get("lam") == "path":
        alpha = spec.params.get("alpha", 1.0)
        alphas = grid.get("alpha", [alpha])
        points = []
        others = {k: v for k, v in grid.items() if k not in ("lam", "alpha")}
        for a in alphas:
            lams = lambda_path(x, y, weights, alpha=a,
                               family="binomial" if spec.binary else "gaussian",
                               n_lambda=int(spec.params.get("n_lambda", 50)))
            for combo in itertools.product(*others.values()):
                for lam in lams:
                    points.append({"alpha": a, **dict(zip(others, combo)), "lam": float(lam)})
        return points
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*grid.values())]


def tune(spec: LearnerSpec, x, y, rng: RngStream, weights=None) -> LearnerSpec:
    """Choose the grid point with the smallest cross-validated loss.

    The loss is pooled over held-out rows (weighted when ``weights`` is
    given).  Ties go to the earliest grid point.  Boosting evaluates every
    ``n_rounds`` candidate from one fit through staged predictions, and the
    elastic net fits each fold's lambda path with warm starts; lambdas beyond
    a non-converging point of a fold's path get infinite loss.

    Raises:
        ValueError: empty grid; fold errors propagate.
    """
    if not spec.grid:
        raise ValueError("tune() needs a non-empty grid")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    points = _expand_grid(spec, x, y, weights)
    if not points:
        raise ValueError("tune() needs a non-empty grid")
    if len(points) == 1:
        return replace(spec, chosen=points[0])
    folds = make_folds(n, spec.cv_folds, rng.child(), stratify_by=y if spec.binary else None)
    total = np.zeros(len(points))
    base = {k: v for k, v in spec.params.items()}
    for k in range(folds.k):
        tr, te = folds.train_test(k)
        fold_rng = rng.spawn(k + 1)
        total += _fold_losses(spec, base, points, x[tr], y[tr], w[tr], x[te], y[te], w[te],
                              fold_rng, weights is not None)
    best = int(np.argmin(total))  # first minimum = earliest grid point
    return replace(spec, chosen=points[best])


def _fold_losses(spec, base, points, xtr, ytr, wtr, xte, yte, wte, rng, weighted):
    wfit = wtr if weighted else None
    out = np.empty(len(points))
    if spec.kind == "boost" and any("n_rounds" in p for p in points):
        groups: dict[tuple, list[int]] = {}
        for i, p in enumerate(points):
            key = tuple(sorted((k, v) for k, v in p.items() if k != "n_rounds"))
            groups.setdefault(key, []).append(i)
        for key, idx in groups.items():
            rounds = [int(points[i].get("n_rounds", base.get("n_rounds", 100))) for i in idx]
            params = {**base, **dict(key), "n_rounds": max(rounds)}
            model = fit_boost(xtr, ytr, _boost_config(params, spec.binary), rng=rng.child(),
                              weights=wfit)
            staged = model.staged_predict(xte, rounds)
            for j, i in enumerate(idx):
                out[i] = _loss(yte, staged[j], wte, spec.binary).sum()
        return out
    if spec.kind == "elastic_net":
        groups = {}
        for i, p in enumerate(points):
            key = tuple(sorted((k, v) for k, v in p.items() if k != "lam"))
            groups.setdefault(key, []).append(i)
        for key, idx in groups.items():
            params = {**base, **dict(key)}
            order = sorted(idx, key=lambda i: -points[i].get("lam", 0.0))
            models = fit_path(xtr, ytr, [points[i]["lam"] for i in order], wfit,
                              alpha=float(params.get("alpha", 1.0)),
                              family="binomial" if spec.binary else "gaussian",
                              standardize=bool(params.get("standardize", True)),
                              tol=float(params.get("tol", 1e-7)), truncate=True)
            out[idx] = np.inf   # lambdas past a truncated path are never chosen
            for i, m in zip(order, models):
                out[i] = _loss(yte, m.predict(xte), wte, spec.binary).sum()
        return out
    for i, p in enumerate(points):
        model = _fit_fixed(spec.kind, {**base, **p}, spec.binary, xtr, ytr, wfit, rng.spawn(i))
        out[i] = _loss(yte, model.predict(xte), wte, spec.binary).sum()
    return out
