"""Gradient boosting with CART base learners (squared or logistic loss)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import RngStream
from .forest import PackedTrees
from .tree import TreeModel, _as_matrix, fit_tree, presort

LOSSES = ("squared", "logistic")


def sigmoid(f):
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    pos = f >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-f[pos]))
    ef = np.exp(f[~pos])
    out[~pos] = ef / (1.0 + ef)
    return out


def logistic_loss(y, f):
    """Per-row negative log-likelihood  log(1 + e^f) - y f."""
    f = np.asarray(f, dtype=float)
    return np.logaddexp(0.0, f) - np.asarray(y, dtype=float) * f


def negative_gradient(y, f, loss: str):
    """Negative derivative of the per-row loss with respect to F.

    Squared loss 0.5 (y - F)^2 gives the residual; logistic gives y - sigmoid(F).
    """
    if loss == "squared":
        return np.asarray(y, dtype=float) - f
    return np.asarray(y, dtype=float) - sigmoid(f)


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: float = 5
    loss: str = "squared"
    subsample: float = 1.0
    colsample: float = 1.0


@dataclass
class BoostModel:
    """Additive model  F(x) = base_score + learning_rate * sum_j tree_j(x).

    ``predict`` returns the mean response (probability for logistic loss),
    ``predict_raw`` returns F.
    """

    base_score: float
    trees: list[TreeModel]
    learning_rate: float
    config: BoostConfig
    n_features: int
    _packed: PackedTrees = field(default=None, repr=False)

    def __post_init__(self):
        if self._packed is None:
            self._packed = PackedTrees.pack(self.trees)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def predict_raw(self, x, n_rounds: int | None = None) -> np.ndarray:
        x = _as_matrix(x, self.n_features)
        m = self.n_rounds if n_rounds is None else int(n_rounds)
        out = np.full(x.shape[0], self.base_score)
        if m > 0:
            self._packed.accumulate(x, np.full(m, self.learning_rate), out, 0, m)
        return out

    def staged_predict_raw(self, x, rounds) -> np.ndarray:
        """(len(rounds), n) raw predictions after each requested round count."""
        x = _as_matrix(x, self.n_features)
        rounds = [int(r) for r in rounds]
        out = np.empty((len(rounds), x.shape[0]))
        acc = np.full(x.shape[0], self.base_score)
        done = 0
        scale = np.full(self.n_rounds, self.learning_rate)
        for k in np.argsort(rounds, kind="stable"):
            r = rounds[k]
            if r > self.n_rounds:
                raise ValueError(f"model has only {self.n_rounds} rounds")
            if r > done:
                self._packed.accumulate(x, scale, acc, done, r)
                done = r
            out[k] = acc
        return out

    def _link(self, f):
        return sigmoid(f) if self.config.loss == "logistic" else f

    def predict(self, x, n_rounds: int | None = None) -> np.ndarray:
        return self._link(self.predict_raw(x, n_rounds))

    def staged_predict(self, x, rounds) -> np.ndarray:
        return self._link(self.staged_predict_raw(x, rounds))


def fit_boost(x, y, config: BoostConfig = BoostConfig(), rng: RngStream | None = None,
              weights=None) -> BoostModel:
    """Fit gradient boosting.

    Each round fits a least-squares tree to the negative gradient of the
    current model; leaves hold weighted mean gradients.  ``subsample`` draws
    a fraction of rows without replacement per round and ``colsample`` a
    fraction of columns per tree.

    Raises:
        ValueError: non-binary ``y`` with logistic loss, or bad config.
    """
    if config.loss not in LOSSES:
        raise ValueError(f"unknown loss {config.loss!r}; expected one of {LOSSES}")
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if config.loss == "logistic" and not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic loss requires y in {0, 1}")
    if not 0 < config.subsample <= 1 or not 0 < config.colsample <= 1:
        raise ValueError("subsample and colsample must lie in (0, 1]")
    stochastic = config.subsample < 1 or config.colsample < 1
    if stochastic and rng is None:
        raise ValueError("subsample/colsample need an rng")
    ybar = float(np.sum(w * y) / np.sum(w))
    if config.loss == "squared":
        base = ybar
    else:
        pbar = min(max(ybar, 1e-6), 1 - 1e-6)
        base = float(np.log(pbar / (1 - pbar)))
    f = np.full(n, base)
    sorted_all = presort(x)
    xt = np.ascontiguousarray(x.T)
    n_sub = max(1, int(round(config.subsample * n)))
    p_sub = max(1, int(round(config.colsample * p)))
    stream = rng.child() if stochastic else None
    trees = []
    for _ in range(config.n_rounds):
        g = negative_gradient(y, f, config.loss)
        counts = None
        feats = None
        if config.subsample < 1:
            counts = np.zeros(n)
            counts[stream.permutation(n)[:n_sub]] = 1.0
        if config.colsample < 1:
            feats = np.sort(stream.permutation(p)[:p_sub])
        tree = fit_tree(x, g, weights=w, max_depth=config.max_depth, min_leaf=config.min_leaf,
                        counts=counts, features=feats, presorted=sorted_all, xt=xt)
        trees.append(tree)
        if config.learning_rate != 0.0:
            f = f + config.learning_rate * tree.predict(x)
    return BoostModel(base, trees, config.learning_rate, config, p)
