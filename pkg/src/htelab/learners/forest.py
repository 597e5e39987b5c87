"""Random forests of CART trees with out-of-bag predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..rng import RngStream
from .tree import TreeModel, _as_matrix, fit_tree, presort


@njit(cache=True)
def _ensemble_sum(x, feat, thr, left, right, value, offsets, scale, out):
    """out[i] += sum_b scale[b] * tree_b(x_i) for packed trees."""
    for b in range(offsets.shape[0] - 1):
        o = offsets[b]
        sb = scale[b]
        for i in range(x.shape[0]):
            node = 0
            while feat[o + node] >= 0:
                if x[i, feat[o + node]] <= thr[o + node]:
                    node = left[o + node]
                else:
                    node = right[o + node]
            out[i] += sb * value[o + node]


@dataclass
class PackedTrees:
    """Trees concatenated into flat arrays for fast ensemble prediction."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, trees: list[TreeModel]) -> "PackedTrees":
        if not trees:
            e = np.zeros(0)
            return cls(e.astype(np.int64), e, e.astype(np.int64), e.astype(np.int64), e,
                       np.zeros(1, dtype=np.int64))
        sizes = [t.n_nodes for t in trees]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        return cls(np.concatenate([t.feature for t in trees]),
                   np.concatenate([t.threshold for t in trees]),
                   np.concatenate([t.left for t in trees]),
                   np.concatenate([t.right for t in trees]),
                   np.concatenate([t.value for t in trees]),
                   offsets)

    def accumulate(self, x: np.ndarray, scale: np.ndarray, out: np.ndarray, lo: int = 0,
                   hi: int | None = None) -> None:
        hi = self.offsets.shape[0] - 1 if hi is None else hi
        _ensemble_sum(x, self.feature, self.threshold, self.left, self.right, self.value,
                      self.offsets[lo:hi + 1], scale[lo:hi], out)


@dataclass
class ForestModel:
    """Bagged regression trees.

    Attributes:
        trees: fitted trees.
        inbag_counts: (n_trees, n) bootstrap multiplicities.
        oob_prediction: (n,) OOB mean prediction, NaN where every tree saw the row.
    """

    trees: list[TreeModel]
    n_trees: int
    mtry: int
    min_leaf: float
    bootstrap: bool
    inbag_counts: np.ndarray
    oob_prediction: np.ndarray
    n_features: int
    _packed: PackedTrees = field(default=None, repr=False)

    def __post_init__(self):
        if self._packed is None:
            self._packed = PackedTrees.pack(self.trees)

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x, self.n_features)
        out = np.zeros(x.shape[0])
        self._packed.accumulate(x, np.full(len(self.trees), 1.0 / len(self.trees)), out)
        return out


def predict_oob(model: ForestModel, i: int) -> float:
    """OOB prediction for training row ``i``.

    Raises:
        ValueError: every tree contains row ``i`` in its bootstrap sample.
    """
    v = model.oob_prediction[i]
    if np.isnan(v):
        raise ValueError(f"out-of-bag prediction undefined for row {i}: in-bag for all trees")
    return float(v)


def fit_forest(x, y, n_trees: int = 300, mtry: int | None = None, min_leaf: float = 5,
               rng: RngStream | None = None, bootstrap: bool = True, max_depth: int = 64,
               weights=None) -> ForestModel:
    """Random forest regression.

    Each tree draws its bootstrap sample and its per-node feature subsets from
    its own substream, so the fit depends only on ``rng``'s seed.

    Args:
        mtry: features tried per node; default max(1, p // 3).
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    mtry = max(1, p // 3) if mtry is None else int(mtry)
    if (bootstrap or mtry < p) and rng is None:
        raise ValueError("fit_forest needs an rng for bootstrap or mtry < p")
    base = rng.child() if rng is not None else None
    sorted_all = presort(x)
    xt = np.ascontiguousarray(x.T)
    trees = []
    counts_all = np.ones((n_trees, n), dtype=np.int64)
    for b in range(n_trees):
        sub = base.spawn(b) if base is not None else None
        if bootstrap:
            counts = np.bincount(sub.integers(n, n), minlength=n)
            counts_all[b] = counts
        else:
            counts = None
        trees.append(fit_tree(x, y, weights=weights, max_depth=max_depth, min_leaf=min_leaf,
                              counts=counts, mtry=mtry, rng=sub,
                              presorted=sorted_all, xt=xt))
    oob = np.full(n, np.nan)
    if bootstrap:
        sums = np.zeros(n)
        hits = np.zeros(n)
        for b, t in enumerate(trees):
            out_rows = np.flatnonzero(counts_all[b] == 0)
            if out_rows.size:
                sums[out_rows] += t.predict(x[out_rows])
                hits[out_rows] += 1
        ok = hits > 0
        oob[ok] = sums[ok] / hits[ok]
    return ForestModel(trees, n_trees, mtry, float(min_leaf), bootstrap, counts_all, oob, p)
