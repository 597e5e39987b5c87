"""Exact greedy CART regression trees.

The grower works on per-feature presorted index arrays.  Each node owns a
contiguous segment of every array, and after a split the segments are
partitioned stably, so no re-sorting happens below the root.

Split rule: ``x[f] <= threshold`` goes left; thresholds sit at midpoints
between consecutive distinct values inside the node.  The gain is the drop
in weighted sum of squares.  Candidates are scanned in ascending
(feature, threshold) order and only a strictly better gain (beyond a tiny
relative tolerance) replaces the incumbent, which yields the lowest-feature,
smallest-threshold tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..rng import RngStream, _uniform

# relative tolerance used to treat two gains as tied
GAIN_RTOL = 1e-10


@njit(cache=True)
def _presort(x, rows, features):
    m = rows.shape[0]
    out = np.empty((x.shape[1], m), dtype=np.int64)
    for f in features:
        order = np.argsort(x[rows, f], kind="mergesort")
        for k in range(m):
            out[f, k] = rows[order[k]]
    return out


@njit(cache=True)
def _filter_presorted(presorted, keep, features):
    m = 0
    for i in range(keep.shape[0]):
        if keep[i]:
            m += 1
    out = np.empty((presorted.shape[0], m), dtype=np.int64)
    for f in features:
        k = 0
        for j in range(presorted.shape[1]):
            i = presorted[f, j]
            if keep[i]:
                out[f, k] = i
                k += 1
    return out


@njit(cache=True)
def _grow(xt, y, w, cnt, sorted_idx, features, max_depth, min_leaf, mtry, state):
    # xt is the feature-major (p, n) copy of x: scans over one feature stay in cache
    n_rows = sorted_idx.shape[1]
    nfeat = features.shape[0]
    cap = 2 * n_rows + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    wsum = np.zeros(cap)
    goes_left = np.zeros(xt.shape[1], dtype=np.bool_)
    buf = np.empty(n_rows, dtype=np.int64)
    cand = features.copy()
    chosen = np.empty(nfeat, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_s = np.empty(cap, dtype=np.int64)
    st_e = np.empty(cap, dtype=np.int64)
    st_d = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n_rows
    st_d[0] = 0
    top = 1
    nnode = 1
    f0 = features[0]
    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        depth = st_d[top]
        sw = 0.0
        swy = 0.0
        sc = 0.0
        for k in range(s, e):
            i = sorted_idx[f0, k]
            sw += w[i]
            swy += w[i] * y[i]
            sc += cnt[i]
        mean = swy / sw if sw > 0 else 0.0
        value[node] = mean
        wsum[node] = sw
        if depth >= max_depth or sc < 2 * min_leaf or sw <= 0:
            continue
        s_tot = 0.0
        ss = 0.0
        for k in range(s, e):
            i = sorted_idx[f0, k]
            r = y[i] - mean
            s_tot += w[i] * r
            ss += w[i] * r * r
        if ss <= 1e-24 * sw * (mean * mean + 1e-280):
            continue
        # feature subset for this node
        if mtry < nfeat:
            for j in range(nfeat):
                cand[j] = features[j]
            for j in range(mtry):
                r = j + np.int64(_uniform(state) * (nfeat - j))
                tmp = cand[j]
                cand[j] = cand[r]
                cand[r] = tmp
            for j in range(mtry):
                chosen[j] = cand[j]
            chosen[:mtry].sort()
            nch = mtry
        else:
            for j in range(nfeat):
                chosen[j] = features[j]
            nch = nfeat
        base = s_tot * s_tot / sw
        best = 1e-12 * ss
        tol = GAIN_RTOL * ss
        best_f = -1
        best_t = 0.0
        for jj in range(nch):
            f = chosen[jj]
            xf = xt[f]
            sf = sorted_idx[f]
            swl = 0.0
            sl = 0.0
            cl = 0.0
            for k in range(s, e - 1):
                i = sf[k]
                swl += w[i]
                sl += w[i] * (y[i] - mean)
                cl += cnt[i]
                xi = xf[i]
                xn = xf[sf[k + 1]]
                if xn <= xi:
                    continue
                if cl < min_leaf:
                    continue
                if sc - cl < min_leaf:
                    break
                swr = sw - swl
                if swl <= 0 or swr <= 0:
                    continue
                sr = s_tot - sl
                gain = (sl * sl * swr + sr * sr * swl) / (swl * swr) - base
                if gain > best + tol:
                    best = gain
                    best_f = f
                    t = 0.5 * (xi + xn)
                    if t >= xn:
                        t = xi
                    best_t = t
        if best_f < 0:
            continue
        nl = 0
        xb = xt[best_f]
        for k in range(s, e):
            i = sorted_idx[f0, k]
            gl = xb[i] <= best_t
            goes_left[i] = gl
            if gl:
                nl += 1
        for jj in range(nfeat):
            sf = sorted_idx[features[jj]]
            a = 0
            b = nl
            for k in range(s, e):
                i = sf[k]
                if goes_left[i]:
                    buf[a] = i
                    a += 1
                else:
                    buf[b] = i
                    b += 1
            for k in range(e - s):
                sf[s + k] = buf[k]
        feat[node] = best_f
        thr[node] = best_t
        lc = nnode
        rc = nnode + 1
        nnode += 2
        left[node] = lc
        right[node] = rc
        st_node[top] = rc
        st_s[top] = s + nl
        st_e[top] = e
        st_d[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_s[top] = s
        st_e[top] = s + nl
        st_d[top] = depth + 1
        top += 1
    return (feat[:nnode].copy(), thr[:nnode].copy(), left[:nnode].copy(),
            right[:nnode].copy(), value[:nnode].copy(), wsum[:nnode].copy())


@njit(cache=True)
def _apply(x, feat, thr, left, right):
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if x[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _depth(left, right):
    n = left.shape[0]
    d = np.zeros(n, dtype=np.int64)
    best = 0
    for node in range(n):
        if left[node] >= 0:
            d[left[node]] = d[node] + 1
            d[right[node]] = d[node] + 1
            if d[node] + 1 > best:
                best = d[node] + 1
    return best


@dataclass
class TreeModel:
    """Fitted regression tree in flat-array form.

    Node 0 is the root; ``feature[k] == -1`` marks a leaf.  ``left``/``right``
    hold child ids, ``value`` the leaf (or node) weighted means.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_weight: np.ndarray
    max_depth: int
    min_leaf: float
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        return int(_depth(self.left, self.right))

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def apply(self, x) -> np.ndarray:
        """Leaf id reached by every row of ``x``."""
        x = _as_matrix(x, self.n_features)
        return _apply(x, self.feature, self.threshold, self.left, self.right)

    def predict(self, x) -> np.ndarray:
        return self.value[self.apply(x)]

    def splits(self) -> list[tuple[int, float]]:
        return [(int(f), float(t)) for f, t in zip(self.feature, self.threshold) if f >= 0]

    def leaf_paths(self) -> dict[int, list[tuple[int, str, float]]]:
        """Root-to-leaf conditions ``(feature, '<=' | '>', threshold)`` per leaf."""
        out: dict[int, list] = {}
        stack = [(0, [])]
        while stack:
            node, path = stack.pop()
            f = int(self.feature[node])
            if f < 0:
                out[node] = path
                continue
            t = float(self.threshold[node])
            stack.append((int(self.right[node]), path + [(f, ">", t)]))
            stack.append((int(self.left[node]), path + [(f, "<=", t)]))
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


def _as_matrix(x, p: int | None = None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if p == 1 else x.reshape(1, -1)
    if p is not None and x.shape[0] > 0 and x.shape[1] != p:
        raise ValueError(f"expected {p} columns, got {x.shape[1]}")
    if p is not None and x.shape[0] == 0:
        x = x.reshape(0, p)
    return x


def fit_tree(x, y, weights=None, max_depth: int = 3, min_leaf: float = 1,
             counts=None, mtry: int | None = None, rng: RngStream | None = None,
             features=None, presorted=None, xt=None) -> TreeModel:
    """Grow a weighted least-squares regression tree.

    Args:
        x: (n, p) covariates.
        y: (n,) targets.
        weights: nonnegative case weights (default 1).
        max_depth: depth budget; 0 yields a single leaf.
        min_leaf: minimum number of rows per child, counted with multiplicity
            from ``counts``.
        counts: integer row multiplicities (bootstrap counts); rows with count
            0 are left out entirely.  Effective weight is ``counts * weights``.
        mtry: features examined per node (random subset); None means all.
        rng: stream for the mtry subsets.
        features: restrict splitting to these column indices.
        presorted: optional output of :func:`presort` for ``x`` over all rows,
            reused across many fits on the same design.
        xt: optional cached ``x.T`` in C order.

    Raises:
        ValueError: negative weights or too few rows.
    """
    x = _as_matrix(x)
    n, p = x.shape
    y = np.ascontiguousarray(y, dtype=float)
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if w.shape[0] != n or y.shape[0] != n:
        raise ValueError("x, y and weights must share the row count")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    c = np.ones(n) if counts is None else np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    if features is None:
        feats = np.arange(p, dtype=np.int64)
    else:
        feats = np.asarray(np.sort(np.asarray(features, dtype=np.int64)), dtype=np.int64)
    if feats.size == 0:
        raise ValueError("no features to split on")
    active = np.flatnonzero(c > 0)
    if active.size < 1:
        raise ValueError("no rows to fit")
    if c.sum() < 2 * min_leaf and max_depth > 0 and counts is None:
        raise ValueError(f"need n >= 2*min_leaf (n={n}, min_leaf={min_leaf})")
    if presorted is None:
        sidx = _presort(x, active.astype(np.int64), feats)
    elif active.size != n:
        sidx = _filter_presorted(presorted, c > 0, feats)
    else:
        sidx = presorted.copy()
    m = feats.size if mtry is None else int(min(max(mtry, 1), feats.size))
    state = rng.child().state if (rng is not None and m < feats.size) else np.zeros(4, np.uint64)
    if m < feats.size and rng is None:
        raise ValueError("mtry below the feature count needs an rng")
    xt = np.ascontiguousarray(x.T) if xt is None else xt
    feat, thr, left, right, value, nw = _grow(
        xt, y, w * c, c, sidx, feats, int(max_depth), float(min_leaf), m, state)
    return TreeModel(feat, thr, left, right, value, nw, int(max_depth), float(min_leaf), p)


def presort(x) -> np.ndarray:
    """Per-feature argsort of all rows, reusable through ``fit_tree(presorted=...)``."""
    x = _as_matrix(x)
    return _presort(x, np.arange(x.shape[0], dtype=np.int64), np.arange(x.shape[1], dtype=np.int64))
