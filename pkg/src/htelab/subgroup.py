"""Subgroup identification and optimism-corrected subgroup effects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cate import CateModel
from .core import Dataset, make_folds
from .learners import fit_tree
from .rng import RngStream

REPRESENTATIONS = ("threshold_on_cate", "tree_leaves", "prim_boxes", "cutoff_rule",
                   "whole_population")
EFFECTS = ("difference", "aipw")

# A signature is a disjunction of conjunctions; each condition is
# (feature index, op, value) with op in {"<=", ">", ">="}.
Condition = tuple


def _eval_conjunction(conds, x) -> np.ndarray:
    keep = np.ones(x.shape[0], dtype=bool)
    for f, op, v in conds:
        col = x[:, f]
        if op == "<=":
            keep &= col <= v
        elif op == ">":
            keep &= col > v
        elif op == ">=":
            keep &= col >= v
        else:
            raise ValueError(f"unknown operator {op!r}")
    return keep


@dataclass
class SubgroupRule:
    """Subgroup membership S(x) with an optional axis-aligned signature."""

    representation: str
    membership: Callable[[np.ndarray], np.ndarray]
    p: int
    signature: list | None = None
    feature_names: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.p:
            raise ValueError(f"expected {self.p} covariates, got {x.shape[1]}")
        return np.asarray(self.membership(x), dtype=bool)

    def evaluate_signature(self, x) -> np.ndarray:
        """Membership computed from the signature alone."""
        if self.signature is None:
            raise ValueError("rule has no signature")
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[0], dtype=bool)
        for conj in self.signature:
            out |= _eval_conjunction(conj, x)
        return out

    def signature_text(self) -> str:
        if self.signature is None:
            return ""
        if not self.signature:
            return "(empty)"
        names = self.feature_names or tuple(f"x{j + 1}" for j in range(self.p))
        parts = []
        for conj in self.signature:
            if not conj:
                parts.append("(all)")
                continue
            parts.append("(" + " AND ".join(f"{names[f]} {op} {v:.6g}" for f, op, v in conj) + ")")
        return " OR ".join(parts)

    def to_dict(self) -> dict:
        return {"representation": self.representation, "signature": self.signature_text(),
                "conditions": [[[int(f), op, float(v)] for f, op, v in c]
                               for c in (self.signature or [])],
                "info": {k: v for k, v in self.info.items() if not k.startswith("_")}}


def whole_population_rule(p: int) -> SubgroupRule:
    return SubgroupRule("whole_population", lambda x: np.ones(x.shape[0], bool), p, [[]])


def threshold_rule(model: CateModel, delta: float = 0.0) -> SubgroupRule:
    """S_hat = {x: Delta_hat(x) > delta}."""
    return SubgroupRule("threshold_on_cate", lambda x: model.predict(x) > delta, model.p,
                        info={"method": model.method, "delta": float(delta)})


def cate_threshold_search(outcome_spec, delta: float = 0.0) -> "SearchFn":
    """Search handle: fit a T-learner with ``outcome_spec`` and keep Delta_hat > delta."""
    from .cate import fit_t_learner

    def search(data: Dataset, rng: RngStream) -> SubgroupRule:
        return threshold_rule(fit_t_learner(data, outcome_spec, rng), delta)

    return search


def cutoff_search(quantiles=(0.2, 0.4, 0.6, 0.8)) -> "SearchFn":
    """Search handle: exhaustive single-covariate cutoff rules.

    Candidates are {x_j <= c} and {x_j > c} for every covariate j and every
    cutoff c at the given sample quantiles; the candidate with the largest
    treated-minus-control mean difference is returned.  Ties go to the first
    candidate in (quantile, side, feature) order.
    """
    qs = np.asarray(quantiles, dtype=float)

    def search(data: Dataset, rng: RngStream | None = None) -> SubgroupRule:
        cuts = np.quantile(data.x, qs, axis=0)
        blocks = []
        for qi in range(qs.size):
            le = data.x <= cuts[qi]
            blocks += [le.T, ~le.T]
        m = np.concatenate(blocks).astype(float)
        t = data.t.astype(float)
        n1, n0 = m @ t, m @ (1.0 - t)
        with np.errstate(invalid="ignore", divide="ignore"):
            eff = (m @ (data.y * t)) / n1 - (m @ (data.y * (1.0 - t))) / n0
        eff[(n1 == 0) | (n0 == 0)] = -np.inf
        k = int(np.argmax(eff))
        blk, j = divmod(k, data.p)
        qi, side = divmod(blk, 2)
        c = float(cuts[qi, j])
        op = ">" if side else "<="
        return SubgroupRule("cutoff_rule", lambda x: _eval_conjunction([(j, op, c)], x), data.p,
                            [[(j, op, c)]], data.feature_names,
                            info={"effect": float(eff[k]), "n_candidates": int(eff.size)})

    return search


# ---------------------------------------------------------------- virtual twins


def vt_subgroups(data: Dataset, cate, tree_depth: int = 2, min_leaf: int = 20,
                 threshold: float = 0.0) -> SubgroupRule:
    """Virtual-twins step 2: regression tree of Delta_hat on X; the subgroup is
    the union of leaves whose mean Delta_hat exceeds ``threshold``.

    Args:
        cate: CateModel (its train_prediction or predictions on data.x are
            used) or a vector of Delta_hat values.
    """
    if tree_depth not in (1, 2):
        raise ValueError("tree_depth must be 1 or 2")
    if isinstance(cate, CateModel):
        d = cate.train_prediction if cate.train_prediction is not None else cate.predict(data.x)
    else:
        d = np.asarray(cate, dtype=float)
    tree = fit_tree(data.x, d, max_depth=tree_depth, min_leaf=min_leaf)
    paths = tree.leaf_paths()
    chosen = sorted(leaf for leaf in paths if tree.value[leaf] > threshold)
    chosen_arr = np.array(chosen, dtype=np.int64)
    signature = [[(int(f), op, float(t)) for f, op, t in paths[leaf]] for leaf in chosen]

    def member(x):
        return np.isin(tree.apply(x), chosen_arr)

    return SubgroupRule("tree_leaves", member, data.p, signature, data.feature_names,
                        info={"depth": tree.depth, "leaves": [int(c) for c in chosen],
                              "threshold": float(threshold)})


def interaction_stat_binary(counts) -> float:
    """Interaction-tree statistic for a binary outcome.

    Args:
        counts: array [node (L, R)][arm (0, 1)][outcome (0, 1)].

    Returns:
        G = ((pL1 - pL0) - (pR1 - pR0))^2 / (pbar (1 - pbar) sum 1/n_cell).
    """
    c = np.asarray(counts, dtype=float)
    if c.shape != (2, 2, 2) or np.any(c < 0):
        raise ValueError("counts must be a nonnegative 2x2x2 table")
    n = c.sum(axis=2)
    if np.any(n < 1):
        raise ValueError("every node x arm cell needs at least one unit")
    p = c[:, :, 1] / n
    pbar = c[:, :, 1].sum() / n.sum()
    if pbar <= 0 or pbar >= 1:
        raise ValueError("pooled proportion is 0 or 1; statistic undefined")
    diff = (p[0, 1] - p[0, 0]) - (p[1, 1] - p[1, 0])
    return float(diff ** 2 / (pbar * (1 - pbar) * np.sum(1.0 / n)))


# ---------------------------------------------------------------- PRIM


@dataclass
class PrimBox:
    """Box lower <= x <= upper (inclusive, possibly infinite)."""

    lower: np.ndarray
    upper: np.ndarray
    support: float
    mean_target: float
    trajectory: list = field(default_factory=list, repr=False)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def conditions(self) -> list:
        out = []
        for j in range(self.lower.size):
            if np.isfinite(self.lower[j]):
                out.append((j, ">=", float(self.lower[j])))
            if np.isfinite(self.upper[j]):
                out.append((j, "<=", float(self.upper[j])))
        return out

    def to_dict(self) -> dict:
        return {"lower": [float(v) for v in self.lower], "upper": [float(v) for v in self.upper],
                "support": self.support, "mean_target": self.mean_target}


def _in_box(x, lo, hi):
    return np.all((x >= lo) & (x <= hi), axis=1)


def _peel(x, target, rows, alpha, min_count):
    p = x.shape[1]
    lo = np.full(p, -np.inf)
    hi = np.full(p, np.inf)
    box = rows.copy()
    traj = [(lo.copy(), hi.copy())]
    cur = target[box].mean()
    while True:
        best = None
        for j in range(p):
            col = x[box, j]
            for side in (0, 1):
                q = np.quantile(col, alpha if side == 0 else 1 - alpha)
                strip = (x[:, j] < q) if side == 0 else (x[:, j] > q)
                new = box & ~strip
                k = new.sum()
                if k == box.sum() or k < min_count:
                    continue
                m = target[new].mean()
                if best is None or m > best[0]:
                    best = (m, j, side, q, new)
        if best is None or best[0] <= cur:
            break
        cur, j, side, q, box = best[0], best[1], best[2], best[3], best[4]
        if side == 0:
            lo[j] = q
        else:
            hi[j] = q
        traj.append((lo.copy(), hi.copy()))
    return lo, hi, box, cur, traj


def _paste(x, target, rows, lo, hi, alpha):
    box = rows & _in_box(x, lo, hi)
    cur = target[box].mean()
    while True:
        best = None
        n_add = max(1, int(math.ceil(alpha * box.sum())))
        for j in range(x.shape[1]):
            others = np.ones(x.shape[0], dtype=bool)
            for k in range(x.shape[1]):
                if k != j:
                    others &= (x[:, k] >= lo[k]) & (x[:, k] <= hi[k])
            for side in (0, 1):
                cand = rows & others & ((x[:, j] < lo[j]) if side == 0 else (x[:, j] > hi[j]))
                if not cand.any():
                    continue
                vals = np.sort(x[cand, j])
                edge = vals[-min(n_add, vals.size)] if side == 0 else vals[min(n_add, vals.size) - 1]
                nlo, nhi = lo.copy(), hi.copy()
                if side == 0:
                    nlo[j] = edge
                else:
                    nhi[j] = edge
                new = rows & _in_box(x, nlo, nhi)
                m = target[new].mean()
                if best is None or m > best[0]:
                    best = (m, nlo, nhi, new)
        if best is None or best[0] <= cur:
            break
        cur, lo, hi, box = best
    return lo, hi, box, cur


def prim(x, target, alpha: float = 0.05, min_support: float = 0.1, max_boxes: int = 3,
         feature_names: tuple = ()) -> SubgroupRule:
    """PRIM bump hunting on per-row targets (e.g. AIPW scores or Delta_hat).

    Each box is grown by peeling the alpha-quantile strip (lower or upper
    end of any feature) that maximises the mean target of what remains,
    while the mean strictly increases and the support stays at least
    ``min_support``; pasting then re-expands while the mean strictly
    increases.  Boxes are found sequentially on the rows not yet covered.
    The subgroup is the union of boxes with positive mean target.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("PRIM needs a non-empty covariate matrix")
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    if not 0 < min_support < 1:
        raise ValueError("min_support must lie in (0, 1)")
    n = x.shape[0]
    min_count = max(1, int(math.ceil(min_support * n)))
    remaining = np.ones(n, dtype=bool)
    boxes = []
    for _ in range(max_boxes):
        if remaining.sum() < min_count:
            break
        lo, hi, box, _, traj = _peel(x, target, remaining, alpha, min_count)
        lo, hi, box, mean = _paste(x, target, remaining, lo, hi, alpha)
        boxes.append(PrimBox(lo, hi, float(box.sum() / n), float(mean), traj))
        remaining &= ~box
        if not np.isfinite(lo).any() and not np.isfinite(hi).any():
            break  # the full remaining space; nothing left to find
    selected = [b for b in boxes if b.mean_target > 0]

    def member(z):
        out = np.zeros(z.shape[0], dtype=bool)
        for b in selected:
            out |= b.contains(z)
        return out

    return SubgroupRule("prim_boxes", member, x.shape[1], [b.conditions() for b in selected],
                        tuple(feature_names),
                        info={"boxes": [b.to_dict() for b in boxes],
                              "selected": [i for i, b in enumerate(boxes) if b.mean_target > 0],
                              "alpha": alpha, "min_support": min_support,
                              "max_boxes": max_boxes, "_boxes": boxes})


# ---------------------------------------------------------------- effects


def subgroup_effect(data: Dataset, members, effect: str = "difference", scores=None):
    """Effect within the rows flagged by ``members``.

    ``difference`` is the treated-minus-control mean; ``aipw`` is the mean of
    the supplied per-row scores.  Returns None when undefined (no members or
    a missing arm).
    """
    members = np.asarray(members, dtype=bool)
    if effect == "aipw":
        if scores is None:
            raise ValueError("aipw effect needs per-row scores")
        return float(np.mean(np.asarray(scores)[members])) if members.any() else None
    if effect != "difference":
        raise ValueError(f"effect must be one of {EFFECTS}")
    t1 = members & (data.t == 1)
    t0 = members & (data.t == 0)
    if not t1.any() or not t0.any():
        return None
    return float(data.y[t1].mean() - data.y[t0].mean())


@dataclass
class SubgroupEffects:
    """Naive and optimism-corrected subgroup effects.

    Attributes:
        n_resamples: resamples (B) or CV repeats attempted.
        n_skipped: resamples that contributed no estimate.
        theta_k / selected: per-candidate estimates and argmax (Guo-He).
    """

    naive: float
    corrected: float
    method: str
    n_resamples: int
    n_skipped: int = 0
    effect: str = "difference"
    theta_k: list | None = None
    selected: int | None = None
    lower_limit: float | None = None
    flags: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"naive": self.naive, "corrected": self.corrected, "method": self.method,
                "n_resamples": self.n_resamples, "n_skipped": self.n_skipped,
                "effect": self.effect, "theta_k": self.theta_k, "selected": self.selected,
                "lower_limit": self.lower_limit, "flags": self.flags,
                "warnings": self.warnings, "details": self.details}


SearchFn = Callable[[Dataset, RngStream], SubgroupRule]


def bootstrap_bias_correction(data: Dataset, search: SearchFn, B: int = 100,
                              rng: RngStream | None = None, effect: str = "difference",
                              scores=None) -> SubgroupEffects:
    """Bootstrap optimism correction for the effect in a data-selected subgroup.

    For each bootstrap sample the search is rerun; the optimism estimate is
    the in-bootstrap effect in the found subgroup minus its effect on the
    out-of-bag rows.  corrected = naive - mean optimism.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = RngStream(0) if rng is None else rng
    rule = search(data, rng.spawn(0))
    naive = subgroup_effect(data, rule.contains(data.x), effect, scores)
    if naive is None:
        raise ValueError("selected subgroup is empty or lacks an arm; effect undefined")
    biases, skipped = [], 0
    for b in range(B):
        brng = rng.spawn(1 + b)
        idx = brng.integers(data.n, data.n)
        oob = np.ones(data.n, dtype=bool)
        oob[idx] = False
        boot = data.subset(idx)
        try:
            rb = search(boot, brng.child())
        except Exception:  # noqa: BLE001 - a failed replicate is skipped and counted
            skipped += 1
            continue
        s_in = scores[idx] if scores is not None else None
        e_in = subgroup_effect(boot, rb.contains(boot.x), effect, s_in)
        oob_idx = np.flatnonzero(oob)
        oob_data = data.subset(oob_idx)
        s_out = scores[oob_idx] if scores is not None else None
        e_out = subgroup_effect(oob_data, rb.contains(oob_data.x), effect, s_out)
        if e_in is None or e_out is None:
            skipped += 1
            continue
        biases.append(e_in - e_out)
    if not biases:
        raise ValueError("every bootstrap replicate was skipped")
    bias = float(np.mean(biases))
    warnings = []
    if skipped > 0.2 * B:
        warnings.append(f"{skipped} of {B} bootstrap replicates skipped")
    flags = {"low_B": B < 50}
    return SubgroupEffects(naive, naive - bias, "bootstrap", B, skipped, effect,
                           flags=flags, warnings=warnings,
                           details={"mean_optimism": bias,
                                    "optimism_se": float(np.std(biases, ddof=1) /
                                                         math.sqrt(len(biases)))
                                    if len(biases) > 1 else None})


def cv_adjusted_subgroup(data: Dataset, search: SearchFn, folds: int = 5, repeats: int = 20,
                         rng: RngStream | None = None, effect: str = "difference",
                         scores=None) -> SubgroupEffects:
    """Cross-validation adjusted subgroup effect.

    In each repeat the search is trained on L-1 folds and classifies the held
    out fold; the test-fold positives from all folds form S_test, whose
    effect is computed on the full data.  The result averages over repeats.
    A sign reversal (naive > 0, adjusted < 0) sets the ``spurious`` flag.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    rng = RngStream(0) if rng is None else rng
    rule = search(data, rng.spawn(0))
    naive = subgroup_effect(data, rule.contains(data.x), effect, scores)
    estimates, skipped = [], 0
    for r in range(repeats):
        rrng = rng.spawn(1 + r)
        fa = make_folds(data.n, folds, rrng.spawn(0), stratify_by=data.t)
        s_test = np.zeros(data.n, dtype=bool)
        for f in range(folds):
            tr, te = fa.train_test(f)
            rf = search(data.subset(tr), rrng.spawn(1 + f))
            s_test[te] = rf.contains(data.x[te])
        e = subgroup_effect(data, s_test, effect, scores)
        if e is None:
            skipped += 1
        else:
            estimates.append(e)
    if not estimates:
        raise ValueError("S_test was empty (or lacked an arm) in every repeat")
    adjusted = float(np.mean(estimates))
    spurious = naive is not None and naive > 0 and adjusted < 0
    return SubgroupEffects(naive if naive is not None else float("nan"), adjusted, "cv",
                           repeats, skipped, effect, flags={"spurious": bool(spurious)},
                           details={"per_repeat": estimates, "folds": folds})


# ---------------------------------------------------------------- Guo-He


def guo_he_adjustment(theta_hat, n: int, r: float = 0.25) -> np.ndarray:
    """d_k = (1 - n^(r - 1/2)) (theta_max - theta_k)."""
    if not 0 < r < 0.5:
        raise ValueError("r must lie in (0, 0.5)")
    th = np.asarray(theta_hat, dtype=float)
    return (1.0 - n ** (r - 0.5)) * (th.max() - th)


def guo_he_max_subgroup(theta_hat, resampler: Callable[[RngStream], np.ndarray], n: int,
                        r: float = 0.25, B: int = 1000, rng: RngStream | None = None,
                        level: float = 0.05) -> SubgroupEffects:
    """Bias-adjusted estimate of the largest subgroup effect.

    Args:
        theta_hat: K subgroup effect estimates.
        resampler: draws one bootstrap replicate of all K estimates.
        n: sample size entering the shrinkage n^(r - 1/2).

    The lower limit is theta_max minus the (1 - level) quantile of the
    bootstrap deviations theta*_max - theta_max.
    """
    th = np.asarray(theta_hat, dtype=float)
    if th.size < 2:
        raise ValueError("need K >= 2 subgroups")
    rng = RngStream(0) if rng is None else rng
    d = guo_he_adjustment(th, n, r)
    tmax = float(th.max())
    dev = np.empty(B)
    for b in range(B):
        tb = np.asarray(resampler(rng.spawn(b)), dtype=float)
        dev[b] = np.max(tb + d) - tmax
    adjusted = tmax - float(dev.mean())
    lcl = tmax - float(np.quantile(dev, 1 - level))
    return SubgroupEffects(tmax, adjusted, "guo_he", B, 0, "difference",
                           theta_k=[float(v) for v in th], selected=int(np.argmax(th)),
                           lower_limit=lcl, details={"r": r, "d_k": [float(v) for v in d]})


def subgroup_thetas(data: Dataset, memberships) -> np.ndarray:
    """Arm-mean differences for each row of a K x n membership matrix."""
    out = []
    for m in np.asarray(memberships, dtype=bool):
        e = subgroup_effect(data, m)
        out.append(np.nan if e is None else e)
    return np.array(out)


def bootstrap_resampler(data: Dataset, memberships) -> Callable[[RngStream], np.ndarray]:
    """Resampler for ``guo_he_max_subgroup`` over fixed candidate subgroups."""
    mem = np.asarray(memberships, dtype=bool)

    def draw(rng: RngStream):
        idx = rng.integers(data.n, data.n)
        return subgroup_thetas(data.subset(idx), mem[:, idx])

    return draw
