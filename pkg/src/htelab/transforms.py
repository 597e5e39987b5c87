"""Outcome and weight transformations used by direct CATE and policy learners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .nuisance import NuisanceFit

KINDS = ("modified_outcome", "mcm", "robinson", "aipw", "owl", "aol")


@dataclass(frozen=True)
class TransformedSample:
    """Per-row pseudo-outcome, weights and (optionally) +-1 labels.

    Attributes:
        shift: constant added to Y before forming OWL weights (0 otherwise).
    """

    pseudo_outcome: np.ndarray
    weights: np.ndarray
    labels: np.ndarray | None
    kind: str
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        w = np.asarray(self.weights)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")


def _check_pi(pi, n):
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 0:
        pi = np.full(n, float(pi))
    if pi.shape[0] != n or not np.all((pi > 0) & (pi < 1)):
        raise ValueError("propensity must lie strictly inside (0, 1)")
    return pi


def mcm_denominator(a, pi) -> np.ndarray:
    """A*pi + (1 - A)/2, i.e. the probability of the arm actually received."""
    return a * pi + (1.0 - a) / 2.0


def modified_outcome(data: Dataset, pi) -> TransformedSample:
    """Y* = Y (T - pi) / (pi (1 - pi)); E[Y*|X] equals the CATE."""
    pi = _check_pi(pi, data.n)
    ys = data.y * (data.t - pi) / (pi * (1.0 - pi))
    return TransformedSample(ys, np.ones(data.n), None, "modified_outcome")


def mcm_weights(data: Dataset, pi) -> TransformedSample:
    """Modified-loss weights W = 1 / (A pi + (1 - A)/2), labels A, pseudo-outcome Y.

    The consumer regresses 2 A (Y - b) on X with weights W.
    """
    pi = _check_pi(pi, data.n)
    a = data.a
    return TransformedSample(data.y.copy(), 1.0 / mcm_denominator(a, pi), a, "mcm")


def augmentation_term(fit: NuisanceFit, x) -> np.ndarray:
    """b(x) = h(x) = (m0(x) + m1(x)) / 2 on new covariates."""
    return fit.h(x)


def robinson_transform(data: Dataset, fit: NuisanceFit) -> TransformedSample:
    """Pseudo-outcome (Y - m(X)) / (T - pi(X)), weights (T - pi(X))^2, out-of-fold."""
    resid_t = data.t - fit.oof_pi
    assert np.all(resid_t != 0), "zero treatment residual; propensity must be clipped"
    pseudo = (data.y - fit.oof_m) / resid_t
    return TransformedSample(pseudo, resid_t ** 2, None, "robinson")


def aipw_scores(data: Dataset, fit: NuisanceFit) -> TransformedSample:
    """Doubly robust scores  m1 - m0 + (T - pi)/(pi (1 - pi)) (Y - m(T, X))."""
    pi = fit.oof_pi
    mt = fit.oof_m_t(data.t)
    score = fit.oof_m1 - fit.oof_m0 + (data.t - pi) / (pi * (1.0 - pi)) * (data.y - mt)
    return TransformedSample(score, np.ones(data.n), None, "aipw")


def owl_weights(data: Dataset, pi, shift: bool = True, eps: float = 1e-8) -> TransformedSample:
    """OWL weights Y / (A pi + (1 - A)/2) with labels A.

    Weights must be nonnegative.  When ``shift`` is set and min(Y) < 0 the
    outcome is shifted by -min(Y) + eps first; the fitted rule then depends
    on that shift, which is the known weakness AOL removes.

    Raises:
        ValueError: negative outcomes with ``shift=False``.
    """
    pi = _check_pi(pi, data.n)
    y = data.y
    c = 0.0
    if y.min() < 0:
        if not shift:
            raise ValueError("OWL needs nonnegative outcomes; enable shift or use AOL")
        c = -float(y.min()) + eps
    a = data.a
    w = (y + c) / mcm_denominator(a, pi)
    return TransformedSample(y + c, w, a, "owl", c)


def aol_weights(data: Dataset, fit_or_m, pi=None) -> TransformedSample:
    """AOL: residual Yt = Y - m(X), weights |Yt| / (A pi + (1 - A)/2), labels A sign(Yt).

    Args:
        fit_or_m: NuisanceFit (uses oof_m and oof_pi) or a residualising vector m.
        pi: propensity vector, required when ``fit_or_m`` is a vector.
    """
    if isinstance(fit_or_m, NuisanceFit):
        m = fit_or_m.oof_m
        pi = fit_or_m.oof_pi if pi is None else pi
    else:
        m = np.asarray(fit_or_m, dtype=float)
    pi = _check_pi(pi, data.n)
    resid = data.y - m
    a = data.a
    sign = np.where(resid >= 0, 1.0, -1.0)
    return TransformedSample(resid, np.abs(resid) / mcm_denominator(a, pi), a * sign, "aol")
