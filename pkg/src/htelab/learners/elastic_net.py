"""Elastic-net linear and logistic regression by cyclic coordinate descent.

Objective (gaussian family), with case weights v normalised to sum to one:

    0.5 * sum_i v_i (y_i - b0 - x_i b)^2 + lam * (alpha * |b|_1 + (1 - alpha)/2 * |b|_2^2)

The binomial family replaces the squared loss by the negative log-likelihood
and is solved by iteratively reweighted least squares, each inner problem by
the same coordinate descent.  With ``standardize=True`` columns are centred
and scaled by their weighted standard deviation before fitting (the penalty
acts on the standardised scale); coefficients are always reported on the
original scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

FAMILIES = ("gaussian", "binomial")


class ConvergenceError(RuntimeError):
    """Solver did not reach tolerance; ``diagnostics`` holds iteration details."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _cd_gaussian(xs, r, v, beta, xv, lam, alpha, tol, max_iter, trace):
    """Coordinate descent on centred data.

    ``r`` holds the current residual and is updated in place, ``xv[j]`` is
    sum_i v_i x_ij^2.  Returns (sweeps, last max change).  When ``trace`` has
    room it records the objective after each sweep.
    """
    n, p = xs.shape
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    dmax = 0.0
    for it in range(max_iter):
        dmax = 0.0
        for j in range(p):
            if xv[j] <= 0.0:
                continue
            bj = beta[j]
            g = 0.0
            for i in range(n):
                g += v[i] * xs[i, j] * r[i]
            z = g + xv[j] * bj
            nb = _soft(z, l1) / (xv[j] + l2)
            d = nb - bj
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * xs[i, j]
                beta[j] = nb
                c = d * d * xv[j]
                if c > dmax:
                    dmax = c
        if it < trace.shape[0]:
            obj = 0.0
            for i in range(n):
                obj += v[i] * r[i] * r[i]
            obj *= 0.5
            pen = 0.0
            for j in range(p):
                pen += l1 * abs(beta[j]) + 0.5 * l2 * beta[j] * beta[j]
            trace[it] = obj + pen
        if dmax < tol:
            return it + 1, dmax
    return max_iter, dmax


@dataclass
class ElasticNetModel:
    """Fitted elastic net.

    Attributes:
        intercept, coef: original-scale parameters.
        center, scale: standardisation used during fitting.
        n_iter: coordinate-descent sweeps (summed over IRLS steps).
    """

    intercept: float
    coef: np.ndarray
    lam: float
    alpha: float
    family: str
    center: np.ndarray
    scale: np.ndarray
    n_iter: int

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.coef.shape[0])
        return self.intercept + x @ self.coef

    def predict(self, x) -> np.ndarray:
        eta = self.decision_function(x)
        if self.family == "binomial":
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    def std_coef(self) -> np.ndarray:
        return self.coef * self.scale

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coef": self.coef.tolist(), "lambda": self.lam,
                "alpha": self.alpha, "family": self.family}


def _prep(x, y, weights, standardize):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    v = w / w.sum()
    center = v @ x
    xc = x - center
    if standardize:
        sd = np.sqrt(v @ (xc * xc))
        scale = np.where(sd > 0, sd, 1.0)
    else:
        scale = np.ones(x.shape[1])
    return np.ascontiguousarray(xc / scale), y, v, center, scale


def lambda_max(x, y, weights=None, alpha: float = 1.0, family: str = "gaussian",
               standardize: bool = True) -> float:
    """Smallest lambda at which every slope is zero."""
    xs, y, v, _, _ = _prep(x, y, weights, standardize)
    mu = v @ y
    grad = np.abs(xs.T @ (v * (y - mu)))
    return float(grad.max() / max(alpha, 1e-3)) if grad.size else 0.0


def lambda_path(x, y, weights=None, alpha: float = 1.0, family: str = "gaussian",
                n_lambda: int = 50, ratio: float | None = None,
                standardize: bool = True) -> np.ndarray:
    """Decreasing log-spaced lambda grid from :func:`lambda_max`."""
    lmax = lambda_max(x, y, weights, alpha, family, standardize)
    n, p = np.asarray(x).reshape(len(y), -1).shape
    if ratio is None:
        ratio = 1e-4 if n > p else 1e-2
    if lmax <= 0:
        return np.zeros(1)
    return lmax * np.logspace(0.0, np.log10(ratio), n_lambda)


def fit_elastic_net(x, y, weights=None, lam: float = 0.0, alpha: float = 1.0,
                    family: str = "gaussian", tol: float = 1e-9, max_iter: int = 100_000,
                    standardize: bool = True, warm_start: np.ndarray | None = None,
                    max_irls: int = 100, _trace: np.ndarray | None = None) -> ElasticNetModel:
    """Fit one elastic-net model.

    Args:
        lam: penalty level (>= 0).
        alpha: mixing, 1 = lasso, 0 = ridge.
        family: ``"gaussian"`` or ``"binomial"`` (y in {0, 1}).
        tol: coordinate-descent convergence threshold on max_j xv_j * (change in b_j)^2.
        warm_start: standardised-scale starting slopes.

    Raises:
        ConvergenceError: a solver loop ran out of iterations.
        ValueError: invalid arguments.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    xs, y, v, center, scale = _prep(x, y, weights, standardize)
    n, p = xs.shape
    if family == "binomial" and not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial family requires y in {0, 1}")
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    trace = np.zeros(0) if _trace is None else _trace
    if family == "gaussian":
        ybar = float(v @ y)
        r = (y - ybar) - xs @ beta
        xv = v @ (xs * xs)
        sweeps, dmax = _cd_gaussian(xs, r, v, beta, xv, float(lam), float(alpha), tol,
                                    max_iter, trace)
        if dmax >= tol:
            raise ConvergenceError("coordinate descent did not converge",
                                   {"sweeps": sweeps, "max_change": dmax, "tol": tol})
        b0s = ybar
        total = sweeps
    else:
        b0s, total = _irls(xs, y, v, beta, float(lam), float(alpha), tol, max_iter, max_irls)
    coef = beta / scale
    intercept = float(b0s - center @ coef)
    return ElasticNetModel(intercept, coef, float(lam), float(alpha), family, center, scale, total)


def _irls(xs, y, v, beta, lam, alpha, tol, max_iter, max_irls):
    pbar = float(v @ y)
    pbar = min(max(pbar, 1e-9), 1 - 1e-9)
    b0 = float(np.log(pbar / (1 - pbar)))
    total = 0
    dev_old = np.inf
    for outer in range(max_irls):
        eta = b0 + xs @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        mu = np.clip(mu, 1e-5, 1 - 1e-5)
        wk = mu * (1 - mu)
        z = eta + (y - mu) / wk
        vw = v * wk
        sw = vw.sum()
        # weighted centring of the working response/design for the intercept
        xm = (vw @ xs) / sw
        xcw = np.ascontiguousarray(xs - xm)
        zm = float(vw @ z) / sw
        r = (z - zm) - xcw @ beta
        xv = vw @ (xcw * xcw)
        sweeps, dmax = _cd_gaussian(xcw, r, vw, beta, xv, lam, alpha, tol, max_iter,
                                    np.zeros(0))
        total += sweeps
        if dmax >= tol:
            raise ConvergenceError("inner coordinate descent did not converge",
                                   {"irls_step": outer, "sweeps": sweeps, "max_change": dmax})
        b0 = zm - float(xm @ beta)
        eta = b0 + xs @ beta
        dev = float(v @ (np.logaddexp(0.0, eta) - y * eta))
        if abs(dev - dev_old) <= 1e-10 * (abs(dev) + 1e-3):
            return b0, total
        dev_old = dev
    raise ConvergenceError("IRLS did not converge", {"irls_steps": max_irls, "deviance": dev_old})


def kkt_violation(model: ElasticNetModel, x, y, weights=None) -> float:
    """Largest violation of the optimality conditions on the standardised scale.

    Active coordinates: |grad_j - lam*alpha*sign(b_j) - lam*(1-alpha)*b_j|.
    Inactive coordinates: max(0, |grad_j| - lam*alpha), grad_j = sum_i v_i x_ij r_i.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    v = w / w.sum()
    xs = (x - model.center) / model.scale
    b = model.std_coef()
    mu = model.predict(x)
    grad = xs.T @ (v * (y - mu))
    l1 = model.lam * model.alpha
    l2 = model.lam * (1 - model.alpha)
    active = b != 0
    viol = np.zeros_like(b)
    viol[active] = np.abs(grad[active] - l1 * np.sign(b[active]) - l2 * b[active])
    viol[~active] = np.maximum(0.0, np.abs(grad[~active]) - l1)
    return float(viol.max()) if viol.size else 0.0


def fit_path(x, y, lambdas, weights=None, alpha: float = 1.0, family: str = "gaussian",
             standardize: bool = True, tol: float = 1e-7,
             truncate: bool = False) -> list[ElasticNetModel]:
    """Models along a decreasing lambda sequence, each warm-started from the last.

    With ``truncate`` the path stops at the first lambda whose fit fails to
    converge (typically a separable binomial problem) and the models fitted
    so far are returned; otherwise the error propagates.
    """
    out = []
    warm = None
    for lam in lambdas:
        try:
            m = fit_elastic_net(x, y, weights, float(lam), alpha, family, tol=tol,
                                standardize=standardize, warm_start=warm)
        except ConvergenceError:
            if not truncate:
                raise
            break
        warm = m.std_coef()
        out.append(m)
    return out
