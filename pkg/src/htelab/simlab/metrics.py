"""Benchmark metrics for one fitted CATE model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scenarios import GeneratedSample


def jaccard(a, b) -> float:
    """|A and B| / |A or B| for boolean membership vectors; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.sum(a | b)
    if union == 0:
        return 1.0
    return float(np.sum(a & b) / union)


def pearson(u, v) -> float:
    """Pearson correlation; NaN when either vector is constant."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    su, sv = u.std(), v.std()
    if su == 0 or sv == 0 or not np.isfinite(su * sv):
        return float("nan")
    return float(np.mean((u - u.mean()) * (v - v.mean())) / (su * sv))


def eta_from_selection(delta_true, selected) -> float:
    """Utility index: true ATE in the selection times the selected fraction."""
    delta_true = np.asarray(delta_true, dtype=float)
    selected = np.asarray(selected, dtype=bool)
    if not selected.any():
        return 0.0
    return float(delta_true[selected].mean() * selected.mean())


@dataclass
class MetricsRow:
    """One (scenario, method, replication) result.

    ``ate_hat``/``ate_true``/``bias`` are None when the estimated subgroup is
    empty on the test set; ``eta`` is then 0.  ``sd_ate_hat`` is filled only
    on aggregate rows (SD across replications).
    """

    scenario: str
    method: str
    replication: str
    corr: float | None
    jaccard: float | None
    ate_hat: float | None
    ate_true: float | None
    sd_ate_hat: float | None
    bias: float | None
    eta: float | None
    frac_selected: float | None
    n_failed: int = 0
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


HEADER = ("scenario", "method", "replication", "corr", "jaccard", "ate_hat", "ate_true",
          "sd_ate_hat", "bias", "eta", "frac_selected", "n_failed", "status")


def compute_metrics(train: GeneratedSample, test: GeneratedSample, model, scenario: str = "",
                    method: str = "", replication: int | str = 0,
                    train_prediction=None) -> MetricsRow:
    """Metrics for a model fitted on ``train`` only.

    corr and Jaccard use training rows; ATE_true, ATE_hat, bias and eta use
    the test rows selected by Delta_hat > 0.
    """
    d_tr = model.predict(train.data.x) if train_prediction is None else train_prediction
    d_te = model.predict(test.data.x)
    corr = pearson(d_tr, train.delta)
    jac = jaccard(d_tr > 0, train.in_true_subgroup)
    sel = d_te > 0
    if sel.any():
        ate_true = float(test.delta[sel].mean())
        ate_hat = float(d_te[sel].mean())
        bias = ate_hat - ate_true
        eta = ate_true * float(sel.mean())
    else:
        ate_true = ate_hat = bias = None
        eta = 0.0
    return MetricsRow(scenario, method, str(replication), corr, jac, ate_hat, ate_true, None,
                      bias, eta, float(sel.mean()))
