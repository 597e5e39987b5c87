"""Static SVG scatter plots of benchmark results (eta vs corr, ATE_hat vs ATE_true)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsRow  # noqa: E402

LAYOUTS = ("eta_corr", "ate")
_MARKERS = "osD^v<>ph*"


def _panel_rows(rows, scenario):
    return [r for r in rows if r.scenario == scenario and r.status == "ok"
            and r.replication not in ("mean",)]


def scatter_svg(rows: list[MetricsRow], path, layout: str = "eta_corr") -> None:
    """One panel per scenario, one point per (method, replication).

    Output is byte-stable: fixed SVG hash salt and no date metadata.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    scenarios = sorted({r.scenario for r in rows})
    methods = list(dict.fromkeys(r.method for r in rows))
    with plt.rc_context({"svg.hashsalt": "htelab", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, max(len(scenarios), 1), figsize=(4 * max(len(scenarios), 1), 4),
                                 squeeze=False)
        for ax, s in zip(axes[0], scenarios):
            panel = _panel_rows(rows, s)
            for k, m in enumerate(methods):
                pts = [r for r in panel if r.method == m]
                if layout == "eta_corr":
                    xs = [r.corr for r in pts if r.corr is not None and r.eta is not None]
                    ys = [r.eta for r in pts if r.corr is not None and r.eta is not None]
                else:
                    xs = [r.ate_true for r in pts if r.ate_hat is not None]
                    ys = [r.ate_hat for r in pts if r.ate_hat is not None]
                ax.scatter(xs, ys, s=14, marker=_MARKERS[k % len(_MARKERS)], label=m, alpha=0.7)
            ax.set_title(s)
            if layout == "eta_corr":
                ax.set_xlabel("corr(Delta_hat, Delta)")
                ax.set_ylabel("eta")
            else:
                ax.set_xlabel("ATE(S_hat) true")
                ax.set_ylabel("ATE_hat(S_hat)")
                ax.set_yscale("symlog", linthresh=1.0)
        axes[0][-1].legend(fontsize=7, loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
