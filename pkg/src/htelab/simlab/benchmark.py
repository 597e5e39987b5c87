"""Monte Carlo benchmark of the CATE roster over scenarios S1-S4."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import config as cfg
from ..cate import (causal_tree_as_cate, fit_causal_tree, fit_mlm, fit_r_learner,
                    fit_s_learner, fit_t_learner, fit_x_learner)
from ..core import Dataset
from ..learners import LearnerSpec
from ..nuisance import fit_nuisance
from ..rng import RngStream
from .metrics import HEADER, MetricsRow, compute_metrics
from .scenarios import SCENARIOS, ScenarioSpec, generate

ROSTER = ("T", "S", "X", "R", "W", "Waug", "A", "Aaug", "CausalTree")
TUNING_MODES = ("pilot", "per_replication")
PILOT = 99_999  # replication slot reserved for the tuning pilot sample
OUTCOME_ROLES = ("m0", "m1", "m", "S", "X1", "X0", "R", "W", "Waug", "A", "Aaug")


@dataclass
class BenchmarkConfig:
    """Benchmark settings.

    Attributes:
        tuning: ``"pilot"`` tunes every learner role once per scenario on an
            independent pilot sample and reuses the choices in all
            replications; ``"per_replication"`` tunes inside each replication.
        scenario_options: extra ScenarioSpec fields applied to every scenario.
        outcome_grid: boosting grid (defaults to ``config.BOOST_GRID``).
        learners: role -> LearnerSpec dict overriding the default for that
            role (roles: m0, m1, m, pi, aug_m0, aug_m1, S, X1, X0, R, W, Waug,
            A, Aaug).
    """

    scenarios: tuple = SCENARIOS
    methods: tuple = ROSTER
    replications: int = 25
    n: int = 1000
    n_test: int = 10_000
    base_seed: int = 2023
    crossfit_folds: int = cfg.CROSSFIT_FOLDS
    tune_cv_folds: int = cfg.TUNE_CV_FOLDS
    tuning: str = "pilot"
    outcome_grid: dict | None = None
    scenario_options: dict = field(default_factory=dict)
    causal_tree: dict = field(default_factory=lambda: dict(cfg.CAUSAL_TREE))
    learners: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scenarios = tuple(self.scenarios)
        self.methods = tuple(self.methods)
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}; valid ids: {', '.join(SCENARIOS)}")
        for m in self.methods:
            if m not in ROSTER:
                raise ValueError(f"unknown method {m!r}; roster: {', '.join(ROSTER)}")
        if self.tuning not in TUNING_MODES:
            raise ValueError(f"tuning must be one of {TUNING_MODES}")
        bad = sorted(set(self.learners) - set(OUTCOME_ROLES) - {"pi", "aug_m0", "aug_m1"})
        if bad:
            raise ValueError(f"unknown learner roles: {', '.join(bad)}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def cell_index(scenario_idx: int, replication: int, slot: int) -> int:
    """Unique substream index for (scenario, replication, slot)."""
    return (scenario_idx + 1) * 10**9 + replication * 10**3 + slot


def default_specs(config: BenchmarkConfig) -> dict[str, LearnerSpec]:
    out = {r: cfg.boost_spec(config.tune_cv_folds, config.outcome_grid) for r in OUTCOME_ROLES}
    out["pi"] = cfg.propensity_spec()
    out["aug_m0"] = cfg.augmentation_spec()
    out["aug_m1"] = cfg.augmentation_spec()
    for role, d in config.learners.items():
        out[role] = d if isinstance(d, LearnerSpec) else LearnerSpec.from_dict(d)
    return out


def fit_roster(data: Dataset, methods, specs: dict[str, LearnerSpec], rng: RngStream,
               k: int = cfg.CROSSFIT_FOLDS, causal_tree: dict | None = None):
    """Fit every requested method on one sample.

    Shared nuisances are fitted once: boosted arm models (T, X), a boosted
    pooled mean (R), the propensity (elastic-net logistic unless known) and
    elastic-net arm models whose average is the augmentation offset.

    Returns:
        (models, tuned) with models[method] a CateModel or the exception raised,
        and tuned[role] the resolved spec dicts.
    """
    methods = tuple(methods)
    causal_tree = dict(cfg.CAUSAL_TREE if causal_tree is None else causal_tree)
    needs_pi_any = any(m in methods for m in ("X", "R", "W", "Waug", "A", "Aaug"))
    roles = []
    if "T" in methods or "X" in methods:
        roles += ["m0", "m1"]
    if "R" in methods:
        roles.append("m")
    if needs_pi_any:
        roles.append("pi")
    models: dict[str, object] = {}
    tuned: dict[str, dict] = {}
    nb = nb_error = None
    try:
        nb = fit_nuisance(data, specs["m0"], specs["pi"], k, rng.spawn(1),
                          roles=roles, role_specs={r: specs[r] for r in ("m0", "m1", "m", "pi")},
                          eps=cfg.PROPENSITY_EPS)
        tuned.update(nb.specs)
    except Exception as exc:  # noqa: BLE001 - recorded per method below
        nb_error = exc
    aug = None
    if nb is not None and ("Waug" in methods or "Aaug" in methods):
        try:
            aug = fit_nuisance(data, specs["aug_m0"], None, k, rng.spawn(2), roles=("m0", "m1"),
                               role_specs={"m0": specs["aug_m0"], "m1": specs["aug_m1"]},
                               folds=nb.folds, refit=False)
            tuned["aug_m0"] = aug.specs["m0"]
            tuned["aug_m1"] = aug.specs["m1"]
        except Exception as exc:  # noqa: BLE001
            aug = exc

    for j, method in enumerate(methods):
        mrng = rng.spawn(10 + j)
        try:
            if method in ("T", "X", "R", "W", "Waug", "A", "Aaug") and nb is None:
                raise nb_error
            if method == "T":
                model = fit_t_learner(data, specs["m0"], mrng, nuisance=nb)
            elif method == "S":
                model = fit_s_learner(data, specs["S"], mrng)
                tuned["S"] = model.info["outcome_spec"]
            elif method == "X":
                model = fit_x_learner(data, specs["m0"], specs["X1"], mrng, nuisance=nb,
                                      control_stage_spec=specs["X0"])
                tuned["X1"] = model.info["tau1_spec"]
                tuned["X0"] = model.info["tau0_spec"]
            elif method == "R":
                model = fit_r_learner(data, nb, specs["R"], mrng)
                tuned["R"] = model.info["final_spec"]
            elif method in ("W", "Waug", "A", "Aaug"):
                augmented = method.endswith("aug")
                if augmented and isinstance(aug, Exception):
                    raise aug
                model = fit_mlm(data, nb.oof_pi, method[0], augmented, specs[method], mrng,
                                aug=aug.oof_h if augmented else None)
                tuned[method] = model.info["final_spec"]
            elif method == "CausalTree":
                model = causal_tree_as_cate(fit_causal_tree(data, rng=mrng, **causal_tree))
            else:
                raise ValueError(method)
            models[method] = model
        except Exception as exc:  # noqa: BLE001 - failures are reported, never fatal
            models[method] = exc
    return models, tuned


def tune_on_pilot(spec: ScenarioSpec, config: BenchmarkConfig, root: RngStream,
                  scenario_idx: int) -> dict[str, LearnerSpec]:
    """Tune every learner role on one pilot sample of the scenario."""
    pilot = generate(spec, root.spawn(cell_index(scenario_idx, PILOT, 0)))
    _, tuned = fit_roster(pilot.data, config.methods, default_specs(config),
                          root.spawn(cell_index(scenario_idx, PILOT, 1)), config.crossfit_folds,
                          config.causal_tree)
    specs = default_specs(config)
    for role, d in tuned.items():
        specs[role] = LearnerSpec.from_dict(d)
    return specs


def _run_replication(task):
    config, scenario_idx, rep, specs = task
    root = RngStream(config.base_seed)
    sid = config.scenarios[scenario_idx]
    spec = ScenarioSpec(id=sid, n=config.n, **config.scenario_options)
    train = generate(spec, root.spawn(cell_index(scenario_idx, rep, 0)))
    test = generate(spec.with_n(config.n_test), root.spawn(cell_index(scenario_idx, rep, 1)))
    models, _ = fit_roster(train.data, config.methods, specs,
                           root.spawn(cell_index(scenario_idx, rep, 2)), config.crossfit_folds,
                           config.causal_tree)
    rows = []
    for method in config.methods:
        model = models[method]
        if isinstance(model, Exception):
            rows.append(MetricsRow(sid, method, str(rep), None, None, None, None, None, None,
                                   None, None, 1, f"failed: {type(model).__name__}: {model}"))
            continue
        try:
            rows.append(compute_metrics(train, test, model, sid, method, rep))
        except Exception as exc:  # noqa: BLE001
            rows.append(MetricsRow(sid, method, str(rep), None, None, None, None, None, None,
                                   None, None, 1, f"failed: {type(exc).__name__}: {exc}"))
    return rows


@dataclass
class BenchmarkResult:
    rows: list[MetricsRow]
    aggregates: list[MetricsRow]
    summary: dict
    tuned_specs: dict

    def table(self) -> list[MetricsRow]:
        return self.rows + self.aggregates


def _stats(values) -> dict:
    v = np.array([x for x in values if x is not None and not
                  (isinstance(x, float) and math.isnan(x))], dtype=float)
    if v.size == 0:
        return {"mean": None, "median": None, "sd": None, "n": 0}
    return {"mean": float(v.mean()), "median": float(np.median(v)),
            "sd": float(v.std(ddof=1)) if v.size > 1 else None, "n": int(v.size)}


METRIC_FIELDS = ("corr", "jaccard", "ate_hat", "ate_true", "bias", "eta", "frac_selected")


def aggregate(rows: list[MetricsRow], scenarios, methods) -> tuple[list[MetricsRow], dict]:
    """Per-cell aggregate rows (means; sd_ate_hat = SD across replications)
    and a nested summary of mean/median/SD per metric."""
    agg, summary = [], {}
    for s in scenarios:
        for m in methods:
            cell = [r for r in rows if r.scenario == s and r.method == m]
            stats = {f: _stats([getattr(r, f) for r in cell]) for f in METRIC_FIELDS}
            failed = sum(r.n_failed for r in cell)
            summary.setdefault(s, {})[m] = {**stats, "n_failed": failed,
                                            "replications": len(cell)}
            agg.append(MetricsRow(
                s, m, "mean", stats["corr"]["mean"], stats["jaccard"]["mean"],
                stats["ate_hat"]["mean"], stats["ate_true"]["mean"], stats["ate_hat"]["sd"],
                stats["bias"]["mean"], stats["eta"]["mean"], stats["frac_selected"]["mean"],
                failed, "aggregate"))
    return agg, summary


def run_benchmark(config: BenchmarkConfig, threads: int = 1, progress=None) -> BenchmarkResult:
    """Run every (scenario, replication) cell and aggregate.

    Output is identical for any ``threads`` value: each cell draws from its
    own substream and rows are assembled in canonical order.
    """
    root = RngStream(config.base_seed)
    tasks, tuned_specs = [], {}
    for si, sid in enumerate(config.scenarios):
        spec = ScenarioSpec(id=sid, n=config.n, **config.scenario_options)
        if config.tuning == "pilot":
            specs = tune_on_pilot(spec, config, root, si)
        else:
            specs = default_specs(config)
        tuned_specs[sid] = {r: s.to_dict() for r, s in specs.items()}
        for rep in range(config.replications):
            tasks.append((config, si, rep, specs))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replication, tasks))
    else:
        results = []
        for i, task in enumerate(tasks):
            results.append(_run_replication(task))
            if progress is not None:
                progress(i + 1, len(tasks))
    rows = [r for block in results for r in block]
    agg, summary = aggregate(rows, config.scenarios, config.methods)
    return BenchmarkResult(rows, agg, summary, tuned_specs)


def rows_to_columns(rows: list[MetricsRow]) -> dict[str, list]:
    return {h: [getattr(r, h) for r in rows] for h in HEADER}
