"""Command-line interface: simulate | fit | evaluate | benchmark | test-hte | plot.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfg
from .core import CsvSchema, DataError, load_csv, save_csv, write_table
from .learners import ConvergenceError, LearnerSpec
from .nuisance import NuisanceError, fit_nuisance
from .rng import RngStream
from .simlab.benchmark import OUTCOME_ROLES, ROSTER, BenchmarkConfig, fit_roster, run_benchmark
from .simlab.metrics import HEADER, MetricsRow, compute_metrics
from .simlab.scenarios import SCENARIOS, ScenarioSpec, generate

SIMULATED_PI = "pi"  # propensity column written by ``simulate``; picked up automatically
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


DEFAULTS = {
    "scenario": "S1", "n": 1000, "n_test": 10_000, "seed": 1, "out": ".",
    "input": None, "outcome": "y", "treatment": "t", "propensity": None,
    "covariates": None, "ignore": [],
    "methods": ["T"], "outcome_learner": "boost", "final_learner": None,
    "propensity_learner": "logistic_enet", "augmentation_learner": "enet",
    "folds": cfg.CROSSFIT_FOLDS, "delta": 0.0,
    "replications": 25, "scenarios": list(SCENARIOS), "tuning": "pilot", "plots": False,
    "scenario_options": {}, "gate_groups": 5, "gate_splits": 10,
    "results": "results.csv",
}


# ---------------------------------------------------------------- config


def _load_config(args) -> dict:
    conf = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        conf.update(user)
    for key in ("scenario", "n", "seed", "out", "input", "outcome", "treatment", "propensity",
                "replications", "results"):
        v = getattr(args, key, None)
        if v is not None:
            conf[key] = v
    if getattr(args, "method", None):
        conf["methods"] = list(ROSTER) if args.method == ["all"] else args.method
    if conf["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {conf['scenario']!r}; valid ids: "
                          f"{', '.join(SCENARIOS)}")
    for m in conf["methods"]:
        if m not in ROSTER:
            raise ConfigError(f"unknown method {m!r}; roster: {', '.join(ROSTER)}")
    if int(conf["n"]) < 2:
        raise ConfigError("n must be >= 2")
    return conf


def _spec(value, role: str) -> LearnerSpec:
    if value is None:
        raise ConfigError(f"missing learner spec for {role}")
    if isinstance(value, str):
        try:
            return cfg.spec_from_name(value)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    if isinstance(value, dict):
        try:
            return LearnerSpec.from_dict(value)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad learner spec for {role}: {exc}") from exc
    raise ConfigError(f"learner spec for {role} must be a name or an object")


def role_specs(conf: dict) -> dict[str, LearnerSpec]:
    outcome = _spec(conf["outcome_learner"], "outcome_learner")
    final = outcome if conf["final_learner"] is None else _spec(conf["final_learner"],
                                                                "final_learner")
    specs = {r: outcome if r in ("m0", "m1", "m", "S") else final for r in OUTCOME_ROLES}
    specs["pi"] = _spec(conf["propensity_learner"], "propensity_learner")
    aug = _spec(conf["augmentation_learner"], "augmentation_learner")
    specs["aug_m0"] = specs["aug_m1"] = aug
    return specs


def _provenance(command: str, conf: dict) -> list[str]:
    # The output directory and worker count do not affect results and are
    # left out so that reruns elsewhere or with more threads are byte-identical.
    echo = {k: v for k, v in conf.items() if k != "out"}
    return [f"htelab {__version__} {command}",
            "config " + json.dumps(echo, sort_keys=True, separators=(",", ":"))]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _out_dir(conf) -> Path:
    out = Path(conf["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_spec(conf, n=None) -> ScenarioSpec:
    try:
        return ScenarioSpec(id=conf["scenario"], n=int(conf["n"] if n is None else n),
                            **conf["scenario_options"])
    except TypeError as exc:
        raise ConfigError(f"bad scenario_options: {exc}") from exc


def _header(path) -> list[str]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            for line in fh:
                if not line.startswith("#"):
                    return [h.strip() for h in next(csv.reader([line]))]
    except OSError:
        pass
    return []


def _dataset(conf):
    """Input CSV or a simulated sample; returns (Dataset, GeneratedSample | None)."""
    if conf["input"]:
        propensity = conf["propensity"]
        if propensity is None and SIMULATED_PI in _header(conf["input"]):
            propensity = SIMULATED_PI
        schema = CsvSchema(conf["outcome"], conf["treatment"], propensity,
                           conf["covariates"], tuple(conf["ignore"]))
        try:
            return load_csv(conf["input"], schema), None
        except DataError as exc:
            flag = {conf["treatment"]: "--treatment", conf["outcome"]: "--outcome",
                    conf["propensity"]: "--propensity"}.get(exc.column)
            if flag:
                raise DataError(f"{exc.message}; set {flag}", exc.row, exc.column) from exc
            raise
    sample = generate(_scenario_spec(conf), RngStream(int(conf["seed"])).spawn(0))
    return sample.data, sample


# ---------------------------------------------------------------- commands


def cmd_simulate(conf: dict) -> int:
    out = _out_dir(conf)
    sample = generate(_scenario_spec(conf), RngStream(int(conf["seed"])).spawn(0))
    prov = _provenance("simulate", conf)
    save_csv(out / "data.csv", sample.data, provenance=prov)
    write_table(out / "truth.csv", {
        "row": np.arange(sample.data.n), "delta": sample.delta, "m0": sample.m0,
        "m1": sample.m1, "pi": sample.pi, "eps": sample.eps,
        "in_true_subgroup": sample.in_true_subgroup}, prov)
    return EXIT_OK


def _fit_all(conf, data):
    specs = role_specs(conf)
    models, tuned = fit_roster(data, conf["methods"], specs, RngStream(int(conf["seed"])).spawn(1),
                               int(conf["folds"]))
    failed = {m: v for m, v in models.items() if isinstance(v, Exception)}
    for exc in failed.values():
        if isinstance(exc, (DataError, NuisanceError)):
            raise exc
    if len(failed) == len(models):
        raise next(iter(failed.values()))
    return models, tuned


def cmd_fit(conf: dict) -> int:
    out = _out_dir(conf)
    data, _ = _dataset(conf)
    models, tuned = _fit_all(conf, data)
    prov = _provenance("fit", conf)
    for m, model in models.items():
        if isinstance(model, Exception):
            _write_json(out / f"model_{m}.json", {"method": m, "status": "failed",
                                                   "error": f"{type(model).__name__}: {model}",
                                                   "provenance": prov})
            continue
        _write_json(out / f"model_{m}.json", {"method": m, "status": "ok", "p": model.p,
                                               "feature_names": list(data.feature_names),
                                               "info": model.info, "tuned_specs": tuned,
                                               "provenance": prov})
        write_table(out / f"cate_{m}.csv",
                    {"row": np.arange(data.n), "delta_hat": model.predict(data.x)}, prov)
    return EXIT_OK


def cmd_evaluate(conf: dict) -> int:
    from .policy import rule_from_cate, value_aipw, value_ipw
    from .subgroup import subgroup_effect

    out = _out_dir(conf)
    data, sample = _dataset(conf)
    models, _ = _fit_all(conf, data)
    rng = RngStream(int(conf["seed"]))
    nfit = fit_nuisance(data, role_specs(conf)["m0"], role_specs(conf)["pi"], int(conf["folds"]),
                        rng.spawn(2), roles=("m0", "m1", "pi"), refit=False)
    test = None
    if sample is not None:
        test = generate(_scenario_spec(conf, conf["n_test"]), rng.spawn(3))
    report, rows = {}, []
    for m, model in models.items():
        if isinstance(model, Exception):
            report[m] = {"status": f"failed: {type(model).__name__}: {model}"}
            continue
        rule = rule_from_cate(model, float(conf["delta"]))
        sel = rule.decide(data.x).astype(bool)
        entry = {"status": "ok", "selected_fraction": float(sel.mean()),
                 "naive_subgroup_effect": subgroup_effect(data, sel),
                 "value_aipw": value_aipw(data, nfit, rule).to_dict()}
        try:
            entry["value_ipw"] = value_ipw(data, nfit.oof_pi, rule).to_dict()
        except ValueError as exc:
            entry["value_ipw"] = {"error": str(exc)}
        if test is not None:
            row = compute_metrics(sample, test, model, conf["scenario"], m, 0)
            entry["metrics"] = row.to_dict()
            rows.append(row)
        report[m] = entry
    prov = _provenance("evaluate", conf)
    _write_json(out / "evaluation.json", {"methods": report, "propensity": nfit.pi_source,
                                          "provenance": prov})
    if rows:
        write_table(out / "metrics.csv", {h: [getattr(r, h) for r in rows] for h in HEADER}, prov)
    return EXIT_OK


def cmd_benchmark(conf: dict, threads: int) -> int:
    from .simlab.plots import scatter_svg

    out = _out_dir(conf)
    try:
        bc = BenchmarkConfig(scenarios=conf["scenarios"], methods=conf["methods"],
                             replications=int(conf["replications"]), n=int(conf["n"]),
                             n_test=int(conf["n_test"]), base_seed=int(conf["seed"]),
                             crossfit_folds=int(conf["folds"]), tuning=conf["tuning"],
                             scenario_options=dict(conf["scenario_options"]),
                             learners={r: s.to_dict() for r, s in role_specs(conf).items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def progress(i, total):
        print(f"replication {i}/{total}", file=sys.stderr, flush=True)

    res = run_benchmark(bc, threads=threads, progress=progress)
    prov = _provenance("benchmark", conf)
    table = res.table()
    write_table(out / "results.csv", {h: [getattr(r, h) for r in table] for h in HEADER}, prov)
    _write_json(out / "summary.json", {"summary": res.summary, "tuned_specs": res.tuned_specs,
                                       "benchmark_config": bc.to_dict(), "header": list(HEADER),
                                       "sd_ate_hat": "SD of ATE_hat across replications",
                                       "provenance": prov})
    if conf["plots"]:
        scatter_svg(res.rows, out / "eta_vs_corr.svg", "eta_corr")
        scatter_svg(res.rows, out / "ate_hat_vs_true.svg", "ate")
    return EXIT_OK


def cmd_test_hte(conf: dict) -> int:
    from .cate import fit_t_learner
    from .inference import blp_test, crossfit_cate, gate_test, ite_sd_bound

    out = _out_dir(conf)
    outcome = _spec(conf["outcome_learner"], "outcome_learner")
    pi_spec = None if conf["propensity_learner"] is None else _spec(conf["propensity_learner"],
                                                                    "propensity_learner")
    data, _ = _dataset(conf)
    if data.pi_known is None and pi_spec is None:
        raise ConfigError("missing learner spec for propensity_learner (no known propensity)")
    rng = RngStream(int(conf["seed"]))
    nfit = fit_nuisance(data, outcome, pi_spec, int(conf["folds"]), rng.spawn(1),
                        roles=("m", "pi"), refit=False)
    d_cf = crossfit_cate(data, lambda ds, r: fit_t_learner(ds, outcome, r), int(conf["folds"]),
                         rng.spawn(2), folds=nfit.folds)
    blp = blp_test(data, nfit, d_cf)
    gate = gate_test(data, outcome, int(conf["gate_groups"]), int(conf["gate_splits"]),
                     rng.spawn(3), pi_spec)
    bound = ite_sd_bound(data)
    _write_json(out / "test_report.json", {"blp": blp.to_dict(), "gate": gate.to_dict(),
                                           "ite_sd_bound": bound.to_dict(),
                                           "provenance": _provenance("test-hte", conf)})
    return EXIT_OK


def read_results(path) -> list[MetricsRow]:
    """Read a results CSV written by ``benchmark`` back into MetricsRows."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != HEADER:
        raise DataError("results file header does not match the metrics header")
    rows = []
    for rec in reader:
        def num(k):
            return float(rec[k]) if rec[k] != "" else None
        rows.append(MetricsRow(rec["scenario"], rec["method"], rec["replication"], num("corr"),
                               num("jaccard"), num("ate_hat"), num("ate_true"),
                               num("sd_ate_hat"), num("bias"), num("eta"),
                               num("frac_selected"), int(rec["n_failed"]), rec["status"]))
    return rows


def cmd_plot(conf: dict) -> int:
    from .simlab.plots import scatter_svg

    out = _out_dir(conf)
    try:
        rows = [r for r in read_results(conf["results"]) if r.status != "aggregate"]
    except OSError as exc:
        raise ConfigError(f"cannot read results file: {exc}") from exc
    scatter_svg(rows, out / "eta_vs_corr.svg", "eta_corr")
    scatter_svg(rows, out / "ate_hat_vs_true.svg", "ate")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"htelab {__version__}")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker processes for benchmark replications (outputs do not depend on it)")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "evaluate", "benchmark", "test-hte", "plot"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--scenario")
        p.add_argument("--n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if name in ("fit", "evaluate", "test-hte"):
            p.add_argument("--input", help="CSV input instead of a simulated scenario")
            p.add_argument("--outcome")
            p.add_argument("--treatment")
            p.add_argument("--propensity")
        if name in ("fit", "evaluate", "benchmark"):
            p.add_argument("--method", nargs="+", help="roster methods or 'all'")
        if name == "benchmark":
            p.add_argument("--replications", type=int)
        if name == "plot":
            p.add_argument("--results", help="results.csv from the benchmark command")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = _load_config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cmd = args.command
        if cmd == "simulate":
            return cmd_simulate(conf)
        if cmd == "fit":
            return cmd_fit(conf)
        if cmd == "evaluate":
            return cmd_evaluate(conf)
        if cmd == "benchmark":
            return cmd_benchmark(conf, args.threads)
        if cmd == "test-hte":
            return cmd_test_hte(conf)
        return cmd_plot(conf)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, NuisanceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
