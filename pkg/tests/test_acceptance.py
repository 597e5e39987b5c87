"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run alone with ``pytest tests/test_acceptance.py -v``.  The full benchmark
behind criterion 4 takes about 11 minutes on one core.
"""

import json
import math
import subprocess
import time

import numpy as np
import pytest
from scipy.stats import binom, binomtest

from htelab.cate import fit_t_learner
from htelab.core import Dataset
from htelab.inference import blp_test, crossfit_cate, gate_test
from htelab.learners import LearnerSpec, fit_elastic_net, fit_tree
from htelab.nuisance import NuisanceFit, fit_nuisance, overlap_report
from htelab.policy import fit_policy_tree
from htelab.rng import RngStream
from htelab.simlab import (BenchmarkConfig, ScenarioSpec, eta_from_selection, generate,
                           run_benchmark)
from htelab.subgroup import (bootstrap_bias_correction, bootstrap_resampler, cutoff_search,
                             cv_adjusted_subgroup, guo_he_max_subgroup, subgroup_thetas)
from htelab.transforms import aipw_scores, modified_outcome
from test_learners import brute_force_split
from test_policy import _instance, brute_force_policy_tree

LIN = LearnerSpec("linear")


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {label}: {detail}")
        assert ok, detail
    return emit


def _fmt(v):
    return "undefined" if v is None else f"{v:.3f}"


# ------------------------------------------------------------------ 1, 2, 3


def test_c1_dgp_ground_truth(report):
    t0 = time.perf_counter()
    s = generate(ScenarioSpec("S1", n=10**6), RngStream(2023))
    d = s.delta
    pos = d > 0
    mean, frac, cond = d.mean(), pos.mean(), d[pos].mean()
    eta = eta_from_selection(d, pos)
    secs = time.perf_counter() - t0
    ok = (abs(mean - 0.0119) <= 0.003 and abs(frac - 0.330) <= 0.005
          and abs(cond - 0.665) <= 0.010 and abs(eta - 0.22) <= 0.005 and secs < 60)
    report("1", ok, f"E[delta]={mean:.4f} P(delta>0)={frac:.4f} E[delta|delta>0]={cond:.4f} "
                    f"eta={eta:.4f} runtime={secs:.1f}s")


def test_c2_allocation_ratios(report):
    fr = {sid: generate(ScenarioSpec(sid, n=10**6), RngStream(7)).data.t.mean()
          for sid in ("S1", "S2", "S3", "S4")}
    ok = (all(abs(fr[s] - 0.75) <= 0.005 for s in ("S1", "S2"))
          and all(abs(fr[s] - 0.25) <= 0.01 for s in ("S3", "S4")))
    report("2", ok, " ".join(f"{s}={v:.4f}" for s, v in fr.items())
           + " (targets 0.75/0.75/0.25/0.25)")


def test_c3_overlap_flags(report):
    # Flags are computed from the true propensities of each simulated sample.
    flags = {"S3": [], "S4": []}
    for seed in range(10):
        for sid in flags:
            s = generate(ScenarioSpec(sid, n=10_000), RngStream(300 + seed))
            flags[sid].append(overlap_report(s.pi, s.data.t).poor_overlap)
    ok = not any(flags["S3"]) and all(flags["S4"])
    report("3", ok, f"flag raised: S3 {sum(flags['S3'])}/10, S4 {sum(flags['S4'])}/10")


# ------------------------------------------------------------------ 4


@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    res = run_benchmark(BenchmarkConfig(replications=25, n=1000))
    return res, time.perf_counter() - t0


def _med(summary, sid, m, metric="corr"):
    return summary[sid][m][metric]["median"]


def test_c4a_benchmark_s1(benchmark, report):
    s = benchmark[0].summary
    meta = ("S", "T", "X", "R", "Waug", "Aaug")
    corr = {m: _med(s, "S1", m) for m in meta}
    ok_meta = all(v is not None and v >= 0.4 for v in corr.values())
    raw = {m: (_med(s, "S1", m), s["S1"][m]["ate_hat"]["sd"]) for m in ("W", "A")}
    ok_raw = all(c is not None and abs(c) < 0.15 and sd is not None and sd > 1
                 for c, sd in raw.values())
    report("4 (S1)", ok_meta and ok_raw,
           "median corr " + " ".join(f"{m}={_fmt(v)}" for m, v in corr.items())
           + "; unaugmented " + " ".join(f"{m}: corr={_fmt(c)} sd(ATE_hat)={_fmt(sd)}"
                                          for m, (c, sd) in raw.items()))


def test_c4b_benchmark_s2(benchmark, report):
    s = benchmark[0].summary
    c1, c2 = _med(s, "S1", "T"), _med(s, "S2", "T")
    ok = c1 is not None and c2 is not None and c2 <= c1 - 0.15
    report("4 (S2)", ok, f"T-learner median corr S1={_fmt(c1)} S2={_fmt(c2)}")


def test_c4c_benchmark_s3(benchmark, report):
    s = benchmark[0].summary
    parts, ok = [], True
    for m in s["S3"]:
        c3, c2 = _med(s, "S3", m), _med(s, "S2", m)
        if c3 is None or c2 is None:
            parts.append(f"{m}: S3={_fmt(c3)} S2={_fmt(c2)} (skipped)")
            continue
        ok &= c3 <= c2 + 0.1
        parts.append(f"{m}: S3={c3:.3f} S2={c2:.3f}")
    report("4 (S3)", ok, "; ".join(parts))


def test_c4d_benchmark_s4(benchmark, report):
    s = benchmark[0].summary
    vals = {m: (_med(s, "S4", m), s["S4"][m]["bias"]["mean"]) for m in ("A", "W")}
    ok = all(c is not None and c > 0.6 and b is not None and b > 10 for c, b in vals.values())
    report("4 (S4)", ok, " ".join(f"{m}: median corr={_fmt(c)} bias={_fmt(b)}"
                                  for m, (c, b) in vals.items()))


def test_c4e_benchmark_runtime(benchmark, report):
    res, secs = benchmark
    failed = sum(r.n_failed for r in res.rows)
    report("4 (runtime)", secs < 7200 and failed == 0,
           f"K=25 over 4 scenarios and {len(res.summary['S1'])} methods in {secs / 60:.1f} min "
           f"on 1 core, {failed} failed fits")


# ------------------------------------------------------------------ 5


def test_c5_oracle_equivalence(report):
    tree_ok = 0
    for seed in range(20):
        x, s = _instance(seed)
        tree_ok += all(fit_policy_tree(s, x, dep).info["objective"]
                       == brute_force_policy_tree(x, s, dep) for dep in (1, 2))
    split_ok = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        x = r.integers(0, 5, size=(8, 3)).astype(float)
        y = r.normal(size=8)
        sse, _, _ = brute_force_split(x, y)
        pred = fit_tree(x, y, max_depth=1, min_leaf=1).predict(x)
        split_ok += bool(np.isclose(np.sum((y - pred) ** 2), sse, atol=1e-12))
    r = np.random.default_rng(9)
    x = r.normal(size=(200, 4))
    y = 1.5 + x @ np.array([1.0, -2.0, 0.5, 0.0]) + r.normal(size=200)
    m = fit_elastic_net(x, y, lam=0.0, tol=1e-14)
    sol = np.linalg.lstsq(np.column_stack([np.ones(200), x]), y, rcond=None)[0]
    ols_err = max(abs(m.intercept - sol[0]), np.max(np.abs(m.coef - sol[1:])))
    n = 64
    q, _ = np.linalg.qr(np.column_stack([np.ones(n), r.normal(size=(n, 5))]))
    xo = np.sqrt(n) * q[:, 1:]
    yo = xo @ np.array([2.0, -1.0, 0.3, 0.05, 0.0]) + r.normal(size=n)
    b = xo.T @ (yo - yo.mean()) / n
    st_err = max(np.max(np.abs(
        fit_elastic_net(xo, yo, lam=lam, standardize=False, tol=1e-14).coef
        - np.sign(b) * np.maximum(np.abs(b) - lam, 0.0))) for lam in (0.1, 0.5, 1.2))
    ok = tree_ok == 20 and split_ok == 20 and ols_err < 1e-6 and st_err < 1e-4
    report("5", ok, f"policy tree exact {tree_ok}/20, tree split exact {split_ok}/20, "
                    f"OLS max err {ols_err:.1e}, soft-threshold max err {st_err:.1e}")


# ------------------------------------------------------------------ 6


def _oracle_fit(m0, m1, pi):
    return NuisanceFit(m0, m1, pi * m1 + (1 - pi) * m0, pi, None)


def test_c6_transform_identities(report):
    n, tau = 10**5, 0.5
    parts, ok = [], True
    for name, kind in (("rct50", 0.5), ("rct75", 0.75), ("observational", None)):
        r = RngStream({"rct50": 61, "rct75": 62, "observational": 63}[name])
        x = r.standard_normal(n * 3).reshape(n, 3)
        pi = (np.full(n, kind) if kind is not None
              else 1 / (1 + np.exp(-(0.8 * x[:, 0] - 0.4 * x[:, 1]))))
        t = (r.uniform(n) < pi).astype(np.int64)
        m0 = 1.0 + x @ np.array([1.0, -0.5, 0.25])
        y = m0 + tau * t + r.standard_normal(n)
        d = Dataset(x, y, t, pi)
        for label, z in (("MO", modified_outcome(d, pi).pseudo_outcome),
                         ("AIPW", aipw_scores(d, _oracle_fit(m0, m0 + tau, pi)).pseudo_outcome)):
            se = z.std(ddof=1) / math.sqrt(n)
            dev = abs(z.mean() - tau) / se
            ok &= dev <= 3
            parts.append(f"{name} {label} {dev:.2f}SE")
    s = generate(ScenarioSpec("S1", n=n), RngStream(64))
    v_mo = modified_outcome(s.data, s.pi).pseudo_outcome.var()
    v_aipw = aipw_scores(s.data, _oracle_fit(s.m0, s.m1, s.pi)).pseudo_outcome.var()
    ok &= v_aipw <= v_mo
    report("6", ok, "; ".join(parts) + f"; S1 var AIPW={v_aipw:.2f} <= MO={v_mo:.2f}")


# ------------------------------------------------------------------ 7


def _linear_dgp(rng, n, planted=False):
    x = rng.standard_normal(n * 5).reshape(n, 5)
    t = (rng.uniform(n) < 0.5).astype(np.int64)
    tau = np.where(x[:, 0] > 0, 1.0, 0.0) if planted else 0.5
    y = x @ np.array([1.0, 0.5, 0.0, 0.0, -0.5]) + tau * t + rng.standard_normal(n)
    return Dataset(x, y, t, np.full(n, 0.5))


def test_c7_inference_calibration(report):
    R = 500
    lo, hi = binom.ppf(0.025, R, 0.05) / R, binom.ppf(0.975, R, 0.05) / R
    rb = rg = 0
    for r in range(R):
        rng = RngStream(1000 + r)
        d = _linear_dgp(rng.spawn(0), 1000)
        nf = fit_nuisance(d, LIN, None, 5, rng.spawn(1), roles=("m",), refit=False)
        dc = crossfit_cate(d, lambda ds, rr: fit_t_learner(ds, LIN, rr), 5, rng.spawn(2),
                           folds=nf.folds)
        rb += blp_test(d, nf, dc).reject(0.05)
        rg += gate_test(d, LIN, 5, 1, rng.spawn(3)).reject(0.05)
    P = 100
    power = sum(gate_test(_linear_dgp(RngStream(5000 + r).spawn(0), 4000, True), LIN, 2, 1,
                          RngStream(5000 + r).spawn(3)).reject(0.05) for r in range(P)) / P
    ok = lo <= rb / R <= hi and lo <= rg / R <= hi and power > 0.8
    report("7", ok, f"type-I BLP={rb / R:.3f} GATE={rg / R:.3f} (band [{lo:.3f}, {hi:.3f}]), "
                    f"GATE power={power:.2f} over {P} planted datasets")


# ------------------------------------------------------------------ 8


def test_c8_post_selection(report):
    S, n, p = 200, 300, 40
    boot_better = cv_better = 0
    for s in range(S):
        rng = RngStream(77 + s)
        g = rng.spawn(0)
        x = g.standard_normal(n * p).reshape(n, p)
        t = (g.uniform(n) < 0.5).astype(np.int64)
        d = Dataset(x, x[:, 0] + g.standard_normal(n), t, np.full(n, 0.5))
        b = bootstrap_bias_correction(d, cutoff_search(), 100, rng.spawn(1))
        c = cv_adjusted_subgroup(d, cutoff_search(), 5, 20, rng.spawn(2))
        boot_better += abs(b.corrected) < abs(b.naive)
        cv_better += abs(c.corrected) < abs(c.naive)
    G, k = 200, 10
    closer = 0
    for s in range(G):
        rng = RngStream(4000 + s)
        g = rng.spawn(0)
        nn = 1000
        x = g.standard_normal(nn).reshape(nn, 1)
        t = (g.uniform(nn) < 0.5).astype(np.int64)
        d = Dataset(x, g.standard_normal(nn), t, np.full(nn, 0.5))
        groups = np.array([np.arange(nn) % k == j for j in range(k)])
        th = subgroup_thetas(d, groups)
        res = guo_he_max_subgroup(th, bootstrap_resampler(d, groups), nn, B=100,
                                  rng=rng.spawn(1))
        closer += abs(res.corrected) < abs(res.naive)
    pval = binomtest(closer, G, 0.5, alternative="greater").pvalue
    ok = boot_better / S >= 0.7 and cv_better / S >= 0.7 and pval < 0.05
    report("8", ok, f"closer to 0 than naive: bootstrap {boot_better / S:.3f}, "
                    f"CV {cv_better / S:.3f}; Guo-He closer in {closer}/{G} (sign test p={pval:.1e})")


# ------------------------------------------------------------------ 9


def _run(python_exe, tmp_path, threads, *args):
    out = tmp_path / f"th{threads}" / args[0]
    cmd = [python_exe, "-m", "htelab.cli", "--threads", str(threads), *args, "--out", str(out)]
    r = subprocess.run(cmd, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return out


def test_c9_determinism(python_exe, tmp_path, report):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"outcome_learner": "linear", "augmentation_learner": "linear",
                                "scenarios": ["S1", "S3"], "n_test": 1000, "plots": True,
                                "tuning": "per_replication", "gate_splits": 3}))
    base = ["--config", str(conf), "--n", "300", "--seed", "5"]
    commands = [["simulate", *base], ["fit", *base, "--method", "all"],
                ["evaluate", *base, "--method", "T", "R", "Waug"],
                ["benchmark", *base, "--replications", "3", "--method", "T", "X", "Aaug"],
                ["test-hte", *base]]
    diffs, files = [], 0
    for argv in commands:
        runs = [_run(python_exe, tmp_path, th, *argv) for th in (1, 2, 1)]
        names = sorted(p.name for p in runs[0].iterdir())
        for other in runs[1:]:
            if sorted(p.name for p in other.iterdir()) != names:
                diffs.append(f"{argv[0]}: file sets differ")
        for name in names:
            files += 1
            blobs = {(r / name).read_bytes() for r in runs}
            if len(blobs) != 1:
                diffs.append(f"{argv[0]}/{name}")
    plot_dirs = []
    for th in (1, 2):
        res = tmp_path / f"th{th}" / "benchmark" / "results.csv"
        plot_dirs.append(_run(python_exe, tmp_path / f"plot{th}", th, "plot", "--results",
                              str(res)))
    for name in ("eta_vs_corr.svg", "ate_hat_vs_true.svg"):
        files += 1
        if (plot_dirs[0] / name).read_bytes() != (plot_dirs[1] / name).read_bytes():
            diffs.append(f"plot/{name}")
    report("9", not diffs, f"{files} output files compared across reruns with --threads 1 and 2; "
                           f"differences: {', '.join(diffs) or 'none'}")
