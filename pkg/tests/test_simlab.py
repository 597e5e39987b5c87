import math

import numpy as np
import pytest

from htelab.cate import CateModel
from htelab.rng import RngStream
from htelab.simlab import (HEADER, BenchmarkConfig, ScenarioSpec, Truth, compute_metrics,
                           eta_from_selection, g1, g2, generate, jaccard, pearson,
                           run_benchmark)
from htelab.simlab.benchmark import cell_index
from htelab.simlab.plots import scatter_svg

LINEAR = {"m0": {"kind": "linear"}, "m1": {"kind": "linear"}, "m": {"kind": "linear"},
          "S": {"kind": "linear"}, "X1": {"kind": "linear"}, "X0": {"kind": "linear"},
          "R": {"kind": "linear"}, "W": {"kind": "linear"}, "Waug": {"kind": "linear"},
          "A": {"kind": "linear"}, "Aaug": {"kind": "linear"}, "aug_m0": {"kind": "linear"},
          "aug_m1": {"kind": "linear"}}


def test_g1_g2_values():
    assert g1(0.5) == pytest.approx(0.625)
    assert g1(-3.0) == pytest.approx(-0.625)
    assert g2(0.5) == pytest.approx(0.3125)
    assert g2(2.0) == pytest.approx(0.625)
    assert g2(-1.0) == 0.0


def test_scenario_shapes_and_truth_identity():
    for sid, p in [("S1", 14), ("S2", 19), ("S3", 19), ("S4", 19)]:
        s = generate(ScenarioSpec(sid, n=500), RngStream(1))
        assert s.data.x.shape == (500, p)
        d = s.data
        assert np.allclose(d.y - s.eps, np.where(d.t == 1, s.m1, s.m0))
        tr = Truth(s.spec)
        assert np.array_equal(s.delta, tr.k2(d.x))
        assert np.allclose(s.m0, 100 + tr.k1(d.x))
        assert (d.pi_known is not None) == (sid in ("S1", "S2"))


def test_generate_bit_identical():
    a = generate(ScenarioSpec("S3", n=300), RngStream(5))
    b = generate(ScenarioSpec("S3", n=300), RngStream(5))
    assert np.array_equal(a.data.x, b.data.x) and np.array_equal(a.data.y, b.data.y)
    assert np.array_equal(a.data.t, b.data.t)


def test_scenario_validation_and_overrides():
    with pytest.raises(ValueError, match="S1, S2, S3, S4"):
        ScenarioSpec("S9")
    assert ScenarioSpec("S1").overrides() == {}
    assert ScenarioSpec("S1", a=1.0).overrides() == {"a": 1.0}


def test_jaccard_pearson_eta():
    a = np.isin(np.arange(6), [1, 2, 3])
    b = np.isin(np.arange(6), [2, 3, 4])
    assert jaccard(a, b) == pytest.approx(0.5)
    assert jaccard(np.zeros(3, bool), np.zeros(3, bool)) == 1.0
    assert math.isnan(pearson(np.ones(4), np.arange(4.0)))
    assert eta_from_selection(np.array([1.0, 0.0, -1.0, 1.0]), np.array([1, 0, 0, 1])) == 0.5
    assert eta_from_selection(np.ones(3), np.zeros(3)) == 0.0


def _oracle_model(p):
    return CateModel("T", lambda x: Truth(ScenarioSpec("S1")).k2(x), p)


def test_metrics_oracle_and_empty():
    tr = generate(ScenarioSpec("S1", n=2000), RngStream(2))
    te = generate(ScenarioSpec("S1", n=100_000), RngStream(3))
    row = compute_metrics(tr, te, _oracle_model(14), "S1", "T", 0)
    assert row.corr == pytest.approx(1.0) and row.jaccard == 1.0
    assert row.bias == pytest.approx(0.0)
    assert abs(row.eta - 0.22) < 0.01
    neg = CateModel("T", lambda x: -np.ones(len(x)), 14)
    row = compute_metrics(tr, te, neg, "S1", "T", 0)
    assert row.ate_hat is None and row.bias is None and row.eta == 0.0


def test_eta_ceiling_on_test_sample():
    te = generate(ScenarioSpec("S1", n=10_000), RngStream(4))
    assert eta_from_selection(te.delta, te.delta > 0) <= 0.23


def test_cell_index_unique():
    seen = {cell_index(s, r, k) for s in range(4) for r in range(100) for k in (0, 1, 2, 99_999)}
    assert len(seen) == 4 * 100 * 4


def test_benchmark_bookkeeping_and_determinism(tmp_path):
    cfg = BenchmarkConfig(scenarios=("S1",), methods=("T",), replications=2, n=300,
                          n_test=1000, tuning="per_replication", learners=LINEAR)
    res = run_benchmark(cfg)
    assert len(res.rows) == 2 and len(res.aggregates) == 1
    assert [r.replication for r in res.rows] == ["0", "1"]
    agg = res.aggregates[0]
    assert agg.replication == "mean" and agg.status == "aggregate"
    assert agg.sd_ate_hat == pytest.approx(np.std([r.ate_hat for r in res.rows], ddof=1))
    assert tuple(res.table()[0].to_dict()) == HEADER
    assert len(res.table()) == 3
    again = run_benchmark(cfg, threads=2)
    assert [r.to_dict() for r in again.rows] == [r.to_dict() for r in res.rows]
    scatter_svg(res.rows, tmp_path / "a.svg")
    scatter_svg(res.rows, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_benchmark_failure_recorded_not_raised():
    bad = dict(LINEAR, W={"kind": "elastic_net", "params": {"lam": -1.0}})
    cfg = BenchmarkConfig(scenarios=("S1",), methods=("T", "W"), replications=1, n=300,
                          n_test=500, tuning="per_replication", learners=bad)
    res = run_benchmark(cfg)
    by = {r.method: r for r in res.rows}
    assert by["T"].status == "ok"
    assert by["W"].n_failed == 1 and by["W"].status.startswith("failed")


def test_benchmark_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig(scenarios=("S7",))
    with pytest.raises(ValueError):
        BenchmarkConfig(methods=("BCF",))
    with pytest.raises(ValueError):
        BenchmarkConfig(replications=0)
    with pytest.raises(ValueError):
        BenchmarkConfig(learners={"nope": {"kind": "linear"}})
