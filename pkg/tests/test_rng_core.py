import numpy as np
import pytest

from htelab.core import DataError, Dataset, load_csv, make_folds, save_csv, write_table
from htelab.rng import RngStream, splitmix64


def test_splitmix64_reference_value():
    # first output for state 0 (published SplitMix64 test vector)
    _, z = splitmix64(0)
    assert z == 0xE220A8397B1DCDAF


def test_same_seed_same_draws():
    a, b = RngStream(99), RngStream(99)
    assert np.array_equal(a.next_u64(100), b.next_u64(100))
    assert np.array_equal(RngStream(5).standard_normal(100), RngStream(5).standard_normal(100))


def test_spawned_streams_differ_and_are_reproducible():
    r = RngStream(7)
    s1, s2 = r.spawn(1), r.spawn(2)
    assert not np.array_equal(s1.uniform(10), s2.uniform(10))
    assert np.array_equal(RngStream(7).spawn(3).uniform(10), RngStream(7).spawn(3).uniform(10))


def test_chunked_normals_equal_one_draw():
    a = RngStream(3)
    chunks = np.concatenate([a.standard_normal(7), a.standard_normal(1), a.standard_normal(12)])
    assert np.array_equal(chunks, RngStream(3).standard_normal(20))


def test_normal_mean_monte_carlo():
    z = RngStream(2024).standard_normal(10 ** 6)
    assert abs(z.mean()) < 0.004
    assert abs(z.var() - 1.0) < 0.01


def test_categorical_equal_frequencies():
    v = RngStream(11).categorical_equal(3, 300_000)
    freq = np.bincount(v, minlength=3) / v.size
    assert np.all(np.abs(freq - 1 / 3) < 0.005)


def test_uniform_range_and_permutation():
    r = RngStream(1)
    u = r.uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    perm = r.permutation(50)
    assert sorted(perm.tolist()) == list(range(50))


def test_folds_exact_division_and_remainder():
    assert sorted(make_folds(10, 5, RngStream(0)).sizes().tolist()) == [2] * 5
    assert sorted(make_folds(7, 3, RngStream(0)).sizes().tolist()) == [2, 2, 3]


def test_folds_deterministic_and_partition():
    a = make_folds(101, 4, RngStream(8))
    b = make_folds(101, 4, RngStream(8))
    assert np.array_equal(a.fold_of, b.fold_of)
    seen = np.concatenate([a.train_test(f)[1] for f in range(4)])
    assert sorted(seen.tolist()) == list(range(101))
    tr, te = a.train_test(0)
    assert np.intersect1d(tr, te).size == 0


def test_stratified_folds_hold_both_arms():
    t = np.array([1] * 6 + [0] * 24)
    f = make_folds(30, 5, RngStream(1), stratify_by=t)
    for k in range(5):
        _, te = f.train_test(k)
        assert set(t[te]) == {0, 1}


def test_bad_fold_count():
    with pytest.raises(ValueError):
        make_folds(3, 5, RngStream(0))


def _write(path, text):
    path.write_text(text)
    return path


def test_load_csv_basic(tmp_path):
    p = _write(tmp_path / "d.csv", "y,t,x1\n1,0,0.5\n2,1,0.1\n3,0,-1\n4,1,2\n")
    d = load_csv(p)
    assert (d.n, d.p) == (4, 1)
    assert d.feature_names == ("x1",)
    assert np.array_equal(d.a, np.array([-1, 1, -1, 1]))


def test_load_csv_bad_treatment_names_row_and_column(tmp_path):
    p = _write(tmp_path / "d.csv", "y,t,x1\n1,0,0\n2,1,0\n3,2,0\n")
    with pytest.raises(DataError) as e:
        load_csv(p)
    assert e.value.row == 3 and e.value.column == "t"


def test_load_csv_positivity(tmp_path):
    p = _write(tmp_path / "d.csv", "y,t,pi,x1\n1,0,0.5,0\n2,1,1.0,0\n")
    with pytest.raises(DataError, match="positivity"):
        load_csv(p, {"propensity": "pi"})


def test_load_csv_non_numeric(tmp_path):
    p = _write(tmp_path / "d.csv", "y,t,x1\n1,0,abc\n")
    with pytest.raises(DataError) as e:
        load_csv(p)
    assert e.value.column == "x1"


def test_csv_roundtrip(tmp_path):
    r = RngStream(4)
    x = r.standard_normal(20).reshape(10, 2)
    d = Dataset(x, r.standard_normal(10), np.array([0, 1] * 5), None, ("a", "b"))
    save_csv(tmp_path / "o.csv", d)
    back = load_csv(tmp_path / "o.csv")
    assert np.array_equal(back.x, d.x) and np.array_equal(back.y, d.y)
    assert np.array_equal(back.t, d.t)


def test_write_table_provenance_comment(tmp_path):
    write_table(tmp_path / "t.csv", {"a": [1, 2], "b": [0.5, None]}, ["seed=1"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1] == "a,b"


def test_dataset_is_read_only():
    d = Dataset(np.zeros((2, 1)), np.zeros(2), np.array([0, 1]))
    with pytest.raises(ValueError):
        d.y[0] = 1.0
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.zeros(2), np.array([0, 2]))
