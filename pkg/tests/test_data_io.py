import gzip
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgpstab.data_io import (A9A_DIM, Dataset, LibsvmError, bundled_a9a, carve_test, format_libsvm, infer_dim,
                             load_a9a, parse_libsvm, read_libsvm, shard, synth_logistic, synth_pl)
from sgpstab.objectives import Sample, smoothness_info


def test_parse_basic_line():
    (s,) = parse_libsvm(["+1 3:1 11:1\n"])
    assert s.label == 1.0
    assert s.indices.tolist() == [2, 10] and s.values.tolist() == [1.0, 1.0]


def test_parse_empty_features_and_zero_label():
    a, b = parse_libsvm(["-1\n", "0 1:2.5\n"])
    assert a.label == -1 and a.indices.size == 0
    assert b.label == -1


@pytest.mark.parametrize("line,msg", [("x 1:1", "label"), ("+1 0:1", ">= 1"), ("+1 1:a", "malformed"),
                                      ("+1 1", "malformed"), ("+1 200:1", "exceeds"), ("2 1:1", "is not")])
def test_parse_errors_carry_line_numbers(line, msg):
    with pytest.raises(LibsvmError, match=msg) as exc:
        parse_libsvm(["+1 1:1", line], expected_d=123)
    assert "line 2" in str(exc.value)


def test_descending_indices_warn_and_sort(caplog):
    (s,) = parse_libsvm(["+1 5:1 2:3"])
    assert s.indices.tolist() == [1, 4] and s.values.tolist() == [3.0, 1.0]
    assert "ascending" in caplog.text


def test_infer_dim():
    assert infer_dim(parse_libsvm(["+1 3:1", "-1 7:2"])) == 7


sample_strategy = st.builds(
    lambda idx, vals, lab: Sample(np.array(sorted(idx), dtype=np.int64), np.array(vals[:len(idx)]), lab),
    st.sets(st.integers(0, 200), max_size=12),
    st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=12, max_size=12),
    st.sampled_from([-1.0, 1.0]))


@given(st.lists(sample_strategy, max_size=20))
def test_round_trip_bit_exact(samples):
    text = format_libsvm(samples)
    back = parse_libsvm(io.StringIO(text))
    assert back == samples
    for a, b in zip(samples, back):
        assert a.values.tobytes() == b.values.tobytes()
    assert format_libsvm(back) == text


def test_read_gzip(tmp_path):
    p = tmp_path / "x.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("+1 1:1\n-1 2:1\n")
    assert len(read_libsvm(p)) == 2


def test_bundled_a9a_shape():
    raw = gzip.open(bundled_a9a("train"), "rt").read().splitlines()
    train, test = load_a9a()
    assert len(train) == len(raw) == 32561
    assert train.d == A9A_DIM and train.X.indices.max() + 1 == 123
    assert len(test) == 16281
    assert set(np.unique(train.y)) == {-1.0, 1.0}


def toy(count=100, d=5):
    return Dataset.from_samples(synth_logistic(d, count, 2.0, seed=0), d)


def test_shard_partition_and_determinism():
    data = toy(103)
    s1, s2 = shard(data, 4, 25, seed=7), shard(data, 4, 25, seed=7)
    rows = np.concatenate([s.rows for s in s1.shards] + [s1.pool.rows])
    assert sorted(rows.tolist()) == list(range(103))
    assert len(s1.pool) == 3 and s1.m == 4 and s1.n == 25
    for a, b in zip(s1.shards, s2.shards):
        assert np.array_equal(a.rows, b.rows) and (a.X != b.X).nnz == 0
    assert not np.array_equal(shard(data, 4, 25, seed=8).shards[0].rows, s1.shards[0].rows)


def test_shard_single_node_takes_everything():
    data = toy(40)
    s = shard(data, 1, 40, seed=0)
    assert len(s.pool) == 0 and sorted(s.shards[0].rows.tolist()) == list(range(40))


def test_shard_a9a_split():
    train, test = load_a9a()
    s = shard(train, 32, 1000, seed=0, test=test)
    assert s.m == 32 and s.n == 1000 and len(s.pool) == 561


def test_shard_too_small():
    with pytest.raises(ValueError):
        shard(toy(10), 3, 4, seed=0)


def test_replace_changes_one_position():
    s = shard(toy(60), 3, 20, seed=1)
    F, _ = s.dense_tensor()
    new = Sample.from_dense(np.arange(5.0) + 1, -1)
    s2 = s.replace(1, 4, new, 999)
    F2, Y2 = s2.dense_tensor()
    diff = np.argwhere((F != F2).any(axis=2))
    assert diff.tolist() == [[1, 4]] and Y2[1, 4] == -1
    assert s2.shards[1].sample(4) == new and s2.shards[1].rows[4] == 999
    assert s2.manifest().count("\n") == 61


def test_synth_logistic_noiseless_and_seeded():
    a = synth_logistic(6, 50, np.inf, seed=4)
    b = synth_logistic(6, 50, np.inf, seed=4)
    assert a == b
    assert all(abs(np.linalg.norm(s.values) - 1) < 1e-12 for s in a)
    # noiseless labels agree with one planted direction
    X = np.array([s.dense(6) for s in a])
    y = np.array([s.label for s in a])
    sol = np.linalg.lstsq(X, y, rcond=None)[0]
    assert (np.sign(X @ sol) == y).mean() > 0.8
    with pytest.raises(ValueError):
        synth_logistic(0, 5, 1.0, 0)


def test_synth_pl_spectrum():
    q = synth_pl(2, 1.0, 4.0, seed=5)
    info = smoothness_info(q, Dataset.from_samples(synth_logistic(2, 3, 1.0, 0), 2).X, 1.0)
    assert info.L == pytest.approx(4.0, rel=1e-12) and info.alpha == pytest.approx(1.0, rel=1e-12)
    assert info.kappa == pytest.approx(4.0, rel=1e-12)
    assert np.array_equal(synth_pl(3, 1, 2, 9).A, synth_pl(3, 1, 2, 9).A)
    with pytest.raises(ValueError):
        synth_pl(2, 3.0, 1.0, 0)


def test_carve_test_disjoint():
    tr, te = carve_test(toy(50), 0.2, seed=0)
    assert len(te) == 10 and not set(tr.rows) & set(te.rows)
