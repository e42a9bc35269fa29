import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forestmark.dataset import (
    Dataset, DatasetError, empty_trigger, flip_labels, load_csv, load_libsvm,
    load_trigger_csv, normalize_minmax, sample_trigger, save_csv, save_libsvm, save_trigger_csv,
    stratified_sample, train_test_split, trigger_size,
)

from conftest import BREAST_CANCER


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_csv_string_labels(tmp_path):
    p = write(tmp_path, "label,a,b\nM,1.0,2.0\nB,3.0,4.0\nB,5.0,6.0\n")
    ds = load_csv(p)
    assert ds.labels.tolist() == [1, -1, -1]
    assert ds.features.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert ds.ids.tolist() == [0, 1, 2]
    assert ds.feature_names == ("a", "b")


def test_csv_numeric_labels(tmp_path):
    ds = load_csv(write(tmp_path, "x,label\n1,0\n2,1\n3,10\n4,0\n".replace("10", "1")))
    assert ds.labels.tolist() == [-1, 1, 1, -1]


@pytest.mark.parametrize("text", [
    "label,a\nM,1\nB,oops\n",       # text in a feature column
    "label,a\nM,1\n",               # a single row
    "label,a\nM,1\nM,2\n",          # a single class
    "label,a\nM,1\nB,2\nX,3\n",     # three classes
    "a,b\n1,2\n3,4\n",              # no label column
    "label,a\nM,1\nB\n",            # ragged
])
def test_csv_rejects(tmp_path, text):
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        load_csv(tmp_path / "nope.csv")
    with pytest.raises(DatasetError):
        load_libsvm(tmp_path / "nope.svm")


def test_csv_round_trip(tmp_path, toy):
    save_csv(toy, tmp_path / "t.csv")
    back = load_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.features, toy.features)
    np.testing.assert_array_equal(back.labels, toy.labels)
    np.testing.assert_array_equal(back.ids, toy.ids)


def test_breast_cancer_shape():
    ds = load_csv(BREAST_CANCER)
    assert (ds.n, ds.d) == (569, 30)
    # class balance 62.7% / 37.3%
    assert (ds.labels == -1).sum() == 357 and (ds.labels == 1).sum() == 212


def test_libsvm_line(tmp_path):
    ds = load_libsvm(write(tmp_path, "+1 1:0.5 3:2\n-1 2:1\n", "a.svm"))
    assert ds.features.tolist() == [[0.5, 0, 2], [0, 1, 0]]
    assert ds.labels.tolist() == [1, -1]
    assert load_libsvm(write(tmp_path, "0 1:1\n1 2:1\n", "b.svm")).labels.tolist() == [-1, 1]
    assert load_libsvm(tmp_path / "a.svm", d=5).d == 5


@pytest.mark.parametrize("text", ["2 1:0.5\n", "+1 3:1 2:1\n", "+1 0:1\n", "+1 1-2\n", "x 1:1\n", ""])
def test_libsvm_rejects(tmp_path, text):
    with pytest.raises(DatasetError):
        load_libsvm(write(tmp_path, text, "bad.svm"))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_libsvm_round_trip(tmp_path_factory, n, d, seed):
    g = np.random.default_rng(seed)
    X = np.where(g.random((n, d)) < 0.5, 0.0, g.normal(size=(n, d)))
    X[0, -1] = 1.0  # pin the width
    ds = Dataset(X, g.choice([-1, 1], size=n), np.arange(n))
    p = tmp_path_factory.mktemp("svm") / "x.svm"
    save_libsvm(ds, p)
    back = load_libsvm(p)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_minmax_example():
    ds = Dataset(np.array([[2.0, 7.0], [4.0, 7.0], [6.0, 7.0]]), np.array([1, -1, 1]), np.arange(3))
    out = normalize_minmax(ds)
    assert out.features.tolist() == [[0, 0], [0.5, 0], [1, 0]]
    test = Dataset(np.array([[8.0, 7.0], [0.0, 9.0]]), np.array([1, -1]), np.arange(2))
    assert normalize_minmax(test, out.norm).features.tolist() == [[1, 0], [0, 0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_minmax_in_unit_box(n, d, seed):
    g = np.random.default_rng(seed)
    ds = Dataset(g.normal(scale=100, size=(n, d)), g.choice([-1, 1], size=n), np.arange(n))
    f = normalize_minmax(ds).features
    assert f.min() >= 0 and f.max() <= 1


def imbalanced(n_pos, n_neg):
    y = np.array([1] * n_pos + [-1] * n_neg)
    return Dataset(np.arange(len(y), dtype=float)[:, None], y, np.arange(len(y)))


def test_stratified_counts():
    s = stratified_sample(imbalanced(10, 90), 10, seed=3)
    assert (s.labels == 1).sum() == 1 and (s.labels == -1).sum() == 9
    big = stratified_sample(imbalanced(2000, 18000), 10000, seed=1)
    assert (big.labels == 1).sum() == 1000 and (big.labels == -1).sum() == 9000
    assert stratified_sample(imbalanced(10, 90), 0.5, seed=0).n == 50


def test_stratified_deterministic_and_subset():
    ds = imbalanced(30, 70)
    a, b = stratified_sample(ds, 20, 5), stratified_sample(ds, 20, 5)
    np.testing.assert_array_equal(a.ids, b.ids)
    assert set(a.ids) <= set(ds.ids) and len(set(a.ids)) == 20
    assert not np.array_equal(a.ids, stratified_sample(ds, 20, 6).ids)


@pytest.mark.parametrize("size", [0, 101, -3, 1.5])
def test_stratified_bad_size(size):
    with pytest.raises(DatasetError):
        stratified_sample(imbalanced(10, 90), size, 0)


def test_breast_cancer_split_sizes():
    ds = load_csv(BREAST_CANCER)
    train, test = train_test_split(ds, 0.2, seed=0)
    n_test = math.ceil(0.2 * 569)
    assert (train.n, test.n) == (569 - n_test, n_test) == (455, 114)
    assert set(train.ids).isdisjoint(test.ids)
    # 357/212 split proportionally: 114 * 357/569 = 71.5 -> 71 or 72
    assert (test.labels == -1).sum() in (71, 72)
    assert trigger_size(train.n, 0.02) == math.floor(0.02 * 455) == 9
    assert trigger_size(100, 0.07) == 7  # 0.07 * 100 is 7.000000000000001 in floats


def test_sample_trigger(toy):
    ts = sample_trigger(toy, 9, seed=4)
    assert ts.k == len(ts) == 9
    assert set(ts.origin_ids) <= set(toy.ids)
    pos = toy.positions(ts.origin_ids)
    np.testing.assert_array_equal(ts.rows.labels, toy.labels[pos])
    np.testing.assert_array_equal(ts.origin_ids, sample_trigger(toy, 9, seed=4).origin_ids)


@pytest.mark.parametrize("k", [0, 21, 100])
def test_sample_trigger_cap(toy, k):
    with pytest.raises(DatasetError):
        sample_trigger(toy, k, 0)


def test_flip_involution(toy):
    ts = sample_trigger(toy, 5, 0)
    f = flip_labels(ts)
    np.testing.assert_array_equal(f.rows.labels, -ts.rows.labels)
    np.testing.assert_array_equal(flip_labels(f).rows.labels, ts.rows.labels)
    e = empty_trigger(4)
    assert e.k == 0 and flip_labels(e).k == 0


def test_trigger_csv_round_trip(tmp_path, toy):
    ts = sample_trigger(toy, 3, 1)
    save_trigger_csv(ts, tmp_path / "trig.csv")
    back = load_trigger_csv(tmp_path / "trig.csv")
    np.testing.assert_array_equal(back.origin_ids, ts.origin_ids)
    np.testing.assert_array_equal(back.rows.features, ts.rows.features)
    np.testing.assert_array_equal(back.rows.labels, ts.rows.labels)


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 1)), np.array([1, 0]), np.arange(2))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 1)), np.array([1, -1]), np.array([3, 3]))
    ds = Dataset(np.zeros((2, 1)), np.array([1, -1]), np.arange(2))
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
