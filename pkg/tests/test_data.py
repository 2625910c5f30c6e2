import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_dataset
from dmfp.data import (
    MODALITIES,
    FeatureRecord,
    LabeledDataset,
    PrivacyLabel,
    SplitSpec,
    concat_modalities,
    l2_normalize,
    load_dataset,
    split_dataset,
    write_dataset,
)
from dmfp.errors import DataError

O, S, T = MODALITIES


def _write_csv(path, rows, dim):
    lines = ["id," + ",".join(f"f{i}" for i in range(dim))]
    lines += [",".join([rid] + [str(v) for v in vals]) for rid, vals in rows]
    path.write_text("\n".join(lines) + "\n")


def _manifest(tmp_path, n_scene=4, label="private", normalize=True):
    ids = [f"i{k}" for k in range(4)]
    _write_csv(tmp_path / "o.csv", [(i, [1, 2, 3]) for i in ids], 3)
    _write_csv(tmp_path / "s.csv", [(i, [0, 5]) for i in ids[:n_scene]], 2)
    _write_csv(tmp_path / "t.csv", [(i, [3, 4]) for i in ids], 2)
    (tmp_path / "labels.csv").write_text("id,label\n" + "".join(
        f"{i},{label if k == 0 else 'public'}\n" for k, i in enumerate(ids)))
    manifest = {"modalities": [{"name": "object", "file": "o.csv", "dim": 3},
                               {"name": "scene", "file": "s.csv", "dim": 2},
                               {"name": "tag", "file": "t.csv", "dim": 2}],
                "labels_file": "labels.csv", "normalize": normalize}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(manifest))
    return path


def test_label_parsing():
    assert PrivacyLabel.parse("PRIVATE") is PrivacyLabel.PRIVATE
    assert PrivacyLabel.parse(" Public ") is PrivacyLabel.PUBLIC
    assert str(PrivacyLabel.PRIVATE) == "private"
    with pytest.raises(DataError):
        PrivacyLabel.parse("secret")


def test_modality_order():
    assert sorted([T, O, S]) == [O, S, T]


def test_load_manifest(tmp_path):
    ds = load_dataset(_manifest(tmp_path, label="PRIVATE"))
    assert len(ds) == 4
    assert ds.dims == {O: 3, S: 2, T: 2}
    assert ds[0].label is PrivacyLabel.PRIVATE
    assert ds.ids == ("i0", "i1", "i2", "i3")
    np.testing.assert_allclose(ds[0].block(T), [0.6, 0.8])


def test_load_without_normalization(tmp_path):
    ds = load_dataset(_manifest(tmp_path, normalize=False))
    np.testing.assert_array_equal(ds[0].block(T), [3.0, 4.0])


def test_row_count_mismatch(tmp_path):
    with pytest.raises(DataError, match="mismatch"):
        load_dataset(_manifest(tmp_path, n_scene=3))


def test_unknown_label(tmp_path):
    with pytest.raises(DataError):
        load_dataset(_manifest(tmp_path, label="maybe"))


def test_missing_file(tmp_path):
    path = _manifest(tmp_path)
    (tmp_path / "t.csv").unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(path)


def test_nonfinite_and_duplicate(tmp_path):
    path = _manifest(tmp_path)
    _write_csv(tmp_path / "t.csv", [("i0", [1, "nan"])] + [(f"i{k}", [1, 1]) for k in range(1, 4)], 2)
    with pytest.raises(DataError, match="non-finite"):
        load_dataset(path)
    path = _manifest(tmp_path)
    for f, d in (("o.csv", 3), ("s.csv", 2), ("t.csv", 2)):
        _write_csv(tmp_path / f, [(i, [1] * d) for i in ["a", "b", "a", "c"]], d)
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(path)


def test_round_trip(tmp_path):
    ds = random_dataset(25, seed=4)
    back = load_dataset(write_dataset(ds, tmp_path, normalize=False))
    assert back.ids == ds.ids
    for a, b in zip(ds, back):
        assert a == b


def test_concat_order_and_length():
    rec = FeatureRecord("x", {O: [1, 2], S: [3], T: [4, 5]})
    np.testing.assert_array_equal(concat_modalities(rec), [1, 2, 3, 4, 5])
    big = FeatureRecord("y", {O: np.zeros(1000), S: np.zeros(365), T: np.zeros(256)})
    v = concat_modalities(big)
    assert len(v) == 1621 and not v.any()
    with pytest.raises(DataError):
        concat_modalities(FeatureRecord("z", {O: [1.0], S: [1.0]}))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_concat_index_arithmetic(vals):
    k = len(vals)
    rec = FeatureRecord("x", {O: vals, S: vals[::-1], T: [1.0]})
    v = concat_modalities(rec)
    for i in range(len(v)):
        src = vals[i] if i < k else (vals[::-1][i - k] if i < 2 * k else 1.0)
        assert v[i] == src


def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_array_equal(l2_normalize([0, 0]), [0, 0])
    with pytest.raises(DataError):
        l2_normalize([1, np.inf])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30).filter(
    lambda v: np.linalg.norm(v) > 1e-3))
def test_l2_normalize_unit(v):
    assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) <= 1e-12


def test_records_are_immutable():
    rec = FeatureRecord("x", {O: [1.0]})
    with pytest.raises(ValueError):
        rec.block(O)[0] = 2.0


def test_dataset_validation():
    a = FeatureRecord("a", {O: [1.0], S: [1.0], T: [1.0]})
    with pytest.raises(DataError, match="duplicate"):
        LabeledDataset((a, a))
    b = FeatureRecord("b", {O: [1.0, 2.0], S: [1.0], T: [1.0]})
    with pytest.raises(DataError):
        LabeledDataset((a, b))


def test_split_32_records():
    recs = [FeatureRecord(f"r{i:02d}", {O: [float(i)], S: [1.0], T: [1.0]},
                          PrivacyLabel.from_bit(i < 8)) for i in range(32)]
    ds = LabeledDataset(tuple(recs))
    parts = split_dataset(ds, SplitSpec(seed=0))
    assert [len(p) for p in parts] == [15, 10, 7]
    exact = [8 * f for f in SplitSpec().fractions]
    for p, share in zip(parts, exact):
        assert abs(p.class_counts()[0] - share) < 1


def test_split_empty_is_error():
    with pytest.raises(DataError, match="empty"):
        split_dataset(random_dataset(20), SplitSpec(fractions=(1, 0, 0)))


def test_split_spec_validation():
    with pytest.raises(DataError):
        SplitSpec(fractions=(0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        SplitSpec(fractions=(1.2, -0.1, -0.1))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(12, 200), seed=st.integers(0, 1000), rate=st.floats(0.1, 0.6),
       stratified=st.booleans())
def test_split_properties(n, seed, rate, stratified):
    ds = random_dataset(n, seed=seed, private_rate=rate)
    y = ds.labels
    if min(y.sum(), n - y.sum()) < 3:
        return
    spec = SplitSpec(seed=seed, stratified=stratified)
    parts = split_dataset(ds, spec)
    ids = [i for p in parts for i in p.ids]
    assert sorted(ids) == sorted(ds.ids)
    assert len(set(ids)) == n
    for p in parts:
        pos = [ds.index[i] for i in p.ids]
        assert pos == sorted(pos)
    if stratified:
        n_priv = int(y.sum())
        for p, f in zip(parts, spec.fractions):
            assert abs(p.class_counts()[0] - n_priv * f) < 1
            assert abs(p.class_counts()[1] - (n - n_priv) * f) < 1
    again = split_dataset(ds, spec)
    assert [p.ids for p in again] == [p.ids for p in parts]
