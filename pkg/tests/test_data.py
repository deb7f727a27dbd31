import numpy as np
import pytest

from maxlogit_kd.data import Dataset, generate_blobs, load_csv, stratified_split, write_csv
from maxlogit_kd.errors import EmptyFile, InvalidParams, LabelOutOfRange, ParseError


class TestBlobs:
    def test_shape_and_balance(self):
        ds = generate_blobs(3, 10, 4, 0.5, seed=1)
        assert ds.n_samples == 30 and ds.n_features == 4 and ds.n_classes == 3
        assert np.bincount(ds.labels).tolist() == [10, 10, 10]

    def test_deterministic(self):
        a, b = generate_blobs(4, 20, 3, 1.0, seed=7), generate_blobs(4, 20, 3, 1.0, seed=7)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.train_idx, b.train_idx)
        assert not np.array_equal(a.features, generate_blobs(4, 20, 3, 1.0, seed=8).features)

    def test_draw_order_is_documented(self):
        ds = generate_blobs(3, 5, 2, 0.5, seed=11, center_scale=2.0)
        rng = np.random.default_rng(11)
        centers = rng.normal(size=(3, 2)) * 2.0
        noise = rng.normal(size=(15, 2)) * 0.5
        np.testing.assert_array_equal(ds.features, centers[np.repeat(np.arange(3), 5)] + noise)

    def test_zero_spread(self):
        ds = generate_blobs(3, 4, 2, 0.0)
        for c in range(3):
            assert len(np.unique(ds.features[ds.labels == c], axis=0)) == 1

    def test_stratified_split(self):
        ds = generate_blobs(5, 25, 2, 1.0)
        assert np.bincount(ds.labels[ds.train_idx]).tolist() == [20] * 5
        assert np.bincount(ds.labels[ds.val_idx]).tolist() == [5] * 5
        assert not set(ds.train_idx) & set(ds.val_idx)

    def test_split_rounds_per_class(self):
        labels = np.array([0] * 7 + [1] * 3)
        train, val = stratified_split(labels, 2, np.random.default_rng(0))
        assert np.bincount(labels[train]).tolist() == [6, 2]
        assert len(val) == 2

    def test_invalid(self):
        with pytest.raises(InvalidParams):
            generate_blobs(1, 10, 2, 1.0)
        with pytest.raises(InvalidParams):
            generate_blobs(3, 10, 2, -1.0)

    def test_read_only(self):
        ds = generate_blobs(2, 5, 2, 1.0)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_rejects_bad_labels(self):
        with pytest.raises(LabelOutOfRange):
            Dataset(np.zeros((2, 1)), np.array([0, 3]), 2, np.array([0]), np.array([1]))


class TestCsv:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        ds = load_csv(path)
        assert (ds.n_samples, ds.n_features, ds.n_classes) == (2, 2, 2)
        np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4]])

    def test_header_and_named_label(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n1,0.5,0.25\n0,1.5,2.5\n")
        ds = load_csv(path, label_column="y")
        assert ds.labels.tolist() == [1, 0]
        np.testing.assert_array_equal(ds.features[1], [1.5, 2.5])

    def test_parse_error_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,label\n1,2,0\n3,oops,1\n")
        with pytest.raises(ParseError) as info:
            load_csv(path)
        assert (info.value.row, info.value.column) == (3, 2)
        assert "row 3" in str(info.value)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2,0\n3,1\n")
        with pytest.raises(ParseError):
            load_csv(path)

    def test_label_gap_warns(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0\n2,2\n3,0\n4,2\n")
        with pytest.warns(UserWarning, match=r"\[1\]"):
            ds = load_csv(path)
        assert ds.n_classes == 3

    def test_non_integer_label(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0\n2,0.5\n")
        with pytest.raises(LabelOutOfRange):
            load_csv(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("\n")
        with pytest.raises(EmptyFile):
            load_csv(path)
        path.write_text("a,label\n")
        with pytest.raises(EmptyFile):
            load_csv(path)

    def test_round_trip(self, tmp_path):
        ds = generate_blobs(3, 8, 2, 1.0, seed=4)
        back = load_csv(write_csv(ds, tmp_path / "blobs.csv"))
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
