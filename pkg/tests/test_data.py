import numpy as np
import pytest

from upliftfs.data import (
    DataValidationError,
    Dataset,
    FeatureRanking,
    derived_rng,
    load_csv,
    split_indices,
    train_test_split,
)


def make_dataset(n=20, m=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        features=rng.normal(size=(n, m)),
        feature_names=[f"x{j}" for j in range(m)],
        treatment=rng.integers(0, 2, size=n),
        outcome=rng.integers(0, 2, size=n),
    )


class TestDataset:
    def test_shapes_and_dtypes(self):
        d = make_dataset()
        assert d.n == 20 and d.m == 3
        assert d.features.dtype == np.float64
        assert d.treatment.dtype == np.int64
        assert d.outcome.dtype == np.int64

    def test_arrays_are_readonly(self):
        d = make_dataset()
        with pytest.raises(ValueError):
            d.features[0, 0] = 9.0
        with pytest.raises(ValueError):
            d.outcome[0] = 1

    def test_rejects_nan_with_location(self):
        features = np.ones((4, 2))
        features[2, 1] = np.nan
        with pytest.raises(DataValidationError, match=r"row 2, column 'b'"):
            Dataset(features, ["a", "b"], np.zeros(4), np.zeros(4))

    def test_rejects_bad_treatment(self):
        with pytest.raises(DataValidationError, match="treatment"):
            Dataset(np.ones((3, 1)), ["a"], np.array([0, 1, 2]), np.zeros(3))

    def test_rejects_duplicate_names(self):
        with pytest.raises(DataValidationError, match="duplicate"):
            Dataset(np.ones((3, 2)), ["a", "a"], np.zeros(3), np.zeros(3))

    def test_rejects_length_mismatch(self):
        with pytest.raises(DataValidationError):
            Dataset(np.ones((3, 1)), ["a"], np.zeros(2), np.zeros(3))

    def test_rejects_empty(self):
        with pytest.raises(DataValidationError):
            Dataset(np.ones((0, 1)), ["a"], np.zeros(0), np.zeros(0))

    def test_n_classes_binary_even_if_all_zero(self):
        d = Dataset(np.ones((3, 1)), ["a"], np.array([0, 1, 0]), np.array([0, 0, 0]))
        assert d.n_classes == 2

    def test_n_classes_multiclass(self):
        d = Dataset(np.ones((4, 1)), ["a"], np.array([0, 1, 0, 1]), np.array([0, 1, 2, 1]))
        assert d.n_classes == 3

    def test_require_both_arms(self):
        d = Dataset(np.ones((3, 1)), ["a"], np.array([1, 1, 1]), np.zeros(3))
        with pytest.raises(DataValidationError, match="both"):
            d.require_both_arms()

    def test_subset_and_select_features(self):
        d = make_dataset()
        sub = d.subset(np.array([3, 1]))
        assert sub.n == 2
        assert np.array_equal(sub.features[0], d.features[3])
        sel = d.select_features([2, 0])
        assert sel.feature_names == ["x2", "x0"]
        assert np.array_equal(sel.features[:, 1], d.features[:, 0])


class TestSplit:
    def test_partition_properties(self):
        d = make_dataset(n=101)
        pair = train_test_split(d, 0.5, seed=7)
        assert pair.train.n + pair.test.n == 101
        # round(101 * 0.5) = 51 test rows
        assert pair.test.n == 51

    def test_rounding_and_clamping(self):
        assert len(split_indices(10, 0.5, 0)[1]) == 5
        assert len(split_indices(5, 0.5, 0)[1]) == 3  # round-half-up
        assert len(split_indices(10, 0.26, 0)[1]) == 3
        assert len(split_indices(2, 0.01, 0)[1]) == 1  # clamp low
        assert len(split_indices(2, 0.99, 0)[1]) == 1  # clamp high

    def test_disjoint_and_exhaustive(self):
        train, test = split_indices(37, 0.4, seed=3)
        merged = np.concatenate([train, test])
        assert sorted(merged.tolist()) == list(range(37))
        assert np.array_equal(train, np.sort(train))
        assert np.array_equal(test, np.sort(test))

    def test_same_seed_same_split(self):
        a = split_indices(50, 0.5, seed=11)
        b = split_indices(50, 0.5, seed=11)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_different_seed_different_split(self):
        a = split_indices(50, 0.5, seed=11)
        b = split_indices(50, 0.5, seed=12)
        assert not np.array_equal(a[1], b[1])

    def test_single_arm_half_warns(self):
        d = Dataset(
            features=np.arange(8, dtype=float).reshape(8, 1),
            feature_names=["a"],
            treatment=np.array([1, 0, 0, 0, 0, 0, 0, 0]),
            outcome=np.zeros(8),
        )
        with pytest.warns(UserWarning, match="lacks one treatment arm"):
            train_test_split(d, 0.5, seed=0)

    def test_invalid_fraction(self):
        with pytest.raises(DataValidationError):
            split_indices(10, 0.0, 0)
        with pytest.raises(DataValidationError):
            split_indices(10, 1.0, 0)

    def test_too_few_rows(self):
        with pytest.raises(DataValidationError):
            split_indices(1, 0.5, 0)


class TestFeatureRanking:
    def test_descending_with_index_tiebreak(self):
        r = FeatureRanking.from_scores(np.array([1.0, 3.0, 3.0, 0.5]), "demo")
        assert r.order.tolist() == [1, 2, 0, 3]
        assert r.top(2) == [1, 2]

    def test_all_tied_is_identity(self):
        r = FeatureRanking.from_scores(np.zeros(5), "demo")
        assert r.order.tolist() == [0, 1, 2, 3, 4]

    def test_top_bounds(self):
        r = FeatureRanking.from_scores(np.array([1.0, 2.0]), "demo")
        with pytest.raises(ValueError):
            r.top(0)
        with pytest.raises(ValueError):
            r.top(3)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            FeatureRanking.from_scores(np.array([]), "demo")


class TestLoadCsv(object):
    def write(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text, encoding="utf-8")
        return str(p)

    def test_roundtrip(self, tmp_path):
        path = self.write(
            tmp_path,
            "x1,treatment,x2,outcome\n"
            "0.5,1,-1.0,1\n"
            "1.5,0,2.25,0\n",
        )
        d = load_csv(path, "treatment", "outcome")
        assert d.feature_names == ["x1", "x2"]
        assert d.n == 2 and d.m == 2
        assert np.allclose(d.features, [[0.5, -1.0], [1.5, 2.25]])
        assert d.treatment.tolist() == [1, 0]
        assert d.outcome.tolist() == [1, 0]

    def test_bad_cell_reports_row_and_column(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\n1.0,1,1\noops,0,0\n")
        with pytest.raises(DataValidationError, match=r"row 3, column 'x1'"):
            load_csv(path, "w", "y")

    def test_non_finite_feature_rejected(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\nnan,1,1\n2.0,0,0\n")
        with pytest.raises(DataValidationError, match="non-finite"):
            load_csv(path, "w", "y")

    def test_bad_treatment_value(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\n1.0,2,1\n")
        with pytest.raises(DataValidationError, match=r"treatment value outside"):
            load_csv(path, "w", "y")

    def test_ragged_row(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\n1.0,1\n")
        with pytest.raises(DataValidationError, match="row 2 has 2 cells"):
            load_csv(path, "w", "y")

    def test_missing_column(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\n1.0,1,1\n")
        with pytest.raises(DataValidationError, match="'z' not found"):
            load_csv(path, "w", "z")

    def test_no_data_rows(self, tmp_path):
        path = self.write(tmp_path, "x1,w,y\n")
        with pytest.raises(DataValidationError, match="no data rows"):
            load_csv(path, "w", "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataValidationError, match="cannot open"):
            load_csv(str(tmp_path / "absent.csv"), "w", "y")


def test_derived_rng_is_deterministic_and_keyed():
    a = derived_rng(5, 2).normal(size=4)
    b = derived_rng(5, 2).normal(size=4)
    c = derived_rng(5, 3).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
