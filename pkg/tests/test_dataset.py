import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnmil.dataset import (
    Bag,
    DatasetError,
    MilDataset,
    Standardizer,
    SyntheticSpec,
    apply_standardizer,
    fit_standardizer,
    generate_synthetic,
    load_dataset,
    meta_path,
    pad_bag_duplicate,
    standardize_bags,
    unpad_bag,
    write_dataset,
)

from conftest import assert_datasets_equal


def write_csv(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoad:
    def test_groups_rows_by_bag_in_file_order(self, tmp_path):
        lines = ["bag_id,label,f0,f1"]
        ids = ["p1", "p1", "p2", "p3", "p1", "p2", "p3", "p3", "p3", "p2"]
        labels = {"p1": 1, "p2": 0, "p3": 1}
        for i, bid in enumerate(ids):
            lines.append(f"{bid},{labels[bid]},{i},{-i}")
        ds = load_dataset(write_csv(tmp_path / "d.csv", lines))
        assert ds.bag_ids == ["p1", "p2", "p3"]
        assert [b.size for b in ds.bags] == [3, 3, 4]
        np.testing.assert_array_equal(ds.bags[0].instances[:, 0], [0, 1, 4])
        assert ds.feature_dim == 2
        assert ds.feature_names == ("f0", "f1")

    def test_conflicting_labels_name_the_bag(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["bag_id,label,f0", "B7,0,1.0", "B8,1,2.0", "B7,1,3.0"])
        with pytest.raises(DatasetError, match="B7"):
            load_dataset(path)

    @pytest.mark.parametrize("cell", ["abc", ""])
    def test_bad_feature_cell_reports_row(self, tmp_path, cell):
        path = write_csv(tmp_path / "d.csv", ["bag_id,label,f0,f1", "a,1,1.0,2.0", f"b,0,{cell},2.0"])
        with pytest.raises(DatasetError, match="row 3"):
            load_dataset(path)

    def test_no_instances(self, tmp_path):
        with pytest.raises(DatasetError, match="no instances"):
            load_dataset(write_csv(tmp_path / "d.csv", ["bag_id,label,f0"]))

    def test_declared_dim_must_match_header(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["bag_id,label,f0,f1", "a,1,1,2"])
        assert load_dataset(path, feature_dim=2).feature_dim == 2
        with pytest.raises(DatasetError):
            load_dataset(path, feature_dim=3)

    def test_lidc_shaped_counts(self, tmp_path):
        # 110 subjects, 310 nodules, 82 cancer / 28 non-cancer
        rng = np.random.default_rng(0)
        sizes = np.ones(110, dtype=int)
        for i in rng.choice(110, size=200):
            sizes[i] += 1
        while sizes.sum() > 310 or sizes.max() > 12:
            sizes[np.argmax(sizes)] -= 1
        sizes[0] += 310 - sizes.sum()
        assert sizes.sum() == 310
        lines = ["bag_id,label," + ",".join(f"f{i}" for i in range(103))]
        for b, k in enumerate(sizes):
            for _ in range(k):
                feats = ",".join(f"{v:.6f}" for v in rng.normal(size=103))
                lines.append(f"LIDC-{b:04d},{int(b < 82)},{feats}")
        ds = load_dataset(write_csv(tmp_path / "lidc.csv", lines))
        assert len(ds) == 110
        assert ds.n_instances == 310
        assert int(ds.labels.sum()) == 82
        assert int((ds.labels == 0).sum()) == 28
        assert ds.feature_dim == 103

    def test_round_trip_full_precision(self, tmp_path, small_dataset):
        path = tmp_path / "syn.csv"
        write_dataset(path, small_dataset)
        assert meta_path(path).exists()
        assert_datasets_equal(load_dataset(path), small_dataset)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=30))
    def test_round_trip_arbitrary_floats(self, tmp_path_factory, values):
        x = np.array(values[: len(values) // 3 * 3]).reshape(-1, 3)
        ds = MilDataset((Bag("x", 1, x), Bag("y", 0, -x[:1])), 3)
        path = tmp_path_factory.mktemp("rt") / "d.csv"
        write_dataset(path, ds)
        assert_datasets_equal(load_dataset(path), ds)


class TestBagContracts:
    def test_empty_bag_rejected(self):
        with pytest.raises(DatasetError):
            Bag("e", 1, np.zeros((0, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(DatasetError):
            Bag("n", 0, [[np.nan, 1.0]])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DatasetError, match="duplicate"):
            MilDataset((Bag("a", 1, [[1.0]]), Bag("a", 0, [[2.0]])), 1)

    def test_instances_are_read_only(self):
        bag = Bag("a", 1, [[1.0, 2.0]])
        with pytest.raises(ValueError):
            bag.instances[0, 0] = 5.0


class TestStandardizer:
    def test_two_point_oracle(self):
        s = fit_standardizer([Bag("a", 1, [[0.0]]), Bag("b", 0, [[2.0]])])
        # independent two-pass variance
        xs = [0.0, 2.0]
        mean = sum(xs) / len(xs)
        var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
        assert s.means[0] == mean == 1.0
        assert s.stds[0] == pytest.approx(math.sqrt(var), abs=1e-15)
        assert s.stds[0] == pytest.approx(math.sqrt(2.0), abs=1e-15)

    def test_constant_feature_is_floored(self):
        s = fit_standardizer([Bag("a", 1, [[5.0, 1.0], [5.0, 3.0]])])
        assert s.means[0] == 5.0
        assert s.stds[0] == 1.0

    def test_single_instance(self):
        s = fit_standardizer([Bag("a", 1, [[3.0, -2.0, 7.0]])])
        np.testing.assert_array_equal(s.means, [3.0, -2.0, 7.0])
        np.testing.assert_array_equal(s.stds, [1.0, 1.0, 1.0])

    def test_empty_input(self):
        with pytest.raises(DatasetError):
            fit_standardizer([])

    def test_apply_formula(self):
        s = Standardizer(np.array([1.0]), np.array([2.0]))
        out = apply_standardizer(s, Bag("a", 1, [[3.0]], witness=0))
        assert out.instances[0, 0] == 1.0
        assert out.label == 1 and out.bag_id == "a" and out.witness == 0

    def test_identity(self, toy_bags):
        s = Standardizer.identity(2)
        for bag in toy_bags:
            np.testing.assert_array_equal(apply_standardizer(s, bag).instances, bag.instances)

    def test_dimension_mismatch(self):
        with pytest.raises(DatasetError):
            apply_standardizer(Standardizer.identity(3), Bag("a", 1, [[1.0, 2.0]]))

    def test_zscore_on_fit_set_and_idempotence(self, small_dataset):
        bags = list(small_dataset.bags)
        z = standardize_bags(fit_standardizer(bags), bags)
        pooled = np.vstack([b.instances for b in z])
        np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(pooled.std(axis=0, ddof=1), 1.0, atol=1e-9)
        refit = fit_standardizer(z)
        np.testing.assert_allclose(refit.means, 0.0, atol=1e-9)
        np.testing.assert_allclose(refit.stds, 1.0, atol=1e-9)


class TestPadding:
    def test_cycle_to_twelve(self):
        bag = Bag("p", 1, [[1.0], [2.0], [3.0]])
        padded = pad_bag_duplicate(bag, 12)
        np.testing.assert_array_equal(padded.instances[:, 0], [1, 2, 3] * 4)
        np.testing.assert_array_equal(padded.padding, [False] * 3 + [True] * 9)
        assert padded.label == 1

    def test_full_bag_unchanged(self):
        x = np.arange(12.0)[:, None]
        padded = pad_bag_duplicate(Bag("f", 0, x), 12)
        np.testing.assert_array_equal(padded.instances, x)
        assert not padded.padding.any()

    def test_single_instance(self):
        padded = pad_bag_duplicate(Bag("s", 0, [[7.0, 8.0]]), 4)
        np.testing.assert_array_equal(padded.instances, [[7.0, 8.0]] * 4)

    def test_too_small_target(self):
        with pytest.raises(DatasetError):
            pad_bag_duplicate(Bag("s", 0, [[1.0], [2.0]]), 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 12))
    def test_unpad_recovers_original(self, k, extra):
        x = np.arange(k * 2, dtype=float).reshape(k, 2)
        bag = Bag("b", 1, x)
        padded = pad_bag_duplicate(bag, k + extra)
        assert {tuple(r) for r in padded.instances} == {tuple(r) for r in x}
        back = unpad_bag(padded)
        np.testing.assert_array_equal(back.instances, x)
        assert back.label == bag.label


class TestSynthetic:
    def test_lidc_shape(self):
        ds = generate_synthetic(SyntheticSpec(n_pos=82, n_neg=28, feature_dim=103, bag_size_range=(1, 12)))
        assert len(ds) == 110
        assert int(ds.labels.sum()) == 82
        assert ds.feature_dim == 103
        assert all(1 <= b.size <= 12 for b in ds.bags)

    def test_deterministic(self):
        spec = SyntheticSpec(n_pos=10, n_neg=5, feature_dim=8, seed=123)
        assert_datasets_equal(generate_synthetic(spec), generate_synthetic(spec))

    def test_different_seeds_differ(self):
        a = generate_synthetic(SyntheticSpec(n_pos=3, n_neg=3, feature_dim=4, seed=1))
        b = generate_synthetic(SyntheticSpec(n_pos=3, n_neg=3, feature_dim=4, seed=2))
        assert not np.array_equal(a.bags[0].instances[:1], b.bags[0].instances[:1])

    def test_witness_recorded_and_shifted(self):
        spec = SyntheticSpec(n_pos=200, n_neg=50, feature_dim=6, n_signal_dims=2, witness_shift=5.0, seed=9)
        ds = generate_synthetic(spec)
        wit = []
        for b in ds.bags:
            if b.label == 1:
                assert b.witness is not None and 0 <= b.witness < b.size
                wit.append(b.instances[b.witness])
            else:
                assert b.witness is None
        wit = np.array(wit)
        # shifted coordinates centre near +5, unshifted near 0
        assert abs(wit[:, :2].mean() - 5.0) < 0.2
        assert abs(wit[:, 2:].mean()) < 0.2

    def test_null_shift_matches_negatives(self):
        ds = generate_synthetic(SyntheticSpec(n_pos=300, n_neg=300, feature_dim=3, witness_shift=0.0, seed=4))
        pos = np.vstack([b.instances for b in ds.bags if b.label == 1])
        neg = np.vstack([b.instances for b in ds.bags if b.label == 0])
        np.testing.assert_allclose(pos.mean(axis=0), neg.mean(axis=0), atol=0.1)
        np.testing.assert_allclose(pos.std(axis=0), neg.std(axis=0), atol=0.1)

    @pytest.mark.parametrize("kwargs", [
        dict(n_pos=0, n_neg=0), dict(n_pos=1, n_neg=0), dict(bag_size_range=(0, 3)),
        dict(bag_size_range=(5, 4)), dict(feature_dim=0), dict(n_signal_dims=200),
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(DatasetError):
            SyntheticSpec(**kwargs)

    def test_meta_sidecar_format(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(n_pos=3, n_neg=2, feature_dim=2, seed=0))
        write_dataset(tmp_path / "s.csv", ds)
        lines = (tmp_path / "s.meta").read_text().splitlines()
        assert lines[0] == "bag_id,witness_index"
        assert len(lines) == 4
        for line, bag in zip(lines[1:], ds.bags):
            assert line == f"{bag.bag_id},{bag.witness}"
