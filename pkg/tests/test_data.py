import numpy as np
import pytest

from pcsearch.data import (
    Dataset,
    SplitSpec,
    cluster_centers,
    corrupt_gaussian,
    gen_blobs,
    load_csv,
    save_csv,
    split,
)
from pcsearch.errors import CsvParseError


class TestGenBlobs:
    def test_noise_free_labels_balanced(self):
        d = gen_blobs(n=4, k=2, dim=2, label_noise=0.0, seed=1)
        assert d.n_samples == 4
        assert np.bincount(d.labels).tolist() == [2, 2]
        # no flips: labels equal the generating cluster i mod k
        np.testing.assert_array_equal(d.labels, np.arange(4) % 2)

    def test_exact_flip_count(self):
        d = gen_blobs(n=100, k=4, dim=2, label_noise=0.2, seed=7)
        clusters = np.arange(100) % 4
        assert int(np.sum(d.labels != clusters)) == 20

    def test_deterministic(self):
        a = gen_blobs(n=50, k=3, dim=5, label_noise=0.1, seed=7)
        b = gen_blobs(n=50, k=3, dim=5, label_noise=0.1, seed=7)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        a = gen_blobs(n=50, k=3, dim=2, label_noise=0.0, seed=1)
        b = gen_blobs(n=50, k=3, dim=2, label_noise=0.0, seed=2)
        assert not np.array_equal(a.features, b.features)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            gen_blobs(n=3, k=4, dim=2, label_noise=0.0, seed=1)
        with pytest.raises(ValueError):
            gen_blobs(n=10, k=2, dim=2, label_noise=1.0, seed=1)
        with pytest.raises(ValueError):
            gen_blobs(n=10, k=1, dim=2, label_noise=0.0, seed=1)

    def test_centers_on_radius_four_sphere(self):
        for k, dim in [(2, 1), (4, 2), (5, 3), (6, 7)]:
            centers = cluster_centers(k, dim)
            np.testing.assert_allclose(
                np.linalg.norm(centers, axis=1), 4.0, atol=1e-9
            )

    def test_centers_are_spread(self):
        # generator relies on distinct centers for a learnable problem
        for dim in (2, 3, 5):
            centers = cluster_centers(6, dim)
            dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
            np.fill_diagonal(dists, np.inf)
            assert dists.min() > 1.0


class TestSplit:
    def test_exact_fractions(self):
        d = gen_blobs(n=10, k=2, dim=2, label_noise=0.0, seed=3)
        tr, va, te = split(d, SplitSpec(0.8, 0.1, 0.1, seed=0))
        assert (tr.n_samples, va.n_samples, te.n_samples) == (8, 1, 1)

    def test_train_takes_remainder(self):
        d = gen_blobs(n=7, k=2, dim=2, label_noise=0.0, seed=3)
        tr, va, te = split(d, SplitSpec(0.5, 0.25, 0.25, seed=0))
        assert (tr.n_samples, va.n_samples, te.n_samples) == (5, 1, 1)

    def test_partition_recovers_dataset(self):
        d = gen_blobs(n=23, k=3, dim=2, label_noise=0.1, seed=5)
        parts = split(d, SplitSpec(0.6, 0.2, 0.2, seed=9))
        rows = np.concatenate([p.features for p in parts])
        labels = np.concatenate([p.labels for p in parts])
        got = np.lexsort(np.column_stack([rows, labels]).T)
        want = np.lexsort(np.column_stack([d.features, d.labels]).T)
        np.testing.assert_array_equal(
            np.column_stack([rows, labels])[got],
            np.column_stack([d.features, d.labels])[want],
        )

    def test_empty_part_rejected(self):
        d = gen_blobs(n=5, k=2, dim=2, label_noise=0.0, seed=3)
        with pytest.raises(ValueError):
            split(d, SplitSpec(0.9, 0.05, 0.05, seed=0))

    def test_deterministic(self):
        d = gen_blobs(n=30, k=2, dim=2, label_noise=0.0, seed=4)
        a = split(d, SplitSpec(0.5, 0.25, 0.25, seed=2))
        b = split(d, SplitSpec(0.5, 0.25, 0.25, seed=2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.3, 0.3)
        with pytest.raises(ValueError):
            SplitSpec(1.0, 0.0, 0.0)


class TestCorruptGaussian:
    def test_sigma_scales_with_severity(self):
        d = gen_blobs(n=2500, k=2, dim=4, label_noise=0.0, seed=8)
        for severity in (1, 3, 5):
            noisy = corrupt_gaussian(d, severity, seed=11)
            mse = np.mean((noisy.features - d.features) ** 2)
            sigma2 = (0.2 * severity) ** 2
            assert abs(mse - sigma2) / sigma2 < 0.05

    def test_labels_and_shape_unchanged(self):
        d = gen_blobs(n=40, k=2, dim=2, label_noise=0.2, seed=8)
        noisy = corrupt_gaussian(d, 5, seed=1)
        np.testing.assert_array_equal(noisy.labels, d.labels)
        assert noisy.features.shape == d.features.shape

    def test_deterministic(self):
        d = gen_blobs(n=40, k=2, dim=2, label_noise=0.0, seed=8)
        a = corrupt_gaussian(d, 2, seed=3)
        b = corrupt_gaussian(d, 2, seed=3)
        np.testing.assert_array_equal(a.features, b.features)

    def test_severity_out_of_range(self):
        d = gen_blobs(n=10, k=2, dim=2, label_noise=0.0, seed=8)
        for severity in (0, 6, 2.5):
            with pytest.raises(ValueError):
                corrupt_gaussian(d, severity, seed=1)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        d = gen_blobs(n=17, k=3, dim=4, label_noise=0.1, seed=2)
        path = tmp_path / "d.csv"
        save_csv(d, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.features, d.features)
        np.testing.assert_array_equal(back.labels, d.labels)
        assert back.n_classes == d.n_classes

    def test_n_classes_from_labels(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,label\n0.5,0\n1.5,1\n2.5,1\n")
        d = load_csv(path)
        assert d.n_samples == 3
        assert d.n_classes == 2

    def test_fractional_label_names_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,label\n0.5,0\n1.5,2.5\n")
        with pytest.raises(CsvParseError) as err:
            load_csv(path)
        assert err.value.row == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "absent.csv")

    def test_non_finite_feature(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,label\nnan,0\n1.0,1\n")
        with pytest.raises(ValueError):
            load_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x0,label\n0.5,0\n")
        with pytest.raises(CsvParseError):
            load_csv(path)

    def test_wrong_cell_count(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,f1,label\n0.5,0.5,0\n0.5,1\n")
        with pytest.raises(CsvParseError) as err:
            load_csv(path)
        assert err.value.row == 2


class TestDatasetValidation:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), np.array([0]), 1)

    def test_rejects_label_overflow(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 1)), np.array([0, 3]), 2)
