import json
import os

import numpy as np
import pytest

from vertcohirf.core.errors import DatasetError
from vertcohirf.services.datagen import (
    CENTER_SPACING,
    FeaturePartition,
    gen_blobs,
    gen_multimodal,
    load_csv,
    partition_features,
    polygon_centers,
    write_csv,
)


class TestMultimodal:
    """Test the spheres x square generator"""

    def test_six_nonempty_classes(self, multimodal_dataset):
        counts = np.bincount(multimodal_dataset.labels)
        assert len(counts) == 6
        assert counts.min() > 0
        assert multimodal_dataset.features.shape == (1200, 5)

    def test_sphere_radii(self, multimodal_dataset):
        radii = np.linalg.norm(multimodal_dataset.features[:, :3], axis=1)
        sphere = multimodal_dataset.labels // 3
        assert abs(radii[sphere == 0].mean() - 3.0) < 0.05
        assert abs(radii[sphere == 1].mean() - 7.0) < 0.05
        assert np.sum(sphere == 0) == 600

    def test_square_view_has_three_points(self, multimodal_dataset):
        assert len(np.unique(multimodal_dataset.features[:, 3:], axis=0)) == 3

    def test_modalities_are_independent(self):
        for seed in range(3):
            data = gen_multimodal(seed=seed)
            corr = np.corrcoef(data.labels // 3, data.labels % 3)[0, 1]
            assert abs(corr) < 0.1

    def test_seeded(self):
        a, b = gen_multimodal(n=100, seed=4), gen_multimodal(n=100, seed=4)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_odd_n(self):
        with pytest.raises(ValueError):
            gen_multimodal(n=11)


class TestBlobs:
    """Test the Gaussian blob generator"""

    def test_shapes_and_partition(self):
        dataset, partition = gen_blobs(n=400, c=4, sigma=0.5, n_noise_features=3, a=3, seed=1)
        assert dataset.features.shape == (400, 9)
        assert partition.sets == [(0, 1, 6), (2, 3, 7), (4, 5, 8)]
        assert all(partition.overlap(i, j) == 0 for i in range(3) for j in range(i + 1, 3))
        partition.validate(9)

    def test_cluster_means_within_standard_error(self):
        n, c, sigma = 1000, 4, 0.5
        dataset, _ = gen_blobs(n=n, c=c, sigma=sigma, a=3, seed=2)
        centers = np.asarray(dataset.metadata["centers"])
        se = dataset.metadata["noise_std"] / np.sqrt(n / c)
        for label in range(c):
            means = dataset.features[dataset.labels == label, :6].mean(axis=0)
            assert np.all(np.abs(means - centers[label, :6]) < 4 * se)

    def test_adjacent_centers_are_spaced(self):
        centers = polygon_centers(4, 2)
        gaps = np.linalg.norm(centers - np.roll(centers, 1, axis=0), axis=1)
        assert np.allclose(gaps, CENTER_SPACING)

    def test_non_adjacent_centers_are_farther(self):
        centers = polygon_centers(4, 2)
        assert np.linalg.norm(centers[0] - centers[2]) == pytest.approx(CENTER_SPACING * np.sqrt(2))
        assert np.linalg.norm(centers[1] - centers[3]) == pytest.approx(CENTER_SPACING * np.sqrt(2))
        hexagon = polygon_centers(6, 2)
        assert np.linalg.norm(hexagon[0] - hexagon[3]) == pytest.approx(2 * CENTER_SPACING)

    def test_balanced_classes(self):
        dataset, _ = gen_blobs(n=1000, c=4, seed=0)
        assert np.bincount(dataset.labels).tolist() == [250] * 4

    @pytest.mark.parametrize("kwargs", [{"sigma": 0.0}, {"sigma": 1.5}, {"n": 1001}])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            gen_blobs(**kwargs)


class TestPartitionFeatures:
    """Test the overlap-capped vertical partitioner"""

    def test_no_sharing_is_disjoint(self):
        partition = partition_features(20, 4, share_prob=0.0, seed=3)
        assert sum(len(s) for s in partition.sets) == 20
        assert set().union(*partition.sets) == set(range(20))

    def test_single_agent_gets_everything(self):
        assert partition_features(7, 1, seed=0).sets == [tuple(range(7))]

    def test_every_agent_gets_a_feature(self):
        for seed in range(30):
            partition = partition_features(4, 4, seed=seed)
            assert all(partition.sets)

    def test_share_rate_and_cap(self):
        p, a, draws = 2094, 4, 20
        duplicated = 0
        for seed in range(draws):
            partition = partition_features(p, a, share_prob=0.2, overlap_cap=0.3, seed=seed)
            partition.validate(p, overlap_cap=0.3)
            duplicated += sum(len(s) for s in partition.sets) - p
        rate = duplicated / (draws * p * (a - 1))
        tolerance = 4 * np.sqrt(0.2 * 0.8 / (draws * p * (a - 1)))
        assert 0.1 <= rate <= 0.2 + tolerance

    def test_too_few_features(self):
        with pytest.raises(ValueError):
            partition_features(2, 3)

    def test_validate_rejects_overlap_above_cap(self):
        partition = FeaturePartition([(0, 1, 2), (1, 2, 3)])
        with pytest.raises(DatasetError, match="cap"):
            partition.validate(4, overlap_cap=0.3)

    def test_validate_rejects_uncovered_features(self):
        with pytest.raises(DatasetError):
            FeaturePartition([(0,), (1,)]).validate(3)


class TestCsv:
    """Test CSV ingestion and export"""

    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_numeric_matrix(self, tmp_path):
        dataset = load_csv(self.write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
        assert dataset.features.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
        assert dataset.labels is None
        assert dataset.feature_names == ["a", "b"]

    def test_label_column(self, tmp_path):
        dataset = load_csv(self.write(tmp_path, "x,y\n0.5,1\n1.5,0\n"), label_column="y")
        assert dataset.features.shape == (2, 1)
        assert dataset.labels.tolist() == [1, 0]

    def test_categorical_one_hot(self, tmp_path):
        text = "size,color\n1,red\n2,blue\n3,green\n4,red\n"
        dataset = load_csv(self.write(tmp_path, text), categorical_columns=["color"])
        assert dataset.feature_names == ["size", "color=blue", "color=green", "color=red"]
        assert dataset.features[:, 1:].sum(axis=1).tolist() == [1.0] * 4
        assert dataset.features[0].tolist() == [1.0, 0.0, 0.0, 1.0]

    def test_ragged_row_reports_line(self, tmp_path):
        with pytest.raises(DatasetError) as exc:
            load_csv(self.write(tmp_path, "a,b\n1,2\n3\n"))
        assert exc.value.line == 3

    def test_non_numeric_reports_line(self, tmp_path):
        with pytest.raises(DatasetError) as exc:
            load_csv(self.write(tmp_path, "a,b\n1,2\n3,x\n4,5\n"))
        assert exc.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_csv(str(tmp_path / "absent.csv"))

    def test_multimodal_round_trip(self, tmp_path):
        original = gen_multimodal(n=200, seed=5)
        path = write_csv(original, str(tmp_path / "out" / "multimodal.csv"))
        loaded = load_csv(path, label_column="label")

        assert np.array_equal(loaded.features, original.features)
        assert np.array_equal(loaded.labels, original.labels)
        with open(os.path.join(tmp_path, "out", "multimodal.json"), encoding="utf-8") as f:
            sidecar = json.load(f)
        assert sidecar == {"n": 200, "p": 5, "c": 6, "seed": 5, "generator": "multimodal"}
