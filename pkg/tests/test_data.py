import gzip
import struct

import numpy as np
import pytest

from lhc.data import (BatchIterator, DataFormatError, LabeledDataset,
                      PlantedHierarchySpec, generate_planted, load_features,
                      load_mnist, one_hot, save_features, train_test_split)


def write_idx_pair(directory, split, images, labels, image_magic=0x00000803,
                   label_magic=0x00000801, gz=False):
    img_name = f"{split}-images-idx3-ubyte"
    lab_name = f"{split}-labels-idx1-ubyte"
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", image_magic, n, rows, cols) + images.tobytes()
    lab_bytes = struct.pack(">II", label_magic, labels.shape[0]) + labels.tobytes()
    if gz:
        (directory / (img_name + ".gz")).write_bytes(gzip.compress(img_bytes))
        (directory / (lab_name + ".gz")).write_bytes(gzip.compress(lab_bytes))
    else:
        (directory / img_name).write_bytes(img_bytes)
        (directory / lab_name).write_bytes(lab_bytes)


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    train_images = rng.integers(0, 256, size=(40, 28, 28), dtype=np.uint8)
    train_labels = rng.integers(0, 10, size=40, dtype=np.uint8)
    test_images = rng.integers(0, 256, size=(12, 28, 28), dtype=np.uint8)
    test_labels = rng.integers(0, 10, size=12, dtype=np.uint8)
    write_idx_pair(tmp_path, "train", train_images, train_labels)
    write_idx_pair(tmp_path, "t10k", test_images, test_labels)
    return tmp_path


class TestMnistLoader:
    def test_loads_and_scales(self, mnist_dir):
        train, test = load_mnist(mnist_dir)
        assert train.features.shape == (40, 784)
        assert test.features.shape == (12, 784)
        assert train.features.min() >= 0.0 and train.features.max() <= 1.0
        assert set(np.unique(train.labels)) <= set(range(10))
        assert train.class_names == [str(d) for d in range(10)]

    def test_gzip_variant(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=5, dtype=np.uint8)
        write_idx_pair(tmp_path, "train", images, labels, gz=True)
        write_idx_pair(tmp_path, "t10k", images, labels, gz=True)
        train, _ = load_mnist(tmp_path)
        assert len(train) == 5

    def test_bit_deterministic(self, mnist_dir):
        a, _ = load_mnist(mnist_dir)
        b, _ = load_mnist(mnist_dir)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_bad_image_magic_names_file(self, tmp_path):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=3, dtype=np.uint8)
        write_idx_pair(tmp_path, "train", images, labels, image_magic=0x00000802)
        write_idx_pair(tmp_path, "t10k", images, labels)
        with pytest.raises(DataFormatError) as exc:
            load_mnist(tmp_path)
        assert "train-images-idx3-ubyte" in str(exc.value)
        assert "0x00000802" in str(exc.value)

    def test_bad_label_magic(self, tmp_path):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=3, dtype=np.uint8)
        write_idx_pair(tmp_path, "train", images, labels, label_magic=0x00000803)
        write_idx_pair(tmp_path, "t10k", images, labels)
        with pytest.raises(DataFormatError, match="label magic"):
            load_mnist(tmp_path)

    def test_truncated_images_rejected(self, tmp_path):
        rng = np.random.default_rng(3)
        images = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=3, dtype=np.uint8)
        write_idx_pair(tmp_path, "train", images, labels)
        write_idx_pair(tmp_path, "t10k", images, labels)
        path = tmp_path / "train-images-idx3-ubyte"
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(DataFormatError, match="pixel bytes"):
            load_mnist(tmp_path)

    def test_count_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
        write_idx_pair(tmp_path, "train", images, rng.integers(0, 10, size=4, dtype=np.uint8))
        write_idx_pair(tmp_path, "t10k", images, rng.integers(0, 10, size=4, dtype=np.uint8))
        lab = tmp_path / "train-labels-idx1-ubyte"
        lab.write_bytes(struct.pack(">II", 0x00000801, 3)
                        + rng.integers(0, 10, size=3, dtype=np.uint8).tobytes())
        with pytest.raises(DataFormatError, match="images but"):
            load_mnist(tmp_path)

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(DataFormatError, match="missing"):
            load_mnist(tmp_path)


class TestPlanted:
    def test_same_seed_bitwise_identical(self):
        spec = PlantedHierarchySpec(depth=2, feature_dim=8, seed=11)
        ds1, tree1 = generate_planted(spec)
        ds2, tree2 = generate_planted(spec)
        assert ds1.features.tobytes() == ds2.features.tobytes()
        assert tree1.to_table() == tree2.to_table()

    def test_tree_leaves_cover_all_classes_at_depth(self):
        spec = PlantedHierarchySpec(depth=3, feature_dim=4, seed=0)
        _, tree = generate_planted(spec)
        leaves = tree.leaves()
        assert sorted(l.class_id for l in leaves) == list(range(8))
        assert all(len(l.prefix) == 3 for l in leaves)

    def nearest_mean_accuracy(self, ds):
        means = np.stack([ds.features[ds.labels == c].mean(axis=0)
                          for c in range(ds.num_classes)])
        d2 = ((ds.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        return float((d2.argmin(axis=1) == ds.labels).mean())

    def test_vanishing_noise_gives_point_clusters(self):
        spec = PlantedHierarchySpec(depth=2, feature_dim=8, sigma_within=1e-9,
                                    samples_per_class=20, seed=5)
        ds, _ = generate_planted(spec)
        assert self.nearest_mean_accuracy(ds) == 1.0

    def test_reference_spec_is_nearest_mean_separable(self):
        spec = PlantedHierarchySpec(depth=3, feature_dim=16, sigma_level=1.0,
                                    sigma_within=0.1, samples_per_class=200, seed=0)
        ds, _ = generate_planted(spec)
        assert self.nearest_mean_accuracy(ds) >= 0.99

    def test_sibling_means_closer_than_non_siblings(self):
        hits = 0
        for seed in range(10):
            spec = PlantedHierarchySpec(depth=3, feature_dim=16, sigma_level=1.0,
                                        sigma_within=0.1, samples_per_class=10, seed=seed)
            ds, _ = generate_planted(spec)
            means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(8)])
            sib, non = [], []
            for a in range(8):
                for b in range(a + 1, 8):
                    dist = np.linalg.norm(means[a] - means[b])
                    (sib if a // 2 == b // 2 else non).append(dist)
            hits += np.mean(sib) < np.mean(non)
        assert hits >= 9

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            PlantedHierarchySpec(depth=0, feature_dim=4)
        with pytest.raises(ValueError):
            PlantedHierarchySpec(depth=2, feature_dim=4, sigma_level=0.0)


class TestFeatureFiles:
    def dataset(self):
        rng = np.random.default_rng(8)
        return LabeledDataset(rng.standard_normal((100, 512)),
                              rng.integers(0, 7, size=100), num_classes=7)

    def test_round_trip_is_bit_exact(self, tmp_path):
        ds = self.dataset()
        path = tmp_path / "feats.lhf1"
        save_features(path, ds)
        loaded = load_features(path)
        assert loaded.features.tobytes() == ds.features.tobytes()
        assert loaded.labels.tolist() == ds.labels.tolist()
        assert loaded.num_classes == 7

    def test_header_shape_matches_payload(self, tmp_path):
        path = tmp_path / "feats.lhf1"
        save_features(path, self.dataset())
        raw = path.read_bytes()
        n, d, c = struct.unpack("<III", raw[4:16])
        assert (n, d, c) == (100, 512, 7)
        assert len(raw) == 16 + n * d * 8 + n * 2

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "feats.lhf1"
        save_features(path, self.dataset())
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            load_features(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "feats.lhf1"
        save_features(path, self.dataset())
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="expected"):
            load_features(path)

    def test_nan_payload_reports_row(self, tmp_path):
        path = tmp_path / "feats.lhf1"
        n, d = 4, 3
        feats = np.arange(12, dtype="<f8").reshape(n, d)
        feats[2, 1] = np.nan
        blob = (b"LHF1" + struct.pack("<III", n, d, 2) + feats.tobytes()
                + np.zeros(n, dtype="<u2").tobytes())
        path.write_bytes(blob)
        with pytest.raises(DataFormatError, match="row 2"):
            load_features(path)


class TestBatching:
    def dataset(self, n=10, num_classes=5):
        rng = np.random.default_rng(0)
        return LabeledDataset(rng.standard_normal((n, 3)),
                              np.arange(n) % num_classes, num_classes=num_classes)

    def test_final_partial_batch_kept(self):
        sizes = [x.shape[0] for x, _ in BatchIterator(self.dataset(), 4, seed=0).epoch(1)]
        assert sizes == [4, 4, 2]

    def test_one_hot_matches_labels(self):
        vec = one_hot(np.array([3]), 10)
        assert vec.shape == (1, 10)
        assert vec[0, 3] == 1.0 and vec.sum() == 1.0

    def test_epochs_reshuffle_but_cover_everything(self):
        it = BatchIterator(self.dataset(), 4, seed=7)
        p1, p2 = it.permutation(1), it.permutation(2)
        assert sorted(p1) == sorted(p2) == list(range(10))
        assert p1.tolist() != p2.tolist()

    def test_permutation_is_deterministic_in_seed_and_epoch(self):
        a = BatchIterator(self.dataset(), 4, seed=7).permutation(3)
        b = BatchIterator(self.dataset(), 4, seed=7).permutation(3)
        assert a.tolist() == b.tolist()

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValueError):
            BatchIterator(self.dataset(), 11, seed=0)


class TestSplitting:
    def test_stratified_and_deterministic(self):
        rng = np.random.default_rng(1)
        ds = LabeledDataset(rng.standard_normal((40, 2)),
                            np.repeat(np.arange(4), 10), num_classes=4)
        train, test = train_test_split(ds, 0.25, seed=3)
        # ceil(0.25 * 10) = 3 rows per class go to test
        assert len(train) == 28 and len(test) == 12
        assert all((test.labels == c).sum() == 3 for c in range(4))
        train2, test2 = train_test_split(ds, 0.25, seed=3)
        assert test.features.tobytes() == test2.features.tobytes()


class TestLabeledDatasetValidation:
    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataFormatError, match="labels outside"):
            LabeledDataset(np.zeros((2, 2)), np.array([0, 5]), num_classes=3)

    def test_rejects_non_finite_rows(self):
        feats = np.zeros((3, 2))
        feats[1, 0] = np.inf
        with pytest.raises(DataFormatError, match="row 1"):
            LabeledDataset(feats, np.zeros(3, dtype=int), num_classes=2)
