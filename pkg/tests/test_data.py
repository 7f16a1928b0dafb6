import gzip
import struct

import numpy as np
import pytest

from conftest import MNIST_IMAGES, MNIST_LABELS
from submfl.data import (
    BadMagicError,
    CountMismatchError,
    Dataset,
    DataError,
    TruncatedFileError,
    holdout_split,
    load_idx,
    partition_equal,
    synthetic_blobs,
    write_idx,
)
from submfl.nn import Hyperparams, NetworkSpec, init_network
from submfl.federation import local_train
from submfl.pruning import Mask
from submfl.nn import evaluate


def write_raw(path, magic, dims, payload: bytes):
    path.write_bytes(struct.pack(f">I{len(dims)}I", magic, *dims) + payload)


@pytest.fixture
def single_image(tmp_path):
    images, labels = tmp_path / "img", tmp_path / "lbl"
    write_raw(images, 0x803, (1, 2, 2), bytes([255, 0, 128, 1]))
    write_raw(labels, 0x801, (1,), bytes([7]))
    return images, labels


class TestIdx:
    def test_scaling_endpoints(self, single_image):
        ds = load_idx(*single_image)
        assert ds.features.tolist() == [[1.0, 0.0, 128 / 255, 1 / 255]]
        assert ds.labels.tolist() == [7]

    def test_label_path_with_image_magic(self, tmp_path, single_image):
        images, _ = single_image
        with pytest.raises(BadMagicError):
            load_idx(images, images)

    def test_truncated_payload(self, tmp_path, single_image):
        images, labels = single_image
        images.write_bytes(images.read_bytes()[:-1])
        with pytest.raises(TruncatedFileError):
            load_idx(images, labels)

    def test_truncated_header(self, tmp_path, single_image):
        images, labels = single_image
        images.write_bytes(images.read_bytes()[:9])
        with pytest.raises(TruncatedFileError):
            load_idx(images, labels)

    def test_count_mismatch(self, tmp_path, single_image):
        images, _ = single_image
        labels = tmp_path / "two"
        write_raw(labels, 0x801, (2,), bytes([1, 2]))
        with pytest.raises(CountMismatchError):
            load_idx(images, labels)

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, TruncatedFileError, CountMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, DataError) for k in kinds)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_idx(tmp_path / "nope", tmp_path / "nope2")

    def test_gzip(self, tmp_path, single_image):
        images, labels = single_image
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(images.read_bytes()))
        assert np.array_equal(load_idx(gz, labels).features, load_idx(images, labels).features)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.uniform(size=(30, 12)), rng.integers(0, 10, size=30))
        write_idx(ds, tmp_path / "i.gz", tmp_path / "l", shape=(3, 4))
        back = load_idx(tmp_path / "i.gz", tmp_path / "l")
        assert np.abs(back.features - ds.features).max() <= 0.5 / 255 + 1e-12
        assert np.array_equal(back.labels, ds.labels)

    @pytest.mark.skipif(not MNIST_IMAGES.exists(), reason="bundled MNIST subset missing")
    def test_bundled_mnist_subset(self):
        ds = load_idx(MNIST_IMAGES, MNIST_LABELS)
        assert len(ds) == 10000 and ds.dim == 784
        assert set(np.unique(ds.labels)) == set(range(10))
        assert ds.features.min() == 0.0 and ds.features.max() == 1.0


class TestSynthetic:
    def test_balanced(self):
        ds = synthetic_blobs(100, 10, 5, 6.0, seed=0)
        assert np.bincount(ds.labels).tolist() == [10] * 10

    def test_deterministic(self):
        a = synthetic_blobs(50, 5, 3, 4.0, seed=9)
        b = synthetic_blobs(50, 5, 3, 4.0, seed=9)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_within_unit_cube(self):
        ds = synthetic_blobs(500, 3, 4, 20.0, seed=1)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_rejects_zero_dim(self):
        with pytest.raises(ValueError):
            synthetic_blobs(10, 2, 0, 1.0, seed=0)

    def test_well_separated_is_learnable(self):
        ds = synthetic_blobs(1000, 10, 20, separation=10.0, seed=3)
        train, val = holdout_split(ds, 0.2, seed=0)
        spec = NetworkSpec((20, 32, 10))
        params = init_network(spec, 0)
        params, _, _ = local_train(params, Mask.ones(spec), train, Hyperparams(local_epochs=60), 0)
        assert evaluate(params, val.features, val.labels)[1] >= 0.99


class TestPartition:
    def test_equal_shards(self):
        ds = synthetic_blobs(1000, 10, 2, 3.0, seed=0)
        assert partition_equal(ds, 100, seed=1).sizes() == [10] * 100

    def test_remainder_spread(self):
        ds = synthetic_blobs(10, 2, 2, 3.0, seed=0)
        assert sorted(partition_equal(ds, 3, seed=0).sizes(), reverse=True) == [4, 3, 3]

    @pytest.mark.parametrize("n,k", [(10, 3), (97, 10), (64, 64), (5, 1)])
    def test_disjoint_and_exhaustive(self, n, k):
        ds = synthetic_blobs(n, 1, 2, 3.0, seed=0)
        shards = partition_equal(ds, k, seed=4).shards
        flat = np.concatenate(shards)
        assert sorted(flat.tolist()) == list(range(n))
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1

    def test_too_many_devices(self):
        ds = synthetic_blobs(5, 1, 2, 3.0, seed=0)
        with pytest.raises(ValueError):
            partition_equal(ds, 6, seed=0)

    def test_deterministic(self):
        ds = synthetic_blobs(40, 4, 2, 3.0, seed=0)
        a, b = partition_equal(ds, 7, seed=2), partition_equal(ds, 7, seed=2)
        assert all(np.array_equal(x, y) for x, y in zip(a.shards, b.shards))


class TestHoldout:
    def test_sizes(self):
        ds = synthetic_blobs(1000, 10, 2, 3.0, seed=0)
        train, val = holdout_split(ds, 0.1, seed=0)
        assert (len(train), len(val)) == (900, 100)

    def test_partition_property(self):
        ds = Dataset(np.linspace(0, 1, 200).reshape(100, 2), np.arange(100) % 10)
        train, val = holdout_split(ds, 0.3, seed=5)
        keys = lambda d: {tuple(r) for r in d.features}
        assert keys(train) | keys(val) == keys(ds)
        assert not keys(train) & keys(val)

    def test_deterministic(self):
        ds = synthetic_blobs(100, 10, 2, 3.0, seed=0)
        a, b = holdout_split(ds, 0.1, seed=3), holdout_split(ds, 0.1, seed=3)
        assert np.array_equal(a[1].features, b[1].features)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 0.001])
    def test_degenerate(self, fraction):
        ds = synthetic_blobs(100, 10, 2, 3.0, seed=0)
        with pytest.raises(ValueError):
            holdout_split(ds, fraction, seed=0)
