import json
import os

import numpy as np
import pytest
import torch

from dstap.data_provider import dataset_stap
from dstap.data_provider.dataset_loader import StapDataset, get_data_provider, subset_split
from dstap.data_provider.dataset_stap import (MANIFEST_NAME, DatasetManifest, DatasetReader, NormalizationStats,
                                              denormalize_features, denormalize_labels, file_checksum,
                                              fit_normalization, fnv1a_64, generate_dataset, normalize_features,
                                              normalize_labels, simulate_example, split)
from dstap.radar.geometry import CartesianPoint, polar_to_cartesian
from dstap.utils.errors import ConfigurationError, DataError

from tests.conftest import small_scenario


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, 'rb') as f:
                out[os.path.relpath(path, root)] = f.read()
    return out


class TestChecksum:

    def test_fnv1a_known_values(self):
        assert fnv1a_64(b'') == 0xcbf29ce484222325
        assert fnv1a_64(b'a') == 0xaf63dc4c8601ec8c

    def test_file_checksum_is_chunk_independent(self, tmp_path):
        path = tmp_path / 'blob.bin'
        path.write_bytes(bytes(range(256)) * 9)
        assert file_checksum(str(path), chunk_size=7) == file_checksum(str(path))


class TestSplit:

    def test_sizes(self):
        train, test = split(10, 0)
        assert (len(train), len(test)) == (9, 1)
        train, test = split(10000, 1)
        assert (len(train), len(test)) == (9000, 1000)

    def test_deterministic_disjoint_exhaustive(self):
        train, test = split(137, 5)
        again = split(137, 5)
        assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])
        assert not set(train) & set(test)
        assert sorted(set(train) | set(test)) == list(range(137))
        assert list(train) == sorted(train)

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            split(9, 0)


class TestNormalization:

    def test_feature_round_trip_and_zero_point(self):
        rng = np.random.default_rng(0)
        tensors = 10.0 ** rng.uniform(-2, 3, size=(6, 3, 4, 5))
        labels = rng.standard_normal((6, 3)) * 100
        stats = fit_normalization(tensors, labels)
        np.testing.assert_allclose(denormalize_features(normalize_features(tensors, stats), stats),
                                   tensors, rtol=1e-10)
        flat = np.full((3, 4, 5), 10.0 ** stats.feature_mean)
        np.testing.assert_allclose(normalize_features(flat, stats), 0.0, atol=1e-12)
        z = normalize_features(tensors, stats)
        assert abs(z.mean()) < 1e-6 and abs(z.std() - 1.0) < 1e-6

    def test_linear_transform(self):
        tensors = np.arange(1.0, 25.0).reshape(1, 2, 3, 4)
        stats = fit_normalization(tensors, np.zeros((1, 3)) + [1.0, 2.0, 3.0], 'linear')
        assert stats.feature_mean == pytest.approx(12.5)
        np.testing.assert_allclose(denormalize_features(normalize_features(tensors, stats), stats), tensors)

    def test_non_positive_power(self):
        stats = NormalizationStats('log10', 0.0, 1.0, [0, 0, 0], [1, 1, 1])
        with pytest.raises(DataError):
            normalize_features(np.array([1.0, 0.0]), stats)

    def test_unknown_transform(self):
        with pytest.raises(ConfigurationError):
            fit_normalization(np.ones((1, 2)), np.zeros((1, 3)), 'sqrt')

    def test_labels(self):
        labels = np.array([[1.0, 5.0, -70.0], [3.0, 9.0, -70.0], [5.0, 1.0, -70.0]])
        stats = fit_normalization(np.ones((3, 2)), labels)
        assert stats.label_std[2] == 1.0
        np.testing.assert_allclose(normalize_labels(np.mean(labels, axis=0), stats), 0.0, atol=1e-12)
        for row in labels:
            back = denormalize_labels(normalize_labels(CartesianPoint.from_array(row), stats), stats)
            np.testing.assert_allclose(back.as_array(), row, rtol=1e-10)


class TestGeneration:

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        config = small_scenario()
        generate_dataset(config, 7, 24, str(tmp_path / 'w1'), workers=1, examples_per_shard=8)
        generate_dataset(config, 7, 24, str(tmp_path / 'w3'), workers=3, examples_per_shard=8)
        a, b = _tree_bytes(str(tmp_path / 'w1')), _tree_bytes(str(tmp_path / 'w3'))
        assert sorted(a) == sorted(b) == [MANIFEST_NAME] + [os.path.join('shards', f'shard-000{s}.bin')
                                                              for s in range(3)]
        assert a == b

    def test_regenerate_same_checksums(self, tmp_path, tiny_dataset_dir):
        generate_dataset(small_scenario(), master_seed=11, n_examples=40, out_dir=str(tmp_path),
                         workers=1, examples_per_shard=16)
        assert file_checksum(str(tmp_path / MANIFEST_NAME)) == \
            file_checksum(os.path.join(tiny_dataset_dir, MANIFEST_NAME))

    def test_too_few_examples(self, tmp_path):
        with pytest.raises(ConfigurationError):
            generate_dataset(small_scenario(), 1, 5, str(tmp_path))
        assert not os.listdir(tmp_path)

    def test_write_failure_cleans_up(self, tmp_path, monkeypatch):
        def broken(task):
            raise OSError('disk full')
        monkeypatch.setattr(dataset_stap, '_generate_shard', broken)
        with pytest.raises(DataError, match='disk full'):
            generate_dataset(small_scenario(), 1, 10, str(tmp_path), workers=1)
        assert not os.path.exists(tmp_path / 'shards')
        assert not os.path.exists(tmp_path / MANIFEST_NAME)

    def test_manifest_contents(self, tiny_reader):
        m = tiny_reader.manifest
        assert m.n_examples == 40 and m.tensor_shape == (3, 11, 11)
        assert m.scenario.amplitude_scale == m.calibration_scale
        assert np.isfinite(m.mean_scnr_db)
        assert [s['count'] for s in m.shards] == [16, 16, 8]
        assert m.normalization.feature_transform == 'log10'


class TestReader:

    def test_records_match_simulation(self, tiny_reader):
        m = tiny_reader.manifest
        for example_id in (0, 17, 39):
            values, truth, _ = simulate_example(m.scenario, m.master_seed, example_id, m.epsilon_rel)
            ex = tiny_reader.example(example_id)
            assert ex.id == example_id
            assert np.array_equal(ex.tensor, values.astype(np.float32))
            np.testing.assert_array_equal(ex.label.as_array(), truth.position.as_array())
            assert ex.truth.rcs_dbsm == truth.rcs_dbsm

    def test_vectorized_records(self, tiny_reader):
        ids = [39, 0, 16, 15]
        recs = tiny_reader.records(ids)
        assert list(recs['id']) == ids
        for k, example_id in enumerate(ids):
            assert np.array_equal(recs['tensor'][k], tiny_reader.record(example_id)['tensor'])
        with pytest.raises(IndexError):
            tiny_reader.records([40])

    def test_labels_inside_region(self, tiny_reader):
        scenario = tiny_reader.manifest.scenario
        region = scenario.target_region
        lo, _ = scenario.range_grid.bin_edges(region.range_bins[0])
        _, hi = scenario.range_grid.bin_edges(region.range_bins[1])
        recs = tiny_reader.records(range(len(tiny_reader)))
        for label, (r, theta, phi) in zip(recs['label'], recs['polar']):
            assert lo <= r <= hi
            assert region.theta_bounds[0] <= theta <= region.theta_bounds[1]
            assert region.phi_bounds[0] <= phi <= region.phi_bounds[1]
            np.testing.assert_allclose(label, polar_to_cartesian(r, theta, phi).as_array(), rtol=1e-12)

    def test_normalization_uses_train_split_only(self, tiny_reader):
        train, test = tiny_reader.split()
        tensors, labels = tiny_reader.features_and_labels(train)
        refit = fit_normalization(tensors, labels)
        assert refit == tiny_reader.manifest.normalization
        all_t, all_l = tiny_reader.features_and_labels(np.arange(40))
        assert fit_normalization(all_t, all_l) != refit

    def test_checksum_mismatch(self, tmp_path):
        out = str(tmp_path / 'ds')
        generate_dataset(small_scenario(), 3, 10, out, workers=1)
        shard = os.path.join(out, 'shards', 'shard-0000.bin')
        with open(shard, 'r+b') as f:
            f.seek(100)
            byte = f.read(1)
            f.seek(100)
            f.write(bytes([byte[0] ^ 0xFF]))
        with pytest.raises(DataError, match='checksum'):
            DatasetReader(out)
        DatasetReader(out, verify=False)

    def test_missing_and_corrupt_manifest(self, tmp_path):
        with pytest.raises(ConfigurationError):
            DatasetReader(str(tmp_path))
        (tmp_path / MANIFEST_NAME).write_text('{"format_version": 1')
        with pytest.raises(DataError):
            DatasetReader(str(tmp_path))

    def test_manifest_round_trip(self, tiny_dataset_dir):
        m = DatasetManifest.load(tiny_dataset_dir)
        with open(os.path.join(tiny_dataset_dir, MANIFEST_NAME)) as f:
            assert json.load(f) == json.loads(json.dumps(m.to_dict()))


class TestLoader:

    def test_train_provider(self, tiny_reader):
        data_set, loader = get_data_provider(tiny_reader, 'train', batch_size=8, seed=0)
        assert isinstance(data_set, StapDataset)
        assert len(data_set) == 36
        x, y = next(iter(loader))
        assert x.dtype == torch.float64 and tuple(x.shape) == (8, 3, 11, 11)
        assert tuple(y.shape) == (8, 3)

    def test_seeded_shuffle(self, tiny_reader):
        def first_batch(seed):
            return next(iter(get_data_provider(tiny_reader, 'train', batch_size=8, seed=seed)[1]))[1]
        assert torch.equal(first_batch(4), first_batch(4))

    def test_test_provider_not_shuffled(self, tiny_reader):
        data_set, loader = get_data_provider(tiny_reader, 'test', batch_size=2)
        ys = torch.cat([y for _, y in loader])
        assert torch.equal(ys, data_set.data_y)
        np.testing.assert_array_equal(data_set.ids, tiny_reader.split()[1])

    def test_prefix_subset(self, tiny_reader):
        train, test, stats = subset_split(tiny_reader, 20)
        assert len(train) == 18 and len(test) == 2
        assert max(train.max(), test.max()) < 20
        assert stats != tiny_reader.manifest.normalization
        with pytest.raises(ConfigurationError):
            subset_split(tiny_reader, 41)
