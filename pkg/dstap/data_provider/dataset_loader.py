import numpy as np
import torch
from torch.utils.data import Dataset, DataLoader

from dstap.data_provider.dataset_stap import (DatasetReader, fit_normalization, normalize_features,
                                              normalize_labels, split)
from dstap.utils.errors import ConfigurationError
from dstap.utils.logger import logger


class StapDataset(Dataset):
    """
    Normalized (features, labels) for a subset of a stored dataset.
    Features are float64 (n_bins, n_theta, n_phi); labels are float64 (3,).
    """

    def __init__(self, reader: DatasetReader, ids, stats):
        self.reader = reader
        self.ids = np.asarray(ids, dtype=np.int64)
        self.stats = stats
        tensors, labels = reader.features_and_labels(self.ids)
        self.labels_m = np.asarray(labels, dtype=np.float64)
        self.data_x = torch.from_numpy(normalize_features(tensors, stats))
        self.data_y = torch.from_numpy(normalize_labels(self.labels_m, stats))

    def __getitem__(self, index):
        return self.data_x[index], self.data_y[index]

    def __len__(self):
        return len(self.ids)


def subset_split(reader: DatasetReader, n_examples=None, fit=True):
    """
    Train/test ids over the first `n_examples` examples (the whole dataset by
    default) together with normalization stats fitted on that train portion.
    """
    manifest = reader.manifest
    if n_examples is None or n_examples == manifest.n_examples:
        train_ids, test_ids = reader.split()
        return train_ids, test_ids, manifest.normalization
    if not 0 < n_examples <= manifest.n_examples:
        raise ConfigurationError(f"subset of {n_examples} examples from a dataset of {manifest.n_examples}")
    train_ids, test_ids = split(n_examples, manifest.split_seed, manifest.train_fraction)
    if not fit:
        return train_ids, test_ids, None
    tensors, labels = reader.features_and_labels(train_ids)
    stats = fit_normalization(tensors, labels, manifest.normalization.feature_transform)
    return train_ids, test_ids, stats


def get_data_provider(reader: DatasetReader, flag, batch_size=64, seed=0, n_examples=None, stats=None):
    """(StapDataset, DataLoader) for flag in ['train', 'test']; train batches are shuffled with a seeded generator."""
    assert flag in ['train', 'test']
    train_ids, test_ids, fitted = subset_split(reader, n_examples, fit=stats is None)
    stats = fitted if stats is None else stats
    ids = train_ids if flag == 'train' else test_ids

    data_set = StapDataset(reader, ids, stats)
    shuffle_flag = flag == 'train'
    generator = torch.Generator().manual_seed(seed) if shuffle_flag else None
    data_loader = DataLoader(
        data_set,
        batch_size=batch_size,
        shuffle=shuffle_flag,
        generator=generator,
        num_workers=0,
        drop_last=False)
    logger.debug(f"data provider [{flag}]: {len(data_set)} examples, batch_size={batch_size}")
    return data_set, data_loader
