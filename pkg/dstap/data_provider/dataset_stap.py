import os
import json
import shutil
import struct
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np
from sklearn.preprocessing import StandardScaler
from tqdm import tqdm

from dstap.data_provider.scene_sim import (ScenarioConfig, make_truth, measure_scnr, sample_target,
                                           simulate_snapshots, calibrate_scnr)
from dstap.radar.beamform import DEFAULT_LOADING, heatmap_tensor
from dstap.radar.geometry import CartesianPoint
from dstap.utils.errors import ConfigurationError, DataError, ShapeError
from dstap.utils.logger import logger


FORMAT_VERSION = 1
MANIFEST_NAME = 'manifest.json'
SHARD_DIR = 'shards'
SHARD_NAME = 'shard-%04d.bin'

# 16-byte shard header: 8-byte magic, u32 format version, u32 reserved
_SHARD_MAGIC = b'DSTAPHM\x00'
_SHARD_HEADER = struct.Struct('<8sII')
assert _SHARD_HEADER.size == 16

# RNG stream tags under the master seed
_STREAM_EXAMPLE = 0
_STREAM_CALIBRATION = 1
_STREAM_SPLIT = 2

N_CALIBRATION_DRAWS = 2000
MIN_EXAMPLES = 10

_FNV_OFFSET = 0xcbf29ce484222325
_FNV_PRIME = 0x100000001b3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes, h=_FNV_OFFSET):
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def file_checksum(filepath, chunk_size=1 << 20):
    h = _FNV_OFFSET
    with open(filepath, 'rb') as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            h = fnv1a_64(chunk, h)
    return f"{h:016x}"


def record_dtype(tensor_shape):
    # packed, little-endian, fixed stride
    return np.dtype([
        ('id', '<u8'),
        ('label', '<f8', (3,)),
        ('rcs_dbsm', '<f8'),
        ('polar', '<f8', (3,)),      # r [m], theta [deg], phi [deg]
        ('tensor', '<f4', tuple(tensor_shape)),
    ])


@dataclass
class NormalizationStats:
    feature_transform: str      # 'log10' or 'linear'
    feature_mean: float
    feature_std: float
    label_mean: list
    label_std: list

    def to_dict(self):
        return {
            'feature_transform': self.feature_transform,
            'feature_mean': self.feature_mean, 'feature_std': self.feature_std,
            'label_mean': list(self.label_mean), 'label_std': list(self.label_std),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d['feature_transform'], float(d['feature_mean']), float(d['feature_std']),
                   [float(v) for v in d['label_mean']], [float(v) for v in d['label_std']])


@dataclass
class DatasetManifest:
    scenario: ScenarioConfig
    master_seed: int
    n_examples: int
    tensor_shape: tuple
    normalization: NormalizationStats
    train_fraction: float = 0.9
    split_seed: int = 0
    epsilon_rel: float = DEFAULT_LOADING
    calibration_scale: float = 1.0
    mean_scnr_db: float = float('nan')
    shards: list = field(default_factory=list)   # [{'file', 'first_id', 'count', 'checksum'}]
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return {
            'format_version': self.format_version,
            'scenario': self.scenario.to_dict(),
            'master_seed': self.master_seed,
            'n_examples': self.n_examples,
            'tensor_shape': list(self.tensor_shape),
            'normalization': self.normalization.to_dict(),
            'split': {'train_fraction': self.train_fraction, 'split_seed': self.split_seed},
            'epsilon_rel': self.epsilon_rel,
            'calibration_scale': self.calibration_scale,
            'mean_scnr_db': self.mean_scnr_db,
            'shards': self.shards,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get('format_version') != FORMAT_VERSION:
            raise DataError(f"unsupported dataset format version {d.get('format_version')}")
        return cls(
            scenario=ScenarioConfig.from_dict(d['scenario']),
            master_seed=int(d['master_seed']),
            n_examples=int(d['n_examples']),
            tensor_shape=tuple(d['tensor_shape']),
            normalization=NormalizationStats.from_dict(d['normalization']),
            train_fraction=float(d['split']['train_fraction']),
            split_seed=int(d['split']['split_seed']),
            epsilon_rel=float(d['epsilon_rel']),
            calibration_scale=float(d['calibration_scale']),
            mean_scnr_db=float(d['mean_scnr_db']),
            shards=list(d['shards']),
        )

    def save(self, dirpath):
        # written last and renamed into place: a dataset without a manifest is unpublished
        tmp = os.path.join(dirpath, MANIFEST_NAME + '.tmp')
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        os.replace(tmp, os.path.join(dirpath, MANIFEST_NAME))

    @classmethod
    def load(cls, dirpath):
        filepath = os.path.join(dirpath, MANIFEST_NAME)
        try:
            with open(filepath, 'r', encoding='utf-8') as f:
                return cls.from_dict(json.load(f))
        except FileNotFoundError as e:
            raise ConfigurationError(f"no dataset manifest at {filepath}") from e
        except (json.JSONDecodeError, KeyError) as e:
            raise DataError(f"corrupt dataset manifest {filepath}: {e!r}") from e


@dataclass
class Example:
    id: int
    tensor: np.ndarray          # (n_bins, n_theta, n_phi) linear power
    label: CartesianPoint       # meters
    truth: object               # TargetTruth


# --- generation ------------------------------------------------------------

def example_rng(master_seed, example_id):
    return np.random.default_rng([master_seed, _STREAM_EXAMPLE, example_id])


def simulate_example(config: ScenarioConfig, master_seed, example_id, epsilon_rel=DEFAULT_LOADING):
    """Pure function of (config, master_seed, example_id)."""
    rng = example_rng(master_seed, example_id)
    truth = sample_target(rng, config)
    snapshots = simulate_snapshots(config, truth, rng)
    tensor = heatmap_tensor(snapshots, config.range_grid, config.angle_grid, config.array, epsilon_rel)
    return tensor.values, truth, measure_scnr(config, truth)


def _generate_shard(task):
    config, master_seed, first_id, count, filepath, epsilon_rel = task
    records = np.zeros(count, dtype=record_dtype(config.tensor_shape))
    scnrs = np.empty(count)
    for k in range(count):
        example_id = first_id + k
        values, truth, scnr = simulate_example(config, master_seed, example_id, epsilon_rel)
        rec = records[k]
        rec['id'] = example_id
        rec['label'] = truth.position.as_array()
        rec['rcs_dbsm'] = truth.rcs_dbsm
        rec['polar'] = (truth.r, truth.theta, truth.phi)
        rec['tensor'] = values.astype(np.float32)
        scnrs[k] = scnr

    tmp = filepath + '.tmp'
    with open(tmp, 'wb') as f:
        f.write(_SHARD_HEADER.pack(_SHARD_MAGIC, FORMAT_VERSION, 0))
        f.write(records.tobytes())
    os.replace(tmp, filepath)
    return first_id, count, file_checksum(filepath), scnrs


def split(n_examples, split_seed, train_fraction=0.9):
    """Deterministic shuffled (train ids, test ids), both sorted."""
    if n_examples < MIN_EXAMPLES:
        raise ConfigurationError(f"need at least {MIN_EXAMPLES} examples to split, got {n_examples}")
    perm = np.random.default_rng([split_seed, _STREAM_SPLIT]).permutation(n_examples)
    n_train = int(np.floor(train_fraction * n_examples + 0.5))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _feature_values(tensors, transform):
    tensors = np.asarray(tensors, dtype=np.float64)
    if transform == 'log10':
        if np.any(tensors <= 0):
            raise DataError("log10 feature transform needs strictly positive heatmap values")
        return np.log10(tensors)
    if transform == 'linear':
        return tensors
    raise ConfigurationError(f"unknown feature transform '{transform}', options: ['log10', 'linear']")


def fit_normalization(tensors, labels, feature_transform='log10'):
    """Scalar feature mean/std and per-axis label mean/std (zero std -> 1)."""
    feats = _feature_values(tensors, feature_transform).reshape(-1, 1)
    f_scaler = StandardScaler().fit(feats)
    l_scaler = StandardScaler().fit(np.asarray(labels, dtype=np.float64).reshape(-1, 3))
    if np.any(l_scaler.var_ == 0):
        logger.warning(f"label axis with zero variance, using std=1: var={l_scaler.var_.tolist()}")
    return NormalizationStats(feature_transform,
                              float(f_scaler.mean_[0]), float(f_scaler.scale_[0]),
                              l_scaler.mean_.tolist(), l_scaler.scale_.tolist())


def normalize_features(tensor, stats: NormalizationStats):
    return (_feature_values(tensor, stats.feature_transform) - stats.feature_mean) / stats.feature_std


def denormalize_features(tensor, stats: NormalizationStats):
    t = np.asarray(tensor, dtype=np.float64) * stats.feature_std + stats.feature_mean
    return 10.0 ** t if stats.feature_transform == 'log10' else t


def normalize_labels(points, stats: NormalizationStats):
    if isinstance(points, CartesianPoint):
        points = points.as_array()
    return (np.asarray(points, dtype=np.float64) - np.asarray(stats.label_mean)) / np.asarray(stats.label_std)


def denormalize_labels(v, stats: NormalizationStats):
    out = np.asarray(v, dtype=np.float64) * np.asarray(stats.label_std) + np.asarray(stats.label_mean)
    return CartesianPoint.from_array(out) if out.ndim == 1 else out


def _plan_shards(n_examples, examples_per_shard):
    return [(first, min(examples_per_shard, n_examples - first))
            for first in range(0, n_examples, examples_per_shard)]


def generate_dataset(config: ScenarioConfig, master_seed, n_examples, out_dir, workers=1,
                     examples_per_shard=500, epsilon_rel=DEFAULT_LOADING, feature_transform='log10',
                     train_fraction=0.9, split_seed=None):
    """
    Simulate, beamform and store `n_examples` examples under `out_dir`.
    Output bytes depend only on the arguments, never on `workers`.
    """
    config.validate()
    if n_examples < MIN_EXAMPLES:
        raise ConfigurationError(f"n_examples must be >= {MIN_EXAMPLES}, got {n_examples}")
    if examples_per_shard < 1:
        raise ConfigurationError(f"examples_per_shard must be >= 1, got {examples_per_shard}")
    split_seed = master_seed if split_seed is None else split_seed

    scale = calibrate_scnr(config, N_CALIBRATION_DRAWS,
                           np.random.default_rng([master_seed, _STREAM_CALIBRATION]))
    config = replace(config, amplitude_scale=scale)

    shard_dir = os.path.join(out_dir, SHARD_DIR)
    os.makedirs(shard_dir, exist_ok=True)
    plan = _plan_shards(n_examples, examples_per_shard)
    tasks = [(config, master_seed, first, count, os.path.join(shard_dir, SHARD_NAME % s), epsilon_rel)
             for s, (first, count) in enumerate(plan)]
    logger.info(f"Generating {n_examples} examples in {len(plan)} shards with {workers} worker(s)")

    try:
        if workers <= 1:
            results = [_generate_shard(t) for t in tqdm(tasks, desc='shards')]
        else:
            with Pool(processes=workers) as pool:
                results = list(tqdm(pool.imap(_generate_shard, tasks), total=len(tasks), desc='shards'))
    except OSError as e:
        shutil.rmtree(shard_dir, ignore_errors=True)
        raise DataError(f"failed writing dataset shards under {shard_dir}: {e}") from e
    except BaseException:
        shutil.rmtree(shard_dir, ignore_errors=True)
        raise

    shards, scnrs = [], []
    for s, (first_id, count, checksum, shard_scnrs) in enumerate(results):
        shards.append({'file': f"{SHARD_DIR}/{SHARD_NAME % s}", 'first_id': first_id,
                       'count': count, 'checksum': checksum})
        scnrs.append(shard_scnrs)
    mean_scnr = float(np.mean(np.concatenate(scnrs)))

    manifest = DatasetManifest(
        scenario=config, master_seed=master_seed, n_examples=n_examples,
        tensor_shape=config.tensor_shape, normalization=None,
        train_fraction=train_fraction, split_seed=split_seed, epsilon_rel=epsilon_rel,
        calibration_scale=scale, mean_scnr_db=mean_scnr, shards=shards)

    reader = DatasetReader(out_dir, manifest=manifest, verify=False)
    train_ids, _ = split(n_examples, split_seed, train_fraction)
    tensors, labels = reader.features_and_labels(train_ids)
    manifest.normalization = fit_normalization(tensors, labels, feature_transform)

    try:
        manifest.save(out_dir)
    except OSError as e:
        shutil.rmtree(shard_dir, ignore_errors=True)
        raise DataError(f"failed writing dataset manifest in {out_dir}: {e}") from e
    logger.info(f"Dataset written to {out_dir}: mean SCNR={mean_scnr:.3f} dB, "
                f"calibration scale={scale:.6e}")
    return manifest


# --- reading ---------------------------------------------------------------

class DatasetReader(object):
    """Memory-mapped access to a stored dataset."""

    def __init__(self, dirpath, manifest=None, verify=True):
        self.dirpath = dirpath
        self.manifest = manifest if manifest is not None else DatasetManifest.load(dirpath)
        self.dtype = record_dtype(self.manifest.tensor_shape)
        self._shards = []
        for shard in self.manifest.shards:
            filepath = os.path.join(dirpath, shard['file'])
            if verify and file_checksum(filepath) != shard['checksum']:
                raise DataError(f"checksum mismatch for {filepath}")
            self._shards.append((shard['first_id'], shard['count'], self._open_shard(filepath, shard['count'])))

    def _open_shard(self, filepath, count):
        try:
            with open(filepath, 'rb') as f:
                magic, version, _ = _SHARD_HEADER.unpack(f.read(_SHARD_HEADER.size))
        except (OSError, struct.error) as e:
            raise DataError(f"cannot read shard {filepath}: {e}") from e
        if magic != _SHARD_MAGIC or version != FORMAT_VERSION:
            raise DataError(f"{filepath} is not a version-{FORMAT_VERSION} heatmap shard")
        expected = _SHARD_HEADER.size + count * self.dtype.itemsize
        if os.path.getsize(filepath) != expected:
            raise DataError(f"{filepath} has {os.path.getsize(filepath)} bytes, expected {expected}")
        return np.memmap(filepath, dtype=self.dtype, mode='r', offset=_SHARD_HEADER.size, shape=(count,))

    def __len__(self):
        return self.manifest.n_examples

    def record(self, example_id):
        for first_id, count, records in self._shards:
            if first_id <= example_id < first_id + count:
                return records[example_id - first_id]
        raise IndexError(f"example {example_id} not in dataset of {len(self)}")

    def records(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise IndexError(f"example ids outside [0, {len(self)})")
        out = np.empty(len(ids), dtype=self.dtype)
        for first_id, count, records in self._shards:
            mask = (ids >= first_id) & (ids < first_id + count)
            out[mask] = records[ids[mask] - first_id]
        return out

    def features_and_labels(self, ids):
        recs = self.records(ids)
        return recs['tensor'], recs['label']

    def example(self, example_id):
        rec = self.record(example_id)
        r, theta, phi = (float(v) for v in rec['polar'])
        truth = make_truth(self.manifest.scenario, r, theta, phi, float(rec['rcs_dbsm']))
        tensor = np.array(rec['tensor'])
        if tensor.shape != tuple(self.manifest.tensor_shape):
            raise ShapeError(f"stored tensor shape {tensor.shape} != manifest {self.manifest.tensor_shape}")
        return Example(int(rec['id']), tensor, CartesianPoint.from_array(rec['label']), truth)

    def split(self):
        return split(self.manifest.n_examples, self.manifest.split_seed, self.manifest.train_fraction)
