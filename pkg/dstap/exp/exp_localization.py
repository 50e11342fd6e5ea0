"""
Localization experiments: CNN vs. MVDR peak-cell error on a test split, and
the error-vs-dataset-size learning curve.
"""

import copy
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from dstap.data_provider.dataset_loader import get_data_provider, subset_split
from dstap.data_provider.dataset_stap import DatasetReader, generate_dataset, split
from dstap.models.baseline import MvdrPeakBaseline
from dstap.models.regressor import RegressionCNN
from dstap.utils.errors import ConfigurationError, DataError, InputShapeMismatch
from dstap.utils.logger import logger
from dstap.utils.losses import euclidean_distances
from dstap.utils.mem_util import MemUtil
import dstap.utils.report as report

LEARNING_CURVE_COLUMNS = ['N', 'err_cnn_m', 'err_mvdr_m', 'seed', 'train_seconds']
DESK_N_LIST = [1000, 2000, 4000, 8000]
FULL_N_LIST = [10000 * k for k in range(1, 10)]

_mem_util = MemUtil(rss_mem=True, timing=True)


@dataclass
class EvalReport:
    n_examples: int
    err_cnn: float
    err_mvdr: float
    records: list = field(default_factory=list)
    dataset_dir: str = None
    checkpoint: str = None

    def to_frame(self):
        """One row per test example, xyz triples spread over columns."""
        rows = []
        for r in self.records:
            row = {'id': r['id']}
            for key in ('truth', 'cnn', 'mvdr'):
                row.update({f"{key}_{axis}": v for axis, v in zip('xyz', r[key])})
            row['dist_cnn_m'] = r['dist_cnn_m']
            row['dist_mvdr_m'] = r['dist_mvdr_m']
            rows.append(row)
        return pd.DataFrame(rows)

    def test_ids(self):
        return [r['id'] for r in self.records]

    def summary_lines(self):
        return [f"Err_CNN  = {self.err_cnn:.6f} m  (N_test={self.n_examples})",
                f"Err_MVDR = {self.err_mvdr:.6f} m  (N_test={self.n_examples})"]

    def save(self, filepath):
        tmp = filepath + '.tmp'
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
        os.replace(tmp, filepath)

    @classmethod
    def load(cls, filepath):
        try:
            with open(filepath, 'r', encoding='utf-8') as f:
                d = json.load(f)
            return cls(**d)
        except FileNotFoundError as e:
            raise ConfigurationError(f"report not found: {filepath}") from e
        except (json.JSONDecodeError, TypeError) as e:
            raise DataError(f"corrupt report {filepath}: {e}") from e


def _per_example_records(ids, truths, cnn, mvdr, d_cnn, d_mvdr):
    records = []
    for k, example_id in enumerate(ids):
        records.append({
            'id': int(example_id),
            'truth': [float(v) for v in truths[k]],
            'cnn': [float(v) for v in cnn[k]],
            'mvdr': [float(v) for v in mvdr[k]],
            'dist_cnn_m': float(d_cnn[k]),
            'dist_mvdr_m': float(d_mvdr[k]),
        })
    return records


def held_out_ids(model: RegressionCNN, reader: DatasetReader):
    """
    Test ids of the split the model was trained on, so a checkpoint fitted on
    a prefix is never scored on its own training examples.
    """
    fitted = getattr(model, 'train_split', None)
    if fitted is None:
        _, test_ids = reader.split()
        return test_ids
    n = int(fitted['n_examples'])
    if n > reader.manifest.n_examples:
        raise ConfigurationError(f"model was trained on a split of {n} examples, "
                                 f"dataset {reader.dirpath} holds {reader.manifest.n_examples}")
    _, test_ids = split(n, fitted['split_seed'], fitted['train_fraction'])
    return test_ids


def evaluate(model: RegressionCNN, reader: DatasetReader, test_ids=None, checkpoint=None):
    """
    Err_CNN and Err_MVDR in meters over the same test ids (the dataset's
    test split the model was trained against unless `test_ids` is given).
    """
    manifest = reader.manifest
    if tuple(model.input_shape) != tuple(manifest.tensor_shape):
        raise InputShapeMismatch(f"checkpoint expects tensors {tuple(model.input_shape)}, "
                                 f"dataset {reader.dirpath} holds {tuple(manifest.tensor_shape)}")
    if test_ids is None:
        test_ids = held_out_ids(model, reader)
    test_ids = np.asarray(test_ids, dtype=np.int64)

    tensors, truths = reader.features_and_labels(test_ids)
    truths = np.asarray(truths, dtype=np.float64)
    cnn = model.predict(tensors)
    mvdr = MvdrPeakBaseline(manifest.scenario).predict(tensors)

    d_cnn = euclidean_distances(cnn, truths)
    d_mvdr = euclidean_distances(mvdr, truths)
    result = EvalReport(
        n_examples=int(len(test_ids)),
        err_cnn=float(np.mean(d_cnn)),
        err_mvdr=float(np.mean(d_mvdr)),
        records=_per_example_records(test_ids, truths, cnn, mvdr, d_cnn, d_mvdr),
        dataset_dir=str(reader.dirpath),
        checkpoint=None if checkpoint is None else str(checkpoint))
    logger.info(f"{model.name} vs MVDR on {result.n_examples} test examples: "
                f"Err_CNN={result.err_cnn:.3f} m, Err_MVDR={result.err_mvdr:.3f} m")
    return result


def train_on_prefix(configs, reader: DatasetReader, n_examples=None):
    """Train a fresh network on the train split of the first `n_examples` examples."""
    train_ids, test_ids, stats = subset_split(reader, n_examples)
    _, train_loader = get_data_provider(reader, 'train', configs.batch_size, configs.seed,
                                        n_examples=n_examples, stats=stats)
    model = RegressionCNN(configs, tuple(reader.manifest.tensor_shape), stats)
    manifest = reader.manifest
    model.train_split = {'n_examples': int(n_examples or manifest.n_examples),
                         'split_seed': int(manifest.split_seed), 'train_fraction': float(manifest.train_fraction)}
    t0 = time.perf_counter()
    model.train(train_loader)
    return model, test_ids, time.perf_counter() - t0


def learning_curve(scenario, n_list, seeds, train_configs, out_dir, workers=1, **dataset_kwargs):
    """
    For every seed, generate one dataset of size max(n_list) and, for each N,
    train on its first N examples and evaluate on that prefix's test split.
    Returns a DataFrame with LEARNING_CURVE_COLUMNS, one row per (N, seed).
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ConfigurationError("learning curve needs at least one N")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError(f"N values must be strictly ascending, got {n_list}")
    if not seeds:
        raise ConfigurationError("learning curve needs at least one seed")

    rows = []
    for seed in seeds:
        data_dir = os.path.join(out_dir, f"data_seed{seed}")
        generate_dataset(scenario, seed, n_list[-1], data_dir, workers=workers, **dataset_kwargs)
        reader = DatasetReader(data_dir)
        _mem_util.print_memory_usage(f"dataset seed={seed}")

        for n in n_list:
            configs = copy.deepcopy(train_configs)
            configs.seed = seed
            model, test_ids, seconds = train_on_prefix(configs, reader, n)
            result = evaluate(model, reader, test_ids)
            rows.append({'N': n, 'err_cnn_m': result.err_cnn, 'err_mvdr_m': result.err_mvdr,
                         'seed': seed, 'train_seconds': seconds})
            logger.info(f"learning curve: seed={seed} N={n} Err_CNN={result.err_cnn:.3f} m "
                        f"Err_MVDR={result.err_mvdr:.3f} m ({seconds:.1f}s)")
            _mem_util.print_memory_usage(f"N={n} seed={seed}")

    df = pd.DataFrame(rows, columns=LEARNING_CURVE_COLUMNS)
    report.print_dataframe(df, 'Learning Curve', print_index=False)
    return df
