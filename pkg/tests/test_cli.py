import json
import os

import numpy as np
import pandas as pd
import pytest

from dstap.data_provider.dataset_stap import DatasetReader, split
from dstap.exp.exp_localization import LEARNING_CURVE_COLUMNS, EvalReport
from dstap.models.regressor import RegressionCNN
from dstap.utils.logger import logger
from dstap.utils.report import PGM_MAXVAL, read_pgm
from run import run

from tests.conftest import REFERENCE_CONFIG, small_scenario, train_configs

TRAIN_ARGS = ['--train_epochs', '2', '--batch_size', '8', '--hidden_width', '16']


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'scenario.json'
    path.write_text(json.dumps(small_scenario().to_dict(), indent=2))
    return str(path)


def _simulate(config_file, out, seed=5, n=30, extra=()):
    return run(['simulate', '--config', config_file, '--out', out, '--seed', str(seed), '--n', str(n),
                '--workers', '1', '--examples_per_shard', '16', *extra])


def _printed(capsys, prefix):
    return [line for line in capsys.readouterr().out.splitlines() if line.startswith(prefix)]


def test_missing_config(tmp_path, caplog):
    missing = str(tmp_path / 'nope.json')
    logger.addHandler(caplog.handler)
    try:
        assert _simulate(missing, str(tmp_path / 'data')) == 2
    finally:
        logger.removeHandler(caplog.handler)
    assert missing in caplog.text


def test_simulate_is_reproducible(config_file, tmp_path, capsys):
    assert _simulate(config_file, str(tmp_path / 'a')) == 0
    first = _printed(capsys, 'manifest checksum')
    assert _simulate(config_file, str(tmp_path / 'b')) == 0
    second = _printed(capsys, 'manifest checksum')
    assert len(first) == 1 and first == second


def test_simulate_refuses_non_empty_out(config_file, tmp_path):
    out = tmp_path / 'data'
    out.mkdir()
    (out / 'keep.txt').write_text('x')
    assert _simulate(config_file, str(out)) == 2
    assert (out / 'keep.txt').exists()
    assert _simulate(config_file, str(out), extra=['--overwrite']) == 0
    assert not (out / 'keep.txt').exists()


def test_train_evaluate_heatmap(config_file, tmp_path, capsys):
    data = str(tmp_path / 'data')
    ckpt = str(tmp_path / 'model' / 'cnn.ckpt')
    assert _simulate(config_file, data) == 0
    capsys.readouterr()

    assert run(['train', '--dataset', data, '--out', ckpt, '--seed', '3', *TRAIN_ARGS]) == 0
    out = capsys.readouterr().out
    assert 'Adam alpha = 0.0005' in out
    assert os.path.isfile(ckpt) and os.path.isfile(ckpt + '.loss.csv')
    assert len(pd.read_csv(ckpt + '.loss.csv')) == 2

    assert run(['evaluate', '--checkpoint', ckpt, '--dataset', data]) == 0
    lines = _printed(capsys, 'Err_')
    report = EvalReport.load(ckpt + '.report.json')
    assert lines == report.summary_lines()
    assert report.n_examples == 3

    prefix = str(tmp_path / 'maps' / 'ex0')
    assert run(['heatmap', '--dataset', data, '--example_id', '0', '--out', prefix]) == 0
    maxima = []
    for b in range(3):
        pixels, maxval = read_pgm(f"{prefix}_bin{b}.pgm")
        assert pixels.shape == (11, 11) and maxval == PGM_MAXVAL
        maxima.append(int(pixels.max()))
        assert len(pd.read_csv(f"{prefix}_bin{b}.csv")) == 121
    assert max(maxima) == PGM_MAXVAL

    assert run(['heatmap', '--dataset', data, '--example_id', '30', '--out', prefix]) == 2


def test_evaluate_missing_checkpoint(config_file, tmp_path):
    data = str(tmp_path / 'data')
    assert _simulate(config_file, data) == 0
    assert run(['evaluate', '--checkpoint', str(tmp_path / 'none.ckpt'), '--dataset', data]) == 2


def test_sweep(config_file, tmp_path):
    out = str(tmp_path / 'sweep')
    args = ['sweep', '--config', config_file, '--out', out, '--seeds', '0', '1', '--n_list', '20', '30',
            '--workers', '1', '--examples_per_shard', '16', *TRAIN_ARGS]
    assert run(args) == 0
    df = pd.read_csv(os.path.join(out, 'learning_curve.csv'))
    assert list(df.columns) == LEARNING_CURVE_COLUMNS
    assert len(df) == 4
    assert np.all(df['train_seconds'] >= 0)
    assert os.path.isfile(os.path.join(out, 'learning_curve.png'))


def test_sweep_rejects_unsorted_sizes(config_file, tmp_path):
    args = ['sweep', '--config', config_file, '--out', str(tmp_path / 'sweep'), '--seeds', '0',
            '--n_list', '30', '20', '--workers', '1']
    assert run(args) == 2


def test_train_is_reproducible(config_file, tmp_path, capsys):
    data = str(tmp_path / 'data')
    assert _simulate(config_file, data) == 0
    checksums = []
    for name in ('a', 'b'):
        capsys.readouterr()
        ckpt = str(tmp_path / f'{name}.ckpt')
        assert run(['train', '--dataset', data, '--out', ckpt, '--seed', '9', *TRAIN_ARGS]) == 0
        checksums.append(_printed(capsys, 'checkpoint checksum'))
    assert len(checksums[0]) == 1 and checksums[0] == checksums[1]


def test_evaluate_shape_mismatch_exits_3(config_file, tmp_path):
    data = str(tmp_path / 'data')
    assert _simulate(config_file, data) == 0
    ckpt = str(tmp_path / 'reference.ckpt')
    stats = DatasetReader(data).manifest.normalization
    RegressionCNN(train_configs(), (5, 26, 21), stats).save_checkpoint(ckpt)
    assert run(['evaluate', '--checkpoint', ckpt, '--dataset', data]) == 3


def test_dataset_dir_holds_only_manifest_and_shards(config_file, tmp_path):
    out = str(tmp_path / 'data')
    assert _simulate(config_file, out) == 0
    assert sorted(os.listdir(out)) == ['manifest.json', 'shards']
    assert os.path.isfile(out + '.log')


def test_prefix_checkpoint_evaluated_on_its_held_out_ids(config_file, tmp_path):
    data = str(tmp_path / 'data')
    ckpt = str(tmp_path / 'prefix.ckpt')
    assert _simulate(config_file, data, seed=5) == 0
    assert run(['train', '--dataset', data, '--out', ckpt, '--seed', '3', '--n_examples', '20', *TRAIN_ARGS]) == 0
    assert run(['evaluate', '--checkpoint', ckpt, '--dataset', data]) == 0

    tested = EvalReport.load(ckpt + '.report.json').test_ids()
    train_ids, test_ids = split(20, 5)
    assert tested == [int(i) for i in test_ids]
    assert not set(tested) & set(int(i) for i in train_ids)


def test_reference_mean_scnr(tmp_path, capsys):
    assert run(['simulate', '--config', REFERENCE_CONFIG, '--out', str(tmp_path / 'ref'), '--seed', '7',
                '--n', '400', '--workers', '2']) == 0
    line, = _printed(capsys, 'mean SCNR')
    assert float(line.split()[2]) == pytest.approx(-2.82, abs=0.5)
