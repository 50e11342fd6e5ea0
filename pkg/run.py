import os
import sys
import shutil
import argparse

from dstap.data_provider.dataset_stap import (DatasetReader, MANIFEST_NAME, N_CALIBRATION_DRAWS,
                                              file_checksum, generate_dataset)
from dstap.data_provider.scene_sim import load_scenario
from dstap.exp.exp_localization import DESK_N_LIST, FULL_N_LIST, evaluate, learning_curve, train_on_prefix
from dstap.models.regressor import RegressionCNN
from dstap.radar.beamform import DEFAULT_LOADING
from dstap.utils.errors import ConfigurationError, DstapError
from dstap.utils.logger import logger, add_file_handler, remove_handler
from dstap.utils.mem_util import MemUtil
from dstap.utils.misc_util import experiment_sig, print_configs, set_experiment_sig, set_num_threads, set_seed
import dstap.utils.report as report


_mem_util = MemUtil(rss_mem=True, timing=True)


def _add_train_args(parser):
    parser.add_argument('--train_epochs', type=int, default=40, help='train epochs')
    parser.add_argument('--batch_size', type=int, default=64, help='batch size of train input data')
    parser.add_argument('--learning_rate', type=float, default=5e-4, help='Adam step size (alpha)')
    parser.add_argument('--beta1', type=float, default=0.9, help='Adam first-moment decay')
    parser.add_argument('--beta2', type=float, default=0.999, help='Adam second-moment decay')
    parser.add_argument('--adam_eps', type=float, default=1e-8, help='Adam epsilon')
    parser.add_argument('--hidden_width', type=int, default=128, help='width of the hidden fully connected layer')
    parser.add_argument('--num_threads', type=int, default=1,
                        help='torch intra-op threads; results are bit-identical for a fixed value')


def _add_dataset_args(parser):
    parser.add_argument('--workers', type=int, default=os.cpu_count(), help='simulation worker processes')
    parser.add_argument('--examples_per_shard', type=int, default=500, help='examples per shard file')
    parser.add_argument('--epsilon_rel', type=float, default=DEFAULT_LOADING,
                        help='diagonal loading relative to trace(R)/L')
    parser.add_argument('--feature_transform', type=str, default='log10',
                        help='heatmap transform before standardization, options: [log10, linear]')
    parser.add_argument('--train_fraction', type=float, default=0.9, help='train share of the split')


def _get_parser():
    parser = argparse.ArgumentParser(
        description='Data-driven STAP: simulate MVDR heatmaps, train a localization CNN, compare with peak-cell')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help='generate a heatmap dataset')
    p.add_argument('--config', type=str, required=True, help='scenario JSON file')
    p.add_argument('--out', type=str, required=True, help='dataset directory')
    p.add_argument('--seed', type=int, required=True, help='master seed')
    p.add_argument('--n', type=int, default=8000, help='number of examples')
    p.add_argument('--split_seed', type=int, default=None, help='train/test split seed (default: --seed)')
    p.add_argument('--overwrite', action='store_true', default=False, help='replace a non-empty output directory')
    _add_dataset_args(p)

    p = sub.add_parser('train', help='train the regression CNN on a dataset')
    p.add_argument('--dataset', type=str, required=True, help='dataset directory')
    p.add_argument('--out', type=str, required=True, help='checkpoint file')
    p.add_argument('--seed', type=int, required=True, help='initialization and shuffling seed')
    p.add_argument('--n_examples', type=int, default=None, help='train on the first N examples only')
    _add_train_args(p)

    p = sub.add_parser('evaluate', help='Err_CNN and Err_MVDR on the test split')
    p.add_argument('--checkpoint', type=str, required=True, help='checkpoint file')
    p.add_argument('--dataset', type=str, required=True, help='dataset directory')
    p.add_argument('--out', type=str, default=None, help='report file (default: <checkpoint>.report.json)')

    p = sub.add_parser('sweep', help='learning curve over dataset sizes and seeds')
    p.add_argument('--config', type=str, required=True, help='scenario JSON file')
    p.add_argument('--out', type=str, required=True, help='output directory')
    p.add_argument('--seeds', type=int, nargs='+', required=True, help='one dataset and training run per seed')
    p.add_argument('--n_list', type=int, nargs='+', default=DESK_N_LIST, help='ascending dataset sizes')
    p.add_argument('--full_scale', action='store_true', default=False,
                   help=f'use N in {FULL_N_LIST[0]}..{FULL_N_LIST[-1]}')
    p.add_argument('--overwrite', action='store_true', default=False, help='replace a non-empty output directory')
    _add_dataset_args(p)
    _add_train_args(p)

    p = sub.add_parser('heatmap', help='export one stored heatmap tensor as PGM/CSV per range bin')
    p.add_argument('--dataset', type=str, required=True, help='dataset directory')
    p.add_argument('--example_id', type=int, required=True, help='example id')
    p.add_argument('--out', type=str, required=True, help='output prefix')
    return parser


def _prepare_out_dir(dirpath, overwrite):
    if os.path.isdir(dirpath) and os.listdir(dirpath):
        if not overwrite:
            raise ConfigurationError(f"output directory {dirpath} is not empty (use --overwrite)")
        shutil.rmtree(dirpath)
    os.makedirs(dirpath, exist_ok=True)


def _parent_dir(filepath):
    dirpath = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(dirpath, exist_ok=True)
    return dirpath


def cmd_simulate(configs):
    scenario = load_scenario(configs.config)
    manifest = generate_dataset(
        scenario, configs.seed, configs.n, configs.out, workers=configs.workers,
        examples_per_shard=configs.examples_per_shard, epsilon_rel=configs.epsilon_rel,
        feature_transform=configs.feature_transform, train_fraction=configs.train_fraction,
        split_seed=configs.split_seed)
    checksum = file_checksum(os.path.join(configs.out, MANIFEST_NAME))
    print(f"manifest checksum: {checksum}")
    print(f"mean SCNR: {manifest.mean_scnr_db:.3f} dB (target {scenario.scnr_target_db:.2f} dB, "
          f"{N_CALIBRATION_DRAWS} calibration draws)")


def cmd_train(configs):
    set_seed(configs.seed)
    set_num_threads(configs.num_threads)
    reader = DatasetReader(configs.dataset)
    print(f"Adam alpha = {configs.learning_rate:g}")
    model, _, seconds = train_on_prefix(configs, reader, configs.n_examples)

    _parent_dir(configs.out)
    model.save_checkpoint(configs.out)
    report.save_loss_trace(model.loss_history, configs.out + '.loss.csv')
    report.plot_loss_trace(model.loss_history, filepath=configs.out + '.loss.png')
    print(f"initial loss: {model.loss_history[0]:.6f}  final loss: {model.loss_history[-1]:.6f}  "
          f"({seconds:.1f}s)")
    print(f"checkpoint checksum: {file_checksum(configs.out)}")


def cmd_evaluate(configs):
    reader = DatasetReader(configs.dataset)
    model = RegressionCNN.load_checkpoint(configs.checkpoint)
    result = evaluate(model, reader, checkpoint=configs.checkpoint)
    out = configs.out if configs.out is not None else configs.checkpoint + '.report.json'
    _parent_dir(out)
    result.save(out)
    result.to_frame().to_csv(path_or_buf=os.path.splitext(out)[0] + '.records.csv', index=False)
    for line in result.summary_lines():
        print(line)


def cmd_sweep(configs):
    scenario = load_scenario(configs.config)
    n_list = FULL_N_LIST if configs.full_scale else configs.n_list
    set_num_threads(configs.num_threads)
    df = learning_curve(
        scenario, n_list, configs.seeds, configs, configs.out, workers=configs.workers,
        examples_per_shard=configs.examples_per_shard, epsilon_rel=configs.epsilon_rel,
        feature_transform=configs.feature_transform, train_fraction=configs.train_fraction)
    df.to_csv(path_or_buf=os.path.join(configs.out, 'learning_curve.csv'), index=False)
    report.plot_learning_curve(df, filepath=os.path.join(configs.out, 'learning_curve.png'))
    print(f"learning curve: {len(df)} rows -> {os.path.join(configs.out, 'learning_curve.csv')}")


def cmd_heatmap(configs):
    reader = DatasetReader(configs.dataset)
    scenario = reader.manifest.scenario
    try:
        example = reader.example(configs.example_id)
    except IndexError as e:
        raise ConfigurationError(str(e)) from e
    _parent_dir(configs.out)
    vmax = float(example.tensor.max())
    for b in range(example.tensor.shape[0]):
        report.write_pgm(f"{configs.out}_bin{b}.pgm", example.tensor[b], vmax)
        report.save_heatmap_slice_csv(example.tensor[b], scenario.angle_grid, f"{configs.out}_bin{b}.csv")
    report.plot_heatmap_tensor(example.tensor, scenario.range_grid, scenario.angle_grid,
                               title=f"example {example.id}", filepath=f"{configs.out}_overview.png")
    print(f"{example.tensor.shape[0]} range bins written with prefix {configs.out}")


_COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'sweep': cmd_sweep,
    'heatmap': cmd_heatmap,
}


def _log_path(configs):
    # a dataset directory holds only its manifest and shards; its log sits beside it
    if configs.command == 'simulate':
        return os.path.abspath(configs.out) + '.log'
    if configs.command == 'sweep':
        return os.path.join(configs.out, 'dstap.log')
    target = configs.out if configs.out else configs.checkpoint
    return os.path.join(os.path.dirname(os.path.abspath(target)), 'dstap.log')


def run(args=None):
    configs = _get_parser().parse_args(args)

    h_file = None
    try:
        if configs.command in ['simulate', 'sweep']:
            if not os.path.isfile(configs.config):
                raise ConfigurationError(f"scenario config not found: {configs.config}")
            _prepare_out_dir(configs.out, configs.overwrite)
        log_path = _log_path(configs)
        os.makedirs(os.path.dirname(log_path), exist_ok=True)
        h_file = add_file_handler(log_path)
        set_experiment_sig(configs)
        logger.info(f"run {experiment_sig()}")
        print_configs(configs)
        _mem_util.print_memory_usage(configs.command)

        _COMMANDS[configs.command](configs)
        _mem_util.print_memory_usage(configs.command)
    except DstapError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    finally:
        if h_file is not None:
            remove_handler(h_file)

    logger.info('Bye ~~~~~~')
    return 0


if __name__ == '__main__':
    sys.exit(run())
