import random
from datetime import datetime

import numpy as np
import torch

from dstap.utils.logger import logger


def set_seed(seed):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def set_num_threads(num_threads):
    # intra-op reductions are ordered for a fixed thread count only
    if num_threads is not None and num_threads > 0:
        torch.set_num_threads(num_threads)


_experiment_signature = None
def set_experiment_sig(configs):
    global _experiment_signature
    _experiment_signature = f"{configs.command}_s{getattr(configs, 'seed', 'na')}_"
    _experiment_signature += datetime.now().strftime("%Y%m%d_%H%M%S")

def experiment_sig():
    assert _experiment_signature is not None
    return _experiment_signature


# -----------

def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ','.join(str(x) for x in v)
    return str(v)

def _row(configs, left, right=None):
    (lk, la), = left.items()
    line = f'  {lk + ":":<20}{_fmt(getattr(configs, la, "-")):<20}'
    if right is not None:
        (rk, ra), = right.items()
        line += f'{rk + ":":<20}{_fmt(getattr(configs, ra, "-")):<20}'
    return line

def print_configs(configs):
    logger.info("\033[1m" + f"DSTAP {configs.command}" + "\033[0m")
    logger.info(_row(configs, {'Seed': 'seed'}, {'Workers': 'workers'}))
    logger.info(_row(configs, {'Output': 'out'}))
    logger.info('')

    if hasattr(configs, 'config'):
        logger.info("\033[1m" + "Scenario" + "\033[0m")
        logger.info(_row(configs, {'Config File': 'config'}, {'Examples': 'n'}))
        logger.info(_row(configs, {'Loading eps_rel': 'epsilon_rel'}, {'Feature Xform': 'feature_transform'}))
        logger.info('')

    if hasattr(configs, 'dataset'):
        logger.info("\033[1m" + "Data" + "\033[0m")
        logger.info(_row(configs, {'Dataset Dir': 'dataset'}, {'Checkpoint': 'checkpoint'}))
        logger.info('')

    if hasattr(configs, 'learning_rate'):
        logger.info("\033[1m" + "Training" + "\033[0m")
        logger.info(_row(configs, {'Train Epochs': 'train_epochs'}, {'Batch Size': 'batch_size'}))
        logger.info(_row(configs, {'Learning Rate': 'learning_rate'}, {'Hidden Width': 'hidden_width'}))
        logger.info(_row(configs, {'Beta1': 'beta1'}, {'Beta2': 'beta2'}))
        logger.info(_row(configs, {'Adam eps': 'adam_eps'}, {'Num Threads': 'num_threads'}))
        logger.info('')

    if hasattr(configs, 'n_list'):
        logger.info("\033[1m" + "Sweep" + "\033[0m")
        logger.info(_row(configs, {'N List': 'n_list'}, {'Seeds': 'seeds'}))
        logger.info('')
