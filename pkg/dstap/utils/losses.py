"""
Loss and error metrics.
"""

import numpy as np
import torch

from dstap.utils.errors import ShapeError


def mse_loss(pred: torch.Tensor, target: torch.Tensor):
    """
    Mean over the batch of the squared Euclidean distance.

    :param pred: Predictions. Shape: batch, 3
    :param target: Targets. Shape: batch, 3
    :return: (loss, d loss / d pred)
    """
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    B = pred.shape[0]
    diff = pred - target
    loss = (diff * diff).sum() / B
    return loss.item(), 2.0 * diff / B


def euclidean_distances(preds, truths):
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise ShapeError(f"prediction array {preds.shape} vs truth array {truths.shape}")
    if preds.ndim != 2 or preds.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (N, 3) array, got {preds.shape}")
    return np.linalg.norm(truths - preds, axis=1)


def mean_euclidean_error(preds, truths):
    """(1/N) sum_i ||truth_i - pred_i||_2, in the units of the inputs."""
    return float(np.mean(euclidean_distances(preds, truths)))
