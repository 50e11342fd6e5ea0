"""
Regression CNN mapping a heatmap tensor (range bins as channels) to a
normalized Cartesian target position:

    conv(32, 3x3) -> ReLU -> BN -> maxpool 2x2
    conv(64, 3x3) -> ReLU -> BN -> maxpool 2x2
    flatten -> fc(hidden) -> ReLU -> fc(3)

Forward and backward passes are explicit (see layers.py); Adam updates the
learnable tensors; batch-norm running statistics are carried alongside them.
"""

import hashlib
import json
import math
import struct
import time
from collections import OrderedDict

import numpy as np
import torch
from tqdm import tqdm

from dstap.data_provider.dataset_stap import NormalizationStats, denormalize_labels, normalize_features
from dstap.models import layers
from dstap.models.abstractmodel import AbstractModel
from dstap.models.optim import AdamState, adam_step
from dstap.utils.errors import ConfigurationError, DataError, NumericalError, ShapeError
from dstap.utils.logger import logger
from dstap.utils.losses import mse_loss

REFERENCE_INPUT_SHAPE = (5, 26, 21)
CONV1_CHANNELS = 32
CONV2_CHANNELS = 64
KERNEL = 3
DEFAULT_HIDDEN = 128
N_OUTPUTS = 3

PARAM_ORDER = [
    'conv1.weight', 'conv1.bias',
    'bn1.gamma', 'bn1.beta', 'bn1.running_mean', 'bn1.running_var',
    'conv2.weight', 'conv2.bias',
    'bn2.gamma', 'bn2.beta', 'bn2.running_mean', 'bn2.running_var',
    'fc1.weight', 'fc1.bias',
    'fc2.weight', 'fc2.bias',
]
RUNNING_STATS = {'bn1.running_mean', 'bn1.running_var', 'bn2.running_mean', 'bn2.running_var'}

_CKPT_MAGIC = b'DSTAPCK\x00'
_CKPT_VERSION = 1
# magic, version, hidden width, input (channels, height, width), architecture hash
_CKPT_HEADER = struct.Struct('<8sIIIII16s')


def feature_map_shapes(input_shape):
    """Per-stage (channels, height, width) after conv1, pool1, conv2, pool2."""
    c, h, w = input_shape
    h1, w1 = h - KERNEL + 1, w - KERNEL + 1
    p1 = (h1 // 2, w1 // 2)
    h2, w2 = p1[0] - KERNEL + 1, p1[1] - KERNEL + 1
    p2 = (h2 // 2, w2 // 2)
    if min(h1, w1, *p1, h2, w2, *p2) < 1:
        raise ShapeError(f"input {input_shape} is too small for two conv/pool stages")
    return [(CONV1_CHANNELS, h1, w1), (CONV1_CHANNELS,) + p1,
            (CONV2_CHANNELS, h2, w2), (CONV2_CHANNELS,) + p2]


def param_shapes(input_shape=REFERENCE_INPUT_SHAPE, hidden=DEFAULT_HIDDEN):
    c = input_shape[0]
    flat = int(np.prod(feature_map_shapes(input_shape)[-1]))
    return OrderedDict([
        ('conv1.weight', (CONV1_CHANNELS, c, KERNEL, KERNEL)), ('conv1.bias', (CONV1_CHANNELS,)),
        ('bn1.gamma', (CONV1_CHANNELS,)), ('bn1.beta', (CONV1_CHANNELS,)),
        ('bn1.running_mean', (CONV1_CHANNELS,)), ('bn1.running_var', (CONV1_CHANNELS,)),
        ('conv2.weight', (CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL)), ('conv2.bias', (CONV2_CHANNELS,)),
        ('bn2.gamma', (CONV2_CHANNELS,)), ('bn2.beta', (CONV2_CHANNELS,)),
        ('bn2.running_mean', (CONV2_CHANNELS,)), ('bn2.running_var', (CONV2_CHANNELS,)),
        ('fc1.weight', (flat, hidden)), ('fc1.bias', (hidden,)),
        ('fc2.weight', (hidden, N_OUTPUTS)), ('fc2.bias', (N_OUTPUTS,)),
    ])


def architecture_hash(input_shape, hidden):
    desc = json.dumps([[name, list(shape)] for name, shape in param_shapes(input_shape, hidden).items()])
    return hashlib.sha256(desc.encode('utf-8')).digest()[:16]


class NetworkParams(object):
    """All network tensors (learnable and BN running statistics) in PARAM_ORDER."""

    def __init__(self, tensors: OrderedDict, input_shape, hidden):
        self.tensors = tensors
        self.input_shape = tuple(input_shape)
        self.hidden = hidden

    @classmethod
    def zeros(cls, input_shape=REFERENCE_INPUT_SHAPE, hidden=DEFAULT_HIDDEN):
        tensors = OrderedDict((name, torch.zeros(shape, dtype=torch.float64))
                              for name, shape in param_shapes(input_shape, hidden).items())
        for bn in ('bn1', 'bn2'):
            tensors[f'{bn}.gamma'].fill_(1.0)
            tensors[f'{bn}.running_var'].fill_(1.0)
        return cls(tensors, input_shape, hidden)

    @classmethod
    def he_init(cls, seed, input_shape=REFERENCE_INPUT_SHAPE, hidden=DEFAULT_HIDDEN):
        params = cls.zeros(input_shape, hidden)
        g = torch.Generator().manual_seed(seed)
        for name in ('conv1.weight', 'conv2.weight', 'fc1.weight', 'fc2.weight'):
            t = params.tensors[name]
            fan_in = t.shape[0] if name.startswith('fc') else int(np.prod(t.shape[1:]))
            t.copy_(torch.randn(t.shape, generator=g, dtype=torch.float64) * math.sqrt(2.0 / fan_in))
        return params

    def __getitem__(self, name):
        return self.tensors[name]

    def learnable(self):
        return OrderedDict((k, v) for k, v in self.tensors.items() if k not in RUNNING_STATS)

    def count(self):
        return sum(t.numel() for t in self.tensors.values())

    def flat(self):
        return torch.cat([self.tensors[k].reshape(-1) for k in PARAM_ORDER])

    def clone(self):
        return NetworkParams(OrderedDict((k, v.clone()) for k, v in self.tensors.items()),
                             self.input_shape, self.hidden)


def forward(params: NetworkParams, x, training=False, trace=None):
    """
    Predictions (batch x 3, normalized-label space) and the caches needed by
    `backward`. Training mode uses batch statistics and updates BN running stats.
    `trace`, when given a list, receives the shape after every stage.
    """
    if x.dim() != 4 or tuple(x.shape[1:]) != params.input_shape:
        raise ShapeError(f"network expects input (batch, {', '.join(map(str, params.input_shape))}), "
                         f"got {tuple(x.shape)}")
    p = params.tensors
    caches = {'conv1.in': x}

    h, caches['conv1'] = layers.conv2d_forward(x, p['conv1.weight'], p['conv1.bias'])
    h, caches['relu1'] = layers.relu_forward(h)
    h, caches['bn1'] = layers.batchnorm_forward(h, p['bn1.gamma'], p['bn1.beta'],
                                                p['bn1.running_mean'], p['bn1.running_var'], training)
    stages = [tuple(h.shape)]
    h, caches['pool1'] = layers.maxpool2x2_forward(h)
    stages.append(tuple(h.shape))

    caches['conv2.in'] = h
    h, caches['conv2'] = layers.conv2d_forward(h, p['conv2.weight'], p['conv2.bias'])
    h, caches['relu2'] = layers.relu_forward(h)
    h, caches['bn2'] = layers.batchnorm_forward(h, p['bn2.gamma'], p['bn2.beta'],
                                                p['bn2.running_mean'], p['bn2.running_var'], training)
    stages.append(tuple(h.shape))
    h, caches['pool2'] = layers.maxpool2x2_forward(h)
    stages.append(tuple(h.shape))

    caches['flatten'] = h.shape
    h = h.reshape(h.shape[0], -1)
    stages.append(h.shape[1])
    h, caches['fc1'] = layers.dense_forward(h, p['fc1.weight'], p['fc1.bias'])
    h, caches['relu3'] = layers.relu_forward(h)
    stages.append(h.shape[1])
    out, caches['fc2'] = layers.dense_forward(h, p['fc2.weight'], p['fc2.bias'])
    stages.append(out.shape[1])

    if trace is not None:
        trace.extend(stages)
    return out, caches


def backward(params: NetworkParams, dout, caches):
    """Gradients of the learnable tensors given d loss / d output."""
    p = params.tensors
    grads = {}

    dh, grads['fc2.weight'], grads['fc2.bias'] = layers.dense_backward(dout, caches['fc2'], p['fc2.weight'])
    dh = layers.relu_backward(dh, caches['relu3'])
    dh, grads['fc1.weight'], grads['fc1.bias'] = layers.dense_backward(dh, caches['fc1'], p['fc1.weight'])
    dh = dh.reshape(caches['flatten'])

    dh = layers.maxpool2x2_backward(dh, caches['pool2'])
    dh, grads['bn2.gamma'], grads['bn2.beta'] = layers.batchnorm_backward(dh, caches['bn2'])
    dh = layers.relu_backward(dh, caches['relu2'])
    dh, grads['conv2.weight'], grads['conv2.bias'] = layers.conv2d_backward(
        caches['conv2.in'], p['conv2.weight'], dh, caches['conv2'])

    dh = layers.maxpool2x2_backward(dh, caches['pool1'])
    dh, grads['bn1.gamma'], grads['bn1.beta'] = layers.batchnorm_backward(dh, caches['bn1'])
    dh = layers.relu_backward(dh, caches['relu1'])
    _, grads['conv1.weight'], grads['conv1.bias'] = layers.conv2d_backward(
        caches['conv1.in'], p['conv1.weight'], dh, caches['conv1'])
    return OrderedDict((k, grads[k]) for k in PARAM_ORDER if k not in RUNNING_STATS)


def loss_and_grads(params: NetworkParams, x, y, training=True):
    pred, caches = forward(params, x, training)
    loss, dpred = mse_loss(pred, y)
    return loss, backward(params, dpred, caches)


class RegressionCNN(AbstractModel):
    """
    configs: namespace with train_epochs, batch_size, learning_rate, seed,
    hidden_width (and optionally beta1, beta2, adam_eps).
    """

    def __init__(self, configs, input_shape=REFERENCE_INPUT_SHAPE, stats: NormalizationStats = None,
                 params: NetworkParams = None, name='RegressionCNN'):
        super().__init__(configs, name)
        self.stats = stats
        if params is None:
            hidden = getattr(configs, 'hidden_width', DEFAULT_HIDDEN)
            params = NetworkParams.he_init(configs.seed, input_shape, hidden)
        self.params = params
        self.loss_history = []
        # {n_examples, split_seed, train_fraction} of the split the weights were fitted on
        self.train_split = None

    @property
    def input_shape(self):
        return self.params.input_shape

    def _adam_state(self):
        return AdamState.for_params(
            self.params.learnable(),
            lr=self.configs.learning_rate,
            beta1=getattr(self.configs, 'beta1', 0.9),
            beta2=getattr(self.configs, 'beta2', 0.999),
            eps=getattr(self.configs, 'adam_eps', 1e-8))

    def train(self, train_loader):
        """Mini-batch Adam over `train_loader`; returns the per-epoch mean training loss."""
        if self.configs.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.configs.batch_size}")
        state = self._adam_state()
        learnable = self.params.learnable()
        self.loss_history = []
        batch_history = []

        for epoch in tqdm(range(self.configs.train_epochs), desc=self.name):
            epoch_time = time.time()
            total, count = 0.0, 0
            for i, (batch_x, batch_y) in enumerate(train_loader):
                loss, grads = loss_and_grads(self.params, batch_x, batch_y, training=True)
                batch_history.append(loss)
                if not math.isfinite(loss):
                    raise NumericalError("training loss is not finite", epoch=epoch + 1, batch=i,
                                         loss_history=[round(v, 6) for v in batch_history[-10:]])
                adam_step(learnable, grads, state)
                total += loss * batch_x.shape[0]
                count += batch_x.shape[0]
            epoch_loss = total / count
            self.loss_history.append(epoch_loss)
            logger.debug(f"Epoch: {epoch + 1} | Train Loss: {epoch_loss:.7f} | "
                         f"cost time: {time.time() - epoch_time:.2f}s")
        if self.loss_history:
            logger.info(f"{self.name} trained {len(self.loss_history)} epochs: "
                        f"loss {self.loss_history[0]:.6f} -> {self.loss_history[-1]:.6f}")
        return self.loss_history

    def predict_normalized(self, x, batch_size=256):
        outs = []
        for start in range(0, x.shape[0], batch_size):
            out, _ = forward(self.params, x[start:start + batch_size], training=False)
            outs.append(out)
        return torch.cat(outs) if outs else torch.zeros(0, N_OUTPUTS, dtype=torch.float64)

    def predict(self, tensors, batch_size=256):
        if self.stats is None:
            raise ConfigurationError("model has no normalization statistics; load it from a checkpoint")
        x = torch.from_numpy(normalize_features(tensors, self.stats))
        out = self.predict_normalized(x, batch_size).numpy()
        return denormalize_labels(out, self.stats).reshape(-1, N_OUTPUTS)

    def shape_trace(self):
        trace = [(1,) + self.input_shape]
        forward(self.params, torch.zeros((1,) + self.input_shape, dtype=torch.float64), False, trace)
        return trace

    # --- checkpoint ---------------------------------------------------------

    def save_checkpoint(self, filepath):
        if self.stats is None:
            raise ConfigurationError("cannot checkpoint a model without normalization statistics")
        c, h, w = self.input_shape
        meta = json.dumps({'normalization': self.stats.to_dict(), 'name': self.name,
                           'train_split': self.train_split},
                          sort_keys=True).encode('utf-8')
        with open(filepath, 'wb') as f:
            f.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, self.params.hidden, c, h, w,
                                      architecture_hash(self.input_shape, self.params.hidden)))
            f.write(struct.pack('<I', len(meta)))
            f.write(meta)
            f.write(self.params.flat().numpy().astype('<f8').tobytes())

    @classmethod
    def load_checkpoint(cls, filepath, configs=None):
        try:
            with open(filepath, 'rb') as f:
                blob = f.read()
        except FileNotFoundError as e:
            raise ConfigurationError(f"checkpoint not found: {filepath}") from e
        try:
            magic, version, hidden, c, h, w, arch = _CKPT_HEADER.unpack_from(blob, 0)
            offset = _CKPT_HEADER.size
            (meta_len,) = struct.unpack_from('<I', blob, offset)
            offset += 4
            meta = json.loads(blob[offset:offset + meta_len].decode('utf-8'))
            offset += meta_len
        except (struct.error, ValueError) as e:
            raise DataError(f"corrupt checkpoint {filepath}: {e}") from e
        if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
            raise DataError(f"{filepath} is not a version-{_CKPT_VERSION} checkpoint")
        input_shape = (c, h, w)
        if arch != architecture_hash(input_shape, hidden):
            raise DataError(f"architecture hash mismatch in {filepath}")

        flat = np.frombuffer(blob, dtype='<f8', offset=offset)
        params = NetworkParams.zeros(input_shape, hidden)
        expected = params.count()
        if flat.size != expected:
            raise DataError(f"{filepath} holds {flat.size} parameters, architecture needs {expected}")
        pos = 0
        for name in PARAM_ORDER:
            t = params.tensors[name]
            t.copy_(torch.from_numpy(flat[pos:pos + t.numel()].astype(np.float64).reshape(t.shape)))
            pos += t.numel()
        stats = NormalizationStats.from_dict(meta['normalization'])
        model = cls(configs, input_shape, stats, params, name=meta.get('name', 'RegressionCNN'))
        model.train_split = meta.get('train_split')
        return model
