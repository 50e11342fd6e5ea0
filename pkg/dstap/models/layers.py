"""
Layer kernels with explicit backward passes (no autograd).

All tensors are float64 NCHW. Each *_forward returns (output, cache); the
matching *_backward consumes the upstream gradient and that cache.
Convolution is im2col (unfold) followed by a matrix product.
"""

import torch
import torch.nn.functional as F

from dstap.utils.errors import NumericalError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_4d(x, name):
    if x.dim() != 4:
        raise ShapeError(f"{name} expects a 4-D (batch, channels, height, width) tensor, got shape {tuple(x.shape)}")


# --- convolution -------------------------------------------------------------

def conv2d_forward(x, kernels, bias):
    """Valid cross-correlation, stride 1."""
    _check_4d(x, "conv2d")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernels expect {Ck}")
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {H}x{W} smaller than kernel {kh}x{kw}")
    if bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {tuple(bias.shape)} != ({O},)")
    oh, ow = H - kh + 1, W - kw + 1
    cols = F.unfold(x, (kh, kw))                        # (B, C*kh*kw, oh*ow)
    y = kernels.reshape(O, -1) @ cols + bias[:, None]   # (B, O, oh*ow)
    return y.reshape(B, O, oh, ow), cols


def conv2d_backward(x, kernels, dy, cols=None):
    B, C, H, W = x.shape
    O, _, kh, kw = kernels.shape
    if cols is None:
        cols = F.unfold(x, (kh, kw))
    dy_f = dy.reshape(B, O, -1)
    dkernels = (dy_f @ cols.transpose(1, 2)).sum(0).reshape(kernels.shape)
    dbias = dy.sum(dim=(0, 2, 3))
    dcols = kernels.reshape(O, -1).t() @ dy_f
    dx = F.fold(dcols, (H, W), (kh, kw))
    return dx, dkernels, dbias


# --- activation --------------------------------------------------------------

def relu_forward(x):
    return x.clamp_min(0.0), x


def relu_backward(dy, x):
    return dy * (x > 0).to(dy.dtype)


# --- batch normalization -----------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training=True,
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """
    Per-channel normalization over (batch, height, width). In training mode
    the running statistics are updated in place.
    """
    _check_4d(x, "batchnorm")
    shape = (1, -1, 1, 1)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise NumericalError("batch statistics need at least 2 values per channel", values_per_channel=n)
        mean = x.mean(dim=(0, 2, 3))
        var = x.var(dim=(0, 2, 3), unbiased=False)
        running_mean.mul_(1.0 - momentum).add_(momentum * mean)
        running_var.mul_(1.0 - momentum).add_(momentum * var * n / (n - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / torch.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y, (xhat, inv_std, gamma, training)


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, training = cache
    shape = (1, -1, 1, 1)
    dgamma = (dy * xhat).sum(dim=(0, 2, 3))
    dbeta = dy.sum(dim=(0, 2, 3))
    dxhat = dy * gamma.reshape(shape)
    if not training:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    n = dy.shape[0] * dy.shape[2] * dy.shape[3]
    sum_dxhat = dxhat.sum(dim=(0, 2, 3), keepdim=True)
    sum_dxhat_xhat = (dxhat * xhat).sum(dim=(0, 2, 3), keepdim=True)
    dx = inv_std.reshape(shape) / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# --- pooling -----------------------------------------------------------------

def maxpool2x2_forward(x):
    """2x2 / stride 2, trailing odd row/column dropped, first-index tie-break."""
    _check_4d(x, "maxpool2x2")
    B, C, H, W = x.shape
    oh, ow = H // 2, W // 2
    if oh == 0 or ow == 0:
        raise ShapeError(f"maxpool2x2: input {H}x{W} too small")
    windows = (x[:, :, :2 * oh, :2 * ow]
               .reshape(B, C, oh, 2, ow, 2)
               .permute(0, 1, 2, 4, 3, 5)
               .reshape(B, C, oh, ow, 4))
    idx = windows.argmax(dim=-1, keepdim=True)
    y = windows.gather(-1, idx).squeeze(-1)
    return y, (x.shape, idx)


def maxpool2x2_backward(dy, cache):
    x_shape, idx = cache
    B, C, H, W = x_shape
    oh, ow = H // 2, W // 2
    dwin = torch.zeros(B, C, oh, ow, 4, dtype=dy.dtype)
    dwin.scatter_(-1, idx, dy.unsqueeze(-1))
    dx = torch.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, :2 * oh, :2 * ow] = (dwin.reshape(B, C, oh, ow, 2, 2)
                                  .permute(0, 1, 2, 4, 3, 5)
                                  .reshape(B, C, 2 * oh, 2 * ow))
    return dx


# --- fully connected ---------------------------------------------------------

def dense_forward(x, weight, bias):
    """y = x W + b with W stored (in_features, out_features)."""
    if x.dim() != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input shape {tuple(x.shape)} incompatible with weight {tuple(weight.shape)}")
    return x @ weight + bias, x


def dense_backward(dy, x, weight):
    return dy @ weight.t(), x.t() @ dy, dy.sum(dim=0)
