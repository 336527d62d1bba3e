"""Layer-level forward/backward operations on (batch, channel, height, width)
arrays: convolution, max pooling, batch normalization, dense, activations and
binary cross-entropy.  Forwards return caches consumed by the backwards."""

from __future__ import annotations

import numpy as np

from . import kernels

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
BCE_EPS = 1e-7


class EngineError(Exception):
    pass


# -- convolution -------------------------------------------------------------

def conv2d(x, w, b):
    """Same-padding stride-1 convolution; see kernels.conv2d_forward."""
    return kernels.conv2d_forward(x, w, b)


def conv2d_backward(x, w, dy):
    """Gradients (dx, dw, db) of the convolution at input x, kernel w."""
    dx = kernels.conv2d_grad_input(w, dy)
    dw = kernels.conv2d_grad_weights(x, dy, w.shape[0])
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


# -- max pooling -------------------------------------------------------------

def maxpool(x, window):
    """Non-overlapping window max; spatial dims floor-divide by the window.

    Ties go to the first element in row-major window order.  Returns the
    pooled tensor and the cache for the backward pass.
    """
    b, c, h, w = x.shape
    if window < 1:
        raise EngineError("pooling window must be >= 1")
    ho, wo = h // window, w // window
    if ho < 1 or wo < 1:
        raise EngineError(f"spatial size {h}x{w} smaller than pooling window {window}")
    xc = x[:, :, : ho * window, : wo * window]
    win = (
        xc.reshape(b, c, ho, window, wo, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho, wo, window * window)
    )
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, window)


def maxpool_backward(cache, dy):
    """Routes each window's gradient to its argmax position."""
    idx, x_shape, window = cache
    b, c, h, w = x_shape
    ho, wo = h // window, w // window
    flat = np.zeros((b, c, ho, wo, window * window), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : ho * window, : wo * window] = (
        flat.reshape(b, c, ho, wo, window, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho * window, wo * window)
    )
    return dx


# -- batch normalization -----------------------------------------------------

def batch_norm(x, gamma, beta, mode, running_mean, running_var, update_running=True):
    """Per-channel normalization over (batch, H, W).

    Train mode normalizes with the batch statistics (biased variance,
    epsilon 1e-5) and, when ``update_running`` is set, folds them into the
    running statistics with momentum 0.9.  Eval mode normalizes with the
    running statistics.  Returns (y, cache); cache is None in eval mode.
    """
    b, c, h, w = x.shape
    gamma = gamma.reshape(1, c, 1, 1)
    beta = beta.reshape(1, c, 1, 1)
    if mode == "train":
        if b * h * w < 2:
            raise EngineError("batch norm needs at least 2 values per channel in train mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        y = gamma * xhat + beta
        if update_running:
            running_mean *= BN_MOMENTUM
            running_mean += (1.0 - BN_MOMENTUM) * mean
            running_var *= BN_MOMENTUM
            running_var += (1.0 - BN_MOMENTUM) * var
        return y, (xhat, inv_std, gamma)
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
        xhat = (x - running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        return gamma * xhat + beta, None
    raise EngineError(f"unknown batch norm mode {mode!r}")


def batch_norm_backward(cache, dy):
    """Gradients (dx, dgamma, dbeta) of train-mode batch normalization."""
    xhat, inv_std, gamma = cache
    b, c, h, w = dy.shape
    n = b * h * w
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma
    dx = (
        dxhat
        - dxhat.mean(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / n
    ) * inv_std.reshape(1, c, 1, 1)
    return dx, dgamma, dbeta


# -- dense -------------------------------------------------------------------

def dense(x, w, b):
    """Affine map of flattened inputs: (B, fan_in) @ (fan_in, units) + bias."""
    if x.shape[1] != w.shape[0]:
        raise EngineError(f"dense fan-in mismatch: input {x.shape[1]}, weights {w.shape[0]}")
    return x @ w + b


def dense_backward(x, w, dy):
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


# -- activations -------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(pre, dy):
    return dy * (pre > 0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, dy):
    return dy * y * (1.0 - y)


def apply_activation(name, x):
    if name == "relu":
        return relu(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "none":
        return x
    raise EngineError(f"unknown activation {name!r}")


def activation_backward(name, pre, post, dy):
    if name == "relu":
        return relu_backward(pre, dy)
    if name == "sigmoid":
        return sigmoid_backward(post, dy)
    if name == "none":
        return dy
    raise EngineError(f"unknown activation {name!r}")


# -- loss --------------------------------------------------------------------

def bce_loss(pred, target):
    """Mean binary cross-entropy over all elements, with its gradient.

    Predictions are clamped to [1e-7, 1 - 1e-7]; the gradient is zero where
    the clamp binds.  Returns (scalar loss, dloss/dpred).
    """
    if pred.shape != target.shape:
        raise EngineError(f"prediction shape {pred.shape} != target shape {target.shape}")
    target = target.astype(pred.dtype, copy=False)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = float(-(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean())
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    dpred = np.where(inside, ((1.0 - target) / (1.0 - p) - target / p) / n, 0.0)
    return loss, dpred.astype(pred.dtype, copy=False)
