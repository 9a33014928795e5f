"""Layer primitives with explicit forward and backward passes.

Activations are float64 arrays laid out (batch, channels, length); the fusion
ops (Dense, Softmax, L1Normalize) work on flat (batch, features) arrays.
Each layer caches whatever its backward pass needs during forward, so a layer
instance serves one forward/backward pair at a time. Parameters live on the
layer as plain arrays that an optimizer may update in place.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractViolation, InputError, UsageError


class MomentAxes(Enum):
    """Which axes normalization moments are pooled over."""

    # over spectral positions, separately for every (sample, channel)
    SPECTRAL_PER_SAMPLE = "per-sample"
    # over (samples, positions) jointly, per channel, from the current batch
    SPECTRAL_AND_BATCH = "batch"
    # same pooling as above but with running statistics for inference
    BATCH_AND_SPECTRAL_PER_CHANNEL = "batchnorm"


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _init_uniform(rng, shape, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    if rng is None:
        return np.zeros(shape, dtype=np.float64)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d:
    """1D cross-correlation along the spectral axis, no bias.

    out[n, o, t] = sum_{c, w} weight[o, c, w] * x_padded[n, c, t * stride + w]
    with symmetric zero padding.
    """

    def __init__(self, in_channels, out_channels, kernel_width, stride=1,
                 padding=0, rng=None):
        if min(in_channels, out_channels, kernel_width, stride) < 1 or padding < 0:
            raise ConfigError(
                f"bad conv configuration: in={in_channels} out={out_channels} "
                f"width={kernel_width} stride={stride} padding={padding}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_width = int(kernel_width)
        self.stride = int(stride)
        self.padding = int(padding)
        self.weight = _init_uniform(
            rng, (out_channels, in_channels, kernel_width), in_channels * kernel_width)
        self._cache = None

    def out_length(self, length):
        padded = length + 2 * self.padding
        if self.kernel_width > padded:
            raise ConfigError(
                f"kernel width {self.kernel_width} exceeds padded input length {padded}")
        return (padded - self.kernel_width) // self.stride + 1

    def forward(self, x):
        x = _as_f64(x)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ConfigError(
                f"conv expects (N, {self.in_channels}, L) input, got {x.shape}")
        n, _, length = x.shape
        t = self.out_length(length)
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding)))
        windows = sliding_window_view(xp, self.kernel_width, axis=2)
        windows = windows[:, :, ::self.stride][:, :, :t]
        # one matmul: (N*T, C*W) @ (C*W, O)
        win_mat = windows.transpose(0, 2, 1, 3).reshape(n * t, -1)
        w_mat = self.weight.reshape(self.out_channels, -1)
        out = (win_mat @ w_mat.T).reshape(n, t, self.out_channels).transpose(0, 2, 1)
        self._cache = (x.shape, win_mat)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("Conv1d.backward called before forward")
        (n, c, length), win_mat = self._cache
        t = self.out_length(length)
        grad_out = _as_f64(grad_out)
        if grad_out.shape != (n, self.out_channels, t):
            raise ConfigError(
                f"grad_out shape {grad_out.shape} does not match forward "
                f"output {(n, self.out_channels, t)}")
        g_mat = grad_out.transpose(0, 2, 1).reshape(n * t, self.out_channels)
        grad_w = (g_mat.T @ win_mat).reshape(self.weight.shape)
        padded = length + 2 * self.padding
        grad_xp = np.zeros((n, c, padded))
        for tap in range(self.kernel_width):
            contrib = (g_mat @ self.weight[:, :, tap]).reshape(n, t, c)
            grad_xp[:, :, tap:tap + self.stride * t:self.stride] += contrib.transpose(0, 2, 1)
        grad_x = grad_xp[:, :, self.padding:self.padding + length]
        return grad_x, grad_w


class MaxPool1d:
    """Max pooling over the spectral axis; ties resolve to the lowest index."""

    def __init__(self, window, stride=None):
        if window < 1:
            raise ConfigError(f"pool window must be positive, got {window}")
        self.window = int(window)
        self.stride = int(stride) if stride is not None else int(window)
        if self.stride < 1:
            raise ConfigError(f"pool stride must be positive, got {stride}")
        self._cache = None

    def out_length(self, length):
        if self.window > length:
            raise ConfigError(f"pool window {self.window} exceeds input length {length}")
        return (length - self.window) // self.stride + 1

    def forward(self, x):
        x = _as_f64(x)
        if x.ndim != 3:
            raise ConfigError(f"pool expects a (N, C, L) input, got shape {x.shape}")
        n, c, length = x.shape
        t = self.out_length(length)
        windows = sliding_window_view(x, self.window, axis=2)
        windows = windows[:, :, ::self.stride][:, :, :t]
        inner = windows.argmax(axis=3)  # np.argmax picks the first maximum
        argmax = inner + (np.arange(t) * self.stride)[None, None, :]
        out = np.take_along_axis(x, argmax, axis=2)
        self._cache = (x.shape, argmax)
        return out, argmax

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("MaxPool1d.backward called before forward")
        (n, c, length), argmax = self._cache
        grad_out = _as_f64(grad_out)
        if grad_out.shape != argmax.shape:
            raise ConfigError(
                f"grad_out shape {grad_out.shape} does not match pooled shape {argmax.shape}")
        grad_x = np.zeros((n, c, length))
        rows = np.arange(n)[:, None, None]
        cols = np.arange(c)[None, :, None]
        np.add.at(grad_x, (rows, cols, argmax), grad_out)
        return grad_x


class ReLU:
    """Elementwise max(0, x); the subgradient at exactly zero is zero."""

    def __init__(self):
        self._mask = None

    def forward(self, x):
        x = _as_f64(x)
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        if self._mask is None:
            raise UsageError("ReLU.backward called before forward")
        return _as_f64(grad_out) * self._mask


def _norm_backward(grad_out, gamma_b, xhat, inv_std, axes, m):
    # dx = (1/sigma) * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)),
    # the compact form of differentiating through the pooled moments
    dxhat = grad_out * gamma_b
    mean_dxhat = dxhat.sum(axis=axes, keepdims=True) / m
    mean_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True) / m
    return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class SpectralNorm:
    """Normalizes convolution responses over the spectral axis with a
    per-channel affine.

    Per-sample mode takes moments over positions independently for every
    (sample, channel) pair; batch mode pools moments over samples and
    positions per channel. Either way the moments come from the current
    input, so there is no train/inference distinction.
    """

    def __init__(self, channels, mode=MomentAxes.SPECTRAL_PER_SAMPLE, eps=1e-5):
        if mode not in (MomentAxes.SPECTRAL_PER_SAMPLE, MomentAxes.SPECTRAL_AND_BATCH):
            raise ConfigError(f"spectral norm does not support moment mode {mode}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.channels = int(channels)
        self.mode = mode
        self.eps = float(eps)
        self.gamma = np.ones(channels, dtype=np.float64)
        self.beta = np.zeros(channels, dtype=np.float64)
        self._cache = None

    def forward(self, x):
        x = _as_f64(x)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ConfigError(
                f"spectral norm expects (N, {self.channels}, L) input, got {x.shape}")
        axes = (2,) if self.mode is MomentAxes.SPECTRAL_PER_SAMPLE else (0, 2)
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = np.prod([x.shape[a] for a in axes])
        self._cache = (xhat, inv_std, axes, m)
        return self.gamma.reshape(1, -1, 1) * xhat + self.beta.reshape(1, -1, 1)

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("SpectralNorm.backward called before forward")
        xhat, inv_std, axes, m = self._cache
        grad_out = _as_f64(grad_out)
        grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
        grad_beta = grad_out.sum(axis=(0, 2))
        grad_x = _norm_backward(grad_out, self.gamma.reshape(1, -1, 1),
                                xhat, inv_std, axes, m)
        return grad_x, grad_gamma, grad_beta


class BatchNorm:
    """Per-channel batch normalization with running moments for inference."""

    moment_axes = MomentAxes.BATCH_AND_SPECTRAL_PER_CHANNEL

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = np.ones(channels, dtype=np.float64)
        self.beta = np.zeros(channels, dtype=np.float64)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.initialized = False
        self._cache = None

    def forward(self, x, training, update_running=True):
        x = _as_f64(x)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ConfigError(
                f"batch norm expects (N, {self.channels}, L) input, got {x.shape}")
        n, _, length = x.shape
        if training:
            if n * length < 2:
                raise InputError(
                    f"batch norm training needs at least two values per channel, "
                    f"got N*L = {n * length}")
            mean = x.mean(axis=(0, 2), keepdims=True)
            var = x.var(axis=(0, 2), keepdims=True)
            if update_running:
                self.running_mean = (self.momentum * self.running_mean
                                     + (1.0 - self.momentum) * mean.reshape(-1))
                self.running_var = (self.momentum * self.running_var
                                    + (1.0 - self.momentum) * var.reshape(-1))
                self.initialized = True
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            self._cache = (True, xhat, inv_std, n * length)
        else:
            if not self.initialized:
                raise UsageError(
                    "batch norm inference requires initialized running statistics; "
                    "run at least one training update first")
            mean = self.running_mean.reshape(1, -1, 1)
            inv_std = 1.0 / np.sqrt(self.running_var.reshape(1, -1, 1) + self.eps)
            xhat = (x - mean) * inv_std
            self._cache = (False, xhat, inv_std, n * length)
        return self.gamma.reshape(1, -1, 1) * xhat + self.beta.reshape(1, -1, 1)

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("BatchNorm.backward called before forward")
        was_training, xhat, inv_std, m = self._cache
        grad_out = _as_f64(grad_out)
        grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
        grad_beta = grad_out.sum(axis=(0, 2))
        gamma_b = self.gamma.reshape(1, -1, 1)
        if was_training:
            grad_x = _norm_backward(grad_out, gamma_b, xhat, inv_std, (0, 2), m)
        else:
            # running moments are constants, so the map is affine
            grad_x = grad_out * gamma_b * inv_std
        return grad_x, grad_gamma, grad_beta


class Dense:
    """Fully-connected linear map without a bias term."""

    def __init__(self, in_dim, out_dim, rng=None):
        if min(in_dim, out_dim) < 1:
            raise ConfigError(f"bad dense dims: in={in_dim} out={out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.weight = _init_uniform(rng, (out_dim, in_dim), in_dim)
        self._cache = None

    def forward(self, x):
        x = _as_f64(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(f"dense expects (N, {self.in_dim}) input, got {x.shape}")
        self._cache = x
        return x @ self.weight.T

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("Dense.backward called before forward")
        x = self._cache
        grad_out = _as_f64(grad_out)
        if grad_out.shape != (x.shape[0], self.out_dim):
            raise ConfigError(
                f"grad_out shape {grad_out.shape} does not match "
                f"output {(x.shape[0], self.out_dim)}")
        grad_x = grad_out @ self.weight
        grad_w = grad_out.T @ x
        return grad_x, grad_w


def softmax(h):
    """Row-wise softmax with max subtraction for overflow safety."""
    h = _as_f64(h)
    shifted = h - h.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax:
    def __init__(self):
        self._cache = None

    def forward(self, h):
        p = softmax(h)
        self._cache = p
        return p

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("Softmax.backward called before forward")
        p = self._cache
        grad_out = _as_f64(grad_out)
        return p * (grad_out - (grad_out * p).sum(axis=-1, keepdims=True))


class L1Normalize:
    """Rescales nonnegative rows to unit L1 mass.

    Rows whose mass falls below ``floor`` carry no signal (a dead-ReLU batch)
    and map to the uniform vector instead of amplifying noise.
    """

    def __init__(self, floor=1e-9):
        if floor <= 0:
            raise ConfigError(f"floor must be positive, got {floor}")
        self.floor = float(floor)
        self._cache = None

    def forward(self, v):
        v = _as_f64(v)
        if v.ndim != 2:
            raise ConfigError(f"l1 normalize expects a (N, K) input, got shape {v.shape}")
        if (v < 0).any():
            raise ContractViolation(
                f"l1 normalize input must be nonnegative; min entry {v.min()}")
        k = v.shape[1]
        mass = v.sum(axis=1, keepdims=True)
        dead = mass < self.floor
        safe = np.where(dead, 1.0, mass)
        out = np.where(dead, 1.0 / k, v / safe)
        self._cache = (v, safe, dead)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("L1Normalize.backward called before forward")
        v, safe, dead = self._cache
        grad_out = _as_f64(grad_out)
        inner = (grad_out * v).sum(axis=1, keepdims=True)
        grad = grad_out / safe - inner / safe ** 2
        return np.where(dead, 0.0, grad)
