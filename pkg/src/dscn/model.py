"""Encoder/decoder assembly: spectral-conv blocks, fusion heads, linear decoder.

The encoder maps a batch of band vectors (N, B) to abundance rows (N, K) on
the probability simplex. Two fusion heads exist: the sparse head "s"
(dense -> batch norm -> ReLU -> L1 renormalize) and the probabilistic head
"p" (dense -> softmax). The decoder is the fixed endmember matrix; it never
receives gradient updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import losses
from .errors import ConfigError, ContractViolation, InputError, NumericalError
from .layers import (BatchNorm, Conv1d, Dense, L1Normalize, MaxPool1d,
                     MomentAxes, ReLU, Softmax, SpectralNorm)


class Fusion(str, Enum):
    S = "s"
    P = "p"


@dataclass(frozen=True)
class ModelConfig:
    bands: int
    num_endmembers: int
    block1: tuple = (16, 5)   # (filters, kernel width)
    block2: tuple = (32, 5)
    block3: tuple = (8, 3)
    pool: tuple = (2, 2)      # (window, stride)
    fusion: Fusion = Fusion.S
    spectral_norm_mode: MomentAxes = MomentAxes.SPECTRAL_PER_SAMPLE
    seed: int = 0

    def __post_init__(self):
        # tolerate JSON round-trips: lists for tuples, raw strings for enums
        for name in ("block1", "block2", "block3", "pool"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 2:
                raise ConfigError(f"{name} must be a (filters/window, width/stride) pair")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        object.__setattr__(self, "spectral_norm_mode", MomentAxes(self.spectral_norm_mode))
        dims = (self.bands, self.num_endmembers, *self.block1, *self.block2,
                *self.block3, *self.pool)
        if min(dims) < 1:
            raise ConfigError(f"all model dims must be positive, got {self}")


class DscnModel:
    """Trainable encoder plus the frozen endmember decoder."""

    def __init__(self, cfg: ModelConfig, endmembers):
        endmembers = np.array(endmembers, dtype=np.float64)
        expected = (cfg.bands, cfg.num_endmembers)
        if endmembers.ndim != 2 or endmembers.shape != expected:
            raise ConfigError(
                f"endmember matrix shape {endmembers.shape} does not match "
                f"configured (bands, endmembers) = {expected}")
        if not np.isfinite(endmembers).all():
            raise InputError("endmember matrix contains non-finite values")
        if (np.abs(endmembers).sum(axis=0) == 0).any():
            raise InputError("endmember matrix has an all-zero column")

        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        f1, w1 = cfg.block1
        f2, w2 = cfg.block2
        f3, w3 = cfg.block3

        self.conv1 = Conv1d(1, f1, w1, stride=1, padding=(w1 - 1) // 2, rng=rng)
        self.snorm1 = SpectralNorm(f1, cfg.spectral_norm_mode)
        self.relu1 = ReLU()
        self.pool1 = MaxPool1d(*cfg.pool)
        self.conv2 = Conv1d(f1, f2, w2, stride=1, padding=(w2 - 1) // 2, rng=rng)
        self.snorm2 = SpectralNorm(f2, cfg.spectral_norm_mode)
        self.relu2 = ReLU()
        self.pool2 = MaxPool1d(*cfg.pool)
        self.conv3 = Conv1d(f2, f3, w3, stride=1, padding=(w3 - 1) // 2, rng=rng)
        self.bnorm3 = BatchNorm(f3)
        self.relu3 = ReLU()

        length = self.conv1.out_length(cfg.bands)
        length = self.pool1.out_length(length)
        length = self.conv2.out_length(length)
        length = self.pool2.out_length(length)
        length = self.conv3.out_length(length)
        self.flat_dim = f3 * length
        if self.flat_dim < cfg.num_endmembers:
            raise ConfigError(
                f"flattened feature dim {self.flat_dim} (= {f3} channels x "
                f"{length} positions) is smaller than the endmember count "
                f"{cfg.num_endmembers}; widen the blocks or shrink the pooling")
        self.fc = Dense(self.flat_dim, cfg.num_endmembers, rng=rng)

        if cfg.fusion is Fusion.S:
            self.head_bn = BatchNorm(cfg.num_endmembers)
            self.head_relu = ReLU()
            self.head_l1 = L1Normalize()
        else:
            self.head_softmax = Softmax()

        self.w_d = endmembers  # frozen: excluded from trainables by construction
        self._trainables = {
            "conv1.weight": self.conv1.weight,
            "snorm1.gamma": self.snorm1.gamma,
            "snorm1.beta": self.snorm1.beta,
            "conv2.weight": self.conv2.weight,
            "snorm2.gamma": self.snorm2.gamma,
            "snorm2.beta": self.snorm2.beta,
            "conv3.weight": self.conv3.weight,
            "bnorm3.gamma": self.bnorm3.gamma,
            "bnorm3.beta": self.bnorm3.beta,
            "fc.weight": self.fc.weight,
        }
        if cfg.fusion is Fusion.S:
            self._trainables["head_bn.gamma"] = self.head_bn.gamma
            self._trainables["head_bn.beta"] = self.head_bn.beta
        self._head_pre = None
        self._flat_shape = None

    @property
    def trainables(self):
        """Name -> array mapping; mutate arrays in place, never rebind them."""
        return self._trainables

    @property
    def head_preactivation(self):
        """Activation the sparsity term applies to, cached by the last forward."""
        return self._head_pre

    def forward(self, x, training=False, update_running=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.bands:
            raise InputError(
                f"expected (N, {self.config.bands}) spectra, got shape {x.shape}")
        h = x[:, None, :]
        h = self.conv1.forward(h)
        h = self.snorm1.forward(h)
        h = self.relu1.forward(h)
        h, _ = self.pool1.forward(h)
        h = self.conv2.forward(h)
        h = self.snorm2.forward(h)
        h = self.relu2.forward(h)
        h, _ = self.pool2.forward(h)
        h = self.conv3.forward(h)
        h = self.bnorm3.forward(h, training, update_running)
        h = self.relu3.forward(h)
        self._flat_shape = h.shape
        z = self.fc.forward(h.reshape(x.shape[0], -1))
        if self.config.fusion is Fusion.S:
            zb = self.head_bn.forward(z[:, :, None], training, update_running)[:, :, 0]
            pre = self.head_relu.forward(zb)
            y = self.head_l1.forward(pre)
            self._head_pre = pre
        else:
            y = self.head_softmax.forward(z)
            self._head_pre = y
        return y

    def backward(self, grad_y, grad_head_pre=None):
        """Backprop through the encoder; returns parameter gradients by name.

        grad_head_pre, when given, is added at the sparsity-term attachment
        point (the pre-normalization activation for the sparse head, the
        softmax output for the probabilistic head).
        """
        grads = {}
        if self.config.fusion is Fusion.S:
            g = self.head_l1.backward(grad_y)
            if grad_head_pre is not None:
                g = g + grad_head_pre
            g = self.head_relu.backward(g)
            g, grads["head_bn.gamma"], grads["head_bn.beta"] = \
                self.head_bn.backward(g[:, :, None])
            g = g[:, :, 0]
        else:
            g = grad_y if grad_head_pre is None else grad_y + grad_head_pre
            g = self.head_softmax.backward(g)
        g, grads["fc.weight"] = self.fc.backward(g)
        g = g.reshape(self._flat_shape)
        g = self.relu3.backward(g)
        g, grads["bnorm3.gamma"], grads["bnorm3.beta"] = self.bnorm3.backward(g)
        g, grads["conv3.weight"] = self.conv3.backward(g)
        g = self.pool2.backward(g)
        g = self.relu2.backward(g)
        g, grads["snorm2.gamma"], grads["snorm2.beta"] = self.snorm2.backward(g)
        g, grads["conv2.weight"] = self.conv2.backward(g)
        g = self.pool1.backward(g)
        g = self.relu1.backward(g)
        g, grads["snorm1.gamma"], grads["snorm1.beta"] = self.snorm1.backward(g)
        g, grads["conv1.weight"] = self.conv1.backward(g)
        return grads

    def layer_shapes(self):
        cfg = self.config
        length = cfg.bands
        shapes = {}
        for name, layer in (("block1", (self.conv1, self.pool1)),
                            ("block2", (self.conv2, self.pool2))):
            conv, pool = layer
            length = pool.out_length(conv.out_length(length))
            shapes[name] = (conv.out_channels, length)
        length = self.conv3.out_length(length)
        shapes["block3"] = (self.conv3.out_channels, length)
        shapes["flat"] = self.flat_dim
        return shapes


def build_model(cfg: ModelConfig, endmembers) -> DscnModel:
    """Deterministic model construction; same (cfg, seed) means identical params."""
    return DscnModel(cfg, endmembers)


def decoder_forward(y, endmembers, tol=1e-4):
    """Reconstruct spectra from abundances: x_hat = W_d . y per sample.

    Rejects abundance rows further than tol from the probability simplex.
    """
    y = np.asarray(y, dtype=np.float64)
    endmembers = np.asarray(endmembers, dtype=np.float64)
    single = y.ndim == 1
    rows = y[None, :] if single else y
    if rows.ndim != 2 or rows.shape[1] != endmembers.shape[1]:
        raise InputError(
            f"abundance shape {y.shape} does not match endmember count "
            f"{endmembers.shape[1]}")
    if (rows < -tol).any():
        raise ContractViolation(
            f"abundance entries must be nonnegative within {tol}; min {rows.min()}")
    sums = rows.sum(axis=1)
    worst = np.abs(sums - 1.0).max()
    if worst > tol:
        raise ContractViolation(
            f"abundance rows must sum to 1 within {tol}; worst deviation {worst}")
    xhat = rows @ endmembers.T
    return xhat[0] if single else xhat


def model_gradients(model: DscnModel, x, weights: losses.LossWeights,
                    update_running=True):
    """Loss breakdown plus gradients for every trainable tensor on a batch.

    The endmember matrix is frozen; its gradient entry is identically zero.
    Raises NumericalError when the loss or any gradient goes non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError(f"expected a nonempty (N, B) batch, got shape {x.shape}")
    n = x.shape[0]
    w = weights

    y = model.forward(x, training=True, update_running=update_running)
    xhat = decoder_forward(y, model.w_d)
    kl_values, grad_xhat = losses.recon_with_grad(x, xhat)
    recon = float(kl_values.mean())

    pre = model.head_preactivation
    sparsity = float(pre.sum(axis=1).mean())

    grad_y = (w.lambda1 / n) * (grad_xhat @ model.w_d)
    grad_pre = np.full_like(pre, w.lambda2 / n)
    grads = model.backward(grad_y, grad_pre)

    decay = 0.0
    for name, theta in model.trainables.items():
        decay += float((theta ** 2).sum())
        grads[name] = grads[name] + 2.0 * w.lambda3 * theta
    grads["w_d"] = np.zeros_like(model.w_d)

    total = w.lambda1 * recon + w.lambda2 * sparsity + w.lambda3 * decay
    if not np.isfinite(total):
        raise NumericalError(f"loss went non-finite: {total}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name}")
    breakdown = losses.LossBreakdown(total=total, recon=recon,
                                     sparsity=sparsity, decay=decay)
    return breakdown, grads
