"""Adam optimizer and the mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, NumericalError
from .losses import LossBreakdown, LossWeights
from .model import DscnModel, ModelConfig, build_model, model_gradients


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on the parameter arrays.

    Only tensors present in params are touched, so frozen tensors stay
    frozen simply by not appearing there.
    """
    for name in params:
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for tensor {name}")
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 64
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")


def train(pixels, endmembers, cfg: ModelConfig, tc: TrainConfig):
    """Train an encoder on a pixel set with seeded sample-with-replacement
    mini-batches.

    Returns (model, trace) where trace holds one LossBreakdown per iteration.
    Deterministic given (cfg.seed, tc.seed); the endmember matrix comes back
    bit-identical because it never enters the update set.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise InputError(f"expected a (pixels, bands) array, got shape {pixels.shape}")
    n = pixels.shape[0]
    if n < tc.batch_size:
        raise InputError(f"pixel count {n} is smaller than batch size {tc.batch_size}")

    model = build_model(cfg, endmembers)
    state = AdamState.for_params(model.trainables, lr=tc.lr, beta1=tc.beta1,
                                 beta2=tc.beta2, eps=tc.adam_eps)
    rng = np.random.default_rng(tc.seed)
    trace: list[LossBreakdown] = []
    for it in range(tc.iterations):
        idx = rng.integers(0, n, size=tc.batch_size)
        try:
            breakdown, grads = model_gradients(model, pixels[idx], tc.weights)
            adam_step(model.trainables, grads, state)
        except NumericalError as err:
            raise NumericalError(f"training diverged at iteration {it}: {err}") from err
        trace.append(breakdown)
    return model, trace


def unmix(model: DscnModel, pixels, chunk=4096):
    """Inference-mode abundances for a pixel matrix, in deterministic chunks."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise InputError(f"expected a (pixels, bands) array, got shape {pixels.shape}")
    rows = []
    for start in range(0, pixels.shape[0], chunk):
        rows.append(model.forward(pixels[start:start + chunk], training=False))
    return np.concatenate(rows, axis=0)
