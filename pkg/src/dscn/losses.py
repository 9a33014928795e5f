"""Spectral-angle reconstruction loss, sparsity and decay terms, RMSE metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, InputError

# lower clamp on the angle similarity so its negative log stays finite
SIMILARITY_FLOOR = 1e-7


def sad(x, xhat):
    """Spectral angle distance along the last axis, in [0, pi].

    Invariant to positive rescaling of either argument. Accepts single
    spectra or batches with matching shape.
    """
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise InputError(f"spectra shapes differ: {x.shape} vs {xhat.shape}")
    nx = np.linalg.norm(x, axis=-1)
    nh = np.linalg.norm(xhat, axis=-1)
    if (nx == 0).any() or (nh == 0).any():
        raise DomainError("spectral angle is undefined for zero-norm spectra")
    cos = np.clip((x * xhat).sum(axis=-1) / (nx * nh), -1.0, 1.0)
    return np.arccos(cos)


def similarity(x, xhat):
    """Normalized angle similarity in (0, 1]: 1 - sad/pi, floored for safety."""
    return np.clip(1.0 - sad(x, xhat) / np.pi, SIMILARITY_FLOOR, 1.0)


def kl_term(c):
    """Divergence of a point mass at 1 against likelihood c: -ln(c)."""
    c = np.asarray(c, dtype=np.float64)
    if (c <= 0).any():
        raise DomainError("kl term requires similarity values in (0, 1]")
    return -np.log(c)


def recon_with_grad(x, xhat):
    """Per-sample -ln(similarity) and its gradient with respect to xhat.

    Both arguments are (N, B). Where the similarity floor clamps, the
    gradient is zero; at an exactly perfect reconstruction the angle is
    non-differentiable and the gradient blows up, which callers surface as
    a numerical failure.
    """
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape or x.ndim != 2:
        raise InputError(f"batch shapes differ: {x.shape} vs {xhat.shape}")
    nx = np.linalg.norm(x, axis=1)
    nh = np.linalg.norm(xhat, axis=1)
    if (nx == 0).any() or (nh == 0).any():
        raise DomainError("spectral angle is undefined for zero-norm spectra")
    rho = np.clip((x * xhat).sum(axis=1) / (nx * nh), -1.0, 1.0)
    theta = np.arccos(rho)
    c_raw = 1.0 - theta / np.pi
    c = np.clip(c_raw, SIMILARITY_FLOOR, 1.0)
    values = -np.log(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_theta = np.sqrt(1.0 - rho ** 2)
        coef = np.where(c_raw < SIMILARITY_FLOOR, 0.0, 1.0 / (np.pi * c * sin_theta))
    drho = x / (nx * nh)[:, None] - (rho / nh ** 2)[:, None] * xhat
    return values, -coef[:, None] * drho


@dataclass(frozen=True)
class LossWeights:
    """Weights for the reconstruction, sparsity and decay terms."""

    lambda1: float = 10.0
    lambda2: float = 0.4
    lambda3: float = 1e-5

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise InputError(f"loss weights must be nonnegative, got {self}")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted term values; total combines them with the lambda weights."""

    total: float
    recon: float
    sparsity: float
    decay: float


def loss_total(x, xhat, yhat, params, weights: LossWeights) -> LossBreakdown:
    """Full training loss on a batch.

    x, xhat: (N, B) input and reconstructed spectra. yhat: (N, K) activation
    the sparsity term applies to (the pre-normalization head activation for
    the sparse head, the simplex output for the probabilistic head).
    params: trainable arrays (iterable or name->array mapping) for the decay.
    """
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError(f"expected a nonempty (N, B) batch, got shape {x.shape}")
    if xhat.shape != x.shape or yhat.shape[0] != x.shape[0]:
        raise InputError(
            f"inconsistent batch dims: x {x.shape}, xhat {xhat.shape}, yhat {yhat.shape}")
    if isinstance(params, Mapping):
        params = params.values()
    recon = float(kl_term(similarity(x, xhat)).mean())
    sparsity = float(np.abs(yhat).sum(axis=1).mean())
    decay = float(sum((np.asarray(p) ** 2).sum() for p in params))
    total = weights.lambda1 * recon + weights.lambda2 * sparsity + weights.lambda3 * decay
    return LossBreakdown(total=total, recon=recon, sparsity=sparsity, decay=decay)


def rmse_per_material(estimate, truth):
    """Per-material root-mean-square abundance error over all pixels.

    Arguments share a (..., K) shape. Returns (per_material, average) in
    natural units; reports conventionally scale these by 100.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape or estimate.ndim < 1:
        raise InputError(f"abundance shapes differ: {estimate.shape} vs {truth.shape}")
    k = estimate.shape[-1]
    diff = (estimate.reshape(-1, k) - truth.reshape(-1, k)) ** 2
    per_material = np.sqrt(diff.mean(axis=0))
    return per_material, float(per_material.mean())
