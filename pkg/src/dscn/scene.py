"""Synthetic hyperspectral scenes under the linear mixing model.

Endmembers are sums of a few positive Gaussian bumps over the band axis,
peak-normalized, and kept mutually distinct by a pairwise spectral-angle
floor. Abundances are Dirichlet draws, so every pixel sits on the
probability simplex exactly; optional white Gaussian noise is scaled to a
target SNR measured on mean signal power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .losses import sad

PAIRWISE_SAD_FLOOR = 0.15


@dataclass(frozen=True)
class SceneSpec:
    num_endmembers: int
    bands: int
    width: int
    height: int
    snr_db: float | None = None
    dirichlet_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_endmembers < 2:
            raise ConfigError(
                f"a scene needs at least two endmembers, got {self.num_endmembers}")
        if self.bands < 8:
            raise ConfigError(f"a scene needs at least 8 bands, got {self.bands}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"bad scene size {self.width}x{self.height}")
        if self.dirichlet_alpha <= 0:
            raise ConfigError(
                f"dirichlet alpha must be positive, got {self.dirichlet_alpha}")


def _bump_spectrum(rng, bands):
    n_bumps = int(rng.integers(3, 7))
    centers = rng.uniform(0, bands - 1, n_bumps)
    widths = rng.uniform(bands / 32, bands / 8, n_bumps)
    amps = rng.uniform(0.3, 1.0, n_bumps)
    grid = np.arange(bands, dtype=np.float64)
    profile = (amps[:, None]
               * np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / widths[:, None]) ** 2)
               ).sum(axis=0)
    return profile / profile.max()


def make_endmembers(rng, bands, count, min_sad=PAIRWISE_SAD_FLOOR, max_draws=1000):
    """Draw `count` distinct endmember columns by rejection sampling."""
    columns = []
    draws = 0
    while len(columns) < count:
        if draws >= max_draws:
            raise ConfigError(
                f"could not draw {count} endmembers with pairwise angle >= "
                f"{min_sad} in {max_draws} attempts; increase the band count "
                f"or reduce the endmember count")
        draws += 1
        candidate = _bump_spectrum(rng, bands)
        if all(sad(candidate, other) >= min_sad for other in columns):
            columns.append(candidate)
    return np.stack(columns, axis=1)


def linear_mix(endmembers, abundances):
    """Mix abundances (..., K) with endmembers (B, K) into spectra (..., B)."""
    return np.asarray(abundances, dtype=np.float64) @ np.asarray(
        endmembers, dtype=np.float64).T


def synth_scene(spec: SceneSpec):
    """Generate (cube, endmembers, abundance) deterministically from the seed.

    cube is (height, width, bands); abundance is (height, width, K);
    endmembers is (bands, K). Noiseless scenes satisfy cube = mix(E, Y)
    exactly.
    """
    rng = np.random.default_rng(spec.seed)
    endmembers = make_endmembers(rng, spec.bands, spec.num_endmembers)
    n_pixels = spec.height * spec.width
    abundance = rng.dirichlet(np.full(spec.num_endmembers, spec.dirichlet_alpha),
                              size=n_pixels)
    x = linear_mix(endmembers, abundance)
    if spec.snr_db is not None:
        signal_power = float((x ** 2).mean())
        sigma = np.sqrt(signal_power / 10.0 ** (spec.snr_db / 10.0))
        x = x + rng.normal(0.0, sigma, size=x.shape)
    cube = x.reshape(spec.height, spec.width, spec.bands)
    amaps = abundance.reshape(spec.height, spec.width, spec.num_endmembers)
    return cube, endmembers, amaps
