"""Fully constrained least squares by projected gradient descent.

Per pixel this solves min_y 0.5 * ||x - E y||^2 over the probability simplex
{y >= 0, sum(y) = 1}. The default step 1 / ||E^T E||_2 makes the objective
non-increasing; the backtracking rule instead halves a trial step until the
usual sufficient-decrease inequality holds. All pixels of a cube are
iterated together as one (pixels, K) matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError


class StepRule(str, Enum):
    LIPSCHITZ = "lipschitz"
    BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class FclsConfig:
    max_iters: int = 2000
    tol: float = 1e-10
    step_rule: StepRule = StepRule.LIPSCHITZ

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))


def simplex_project(v):
    """Euclidean projection onto {y >= 0, sum(y) = 1} by sort-and-threshold.

    Accepts a single vector or a (rows, K) batch and projects rows
    independently.
    """
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    rows = v[None, :] if single else v
    if rows.ndim != 2:
        raise InputError(f"expected a vector or (rows, K) batch, got shape {v.shape}")
    if not np.isfinite(rows).all():
        raise InputError("simplex projection requires finite input")
    k = rows.shape[1]
    u = np.sort(rows, axis=1)[:, ::-1]
    excess = np.cumsum(u, axis=1) - 1.0
    counts = np.arange(1, k + 1, dtype=np.float64)
    support = (u - excess / counts > 0).sum(axis=1)  # >= 1 always
    shift = excess[np.arange(rows.shape[0]), support - 1] / support
    out = np.maximum(rows - shift[:, None], 0.0)
    return out[0] if single else out


def _prepare(endmembers):
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2:
        raise InputError(f"endmember matrix must be 2-D, got shape {e.shape}")
    if not np.isfinite(e).all():
        raise InputError("endmember matrix contains non-finite values")
    if np.linalg.matrix_rank(e) < e.shape[1]:
        warnings.warn("endmember matrix is rank deficient; the least-squares "
                      "solution may be non-unique", stacklevel=3)
    gram = e.T @ e
    lipschitz = float(np.linalg.norm(gram, 2))
    if lipschitz == 0.0:
        raise InputError("endmember matrix is identically zero")
    return e, gram, lipschitz


def _objective(y, gram, cross, xsq):
    # 0.5 * ||x - E y||^2 expanded so no (rows, bands) product is needed
    return 0.5 * (xsq - 2.0 * (y * cross).sum(axis=1) + ((y @ gram) * y).sum(axis=1))


def _solve_batch(xmat, endmembers, cfg, objectives=None):
    e, gram, lipschitz = _prepare(endmembers)
    if not np.isfinite(xmat).all():
        raise InputError("spectra contain non-finite values")
    if xmat.shape[1] != e.shape[0]:
        raise InputError(
            f"spectra have {xmat.shape[1]} bands but endmembers have {e.shape[0]}")
    n, k = xmat.shape[0], e.shape[1]
    cross = xmat @ e
    xsq = (xmat ** 2).sum(axis=1)
    y = np.full((n, k), 1.0 / k)
    base_step = 1.0 / lipschitz
    if objectives is not None:
        objectives.append(_objective(y, gram, cross, xsq).copy())
    for _ in range(cfg.max_iters):
        grad = y @ gram - cross
        if cfg.step_rule is StepRule.LIPSCHITZ:
            steps = np.full(n, base_step)
            z = simplex_project(y - base_step * grad)
        else:
            steps = np.full(n, 8.0 * base_step)
            f_now = _objective(y, gram, cross, xsq)
            z = simplex_project(y - steps[:, None] * grad)
            for _ in range(60):
                d = z - y
                f_new = _objective(z, gram, cross, xsq)
                bound = f_now + (grad * d).sum(axis=1) + (d * d).sum(axis=1) / (2 * steps)
                bad = f_new > bound + 1e-12
                if not bad.any():
                    break
                steps = np.where(bad, steps / 2.0, steps)
                z = simplex_project(y - steps[:, None] * grad)
        gap = np.linalg.norm(y - z, axis=1) / steps
        y = z
        if objectives is not None:
            objectives.append(_objective(y, gram, cross, xsq).copy())
        if gap.max() < cfg.tol:
            break
    return y


def fcls_solve(x, endmembers, cfg: FclsConfig | None = None, return_objectives=False):
    """Abundance vector for one spectrum.

    With return_objectives=True also returns the per-iteration objective
    values 0.5 * ||x - E y||^2, which are non-increasing.
    """
    cfg = cfg or FclsConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"expected a single spectrum, got shape {x.shape}")
    trace = [] if return_objectives else None
    y = _solve_batch(x[None, :], endmembers, cfg, objectives=trace)[0]
    if return_objectives:
        return y, np.array([t[0] for t in trace])
    return y


def fcls_unmix_cube(cube, endmembers, cfg: FclsConfig | None = None):
    """Per-pixel FCLS over a (height, width, bands) cube -> (height, width, K)."""
    cfg = cfg or FclsConfig()
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise InputError(f"expected a (height, width, bands) cube, got shape {cube.shape}")
    if cube.size == 0:
        raise InputError("cube has no pixels")
    h, w, b = cube.shape
    y = _solve_batch(cube.reshape(-1, b), endmembers, cfg)
    return y.reshape(h, w, -1)
