"""Central-difference gradient checking, plus the standard layer/model suite.

grad_check compares an analytic gradient against symmetric finite differences
coordinate by coordinate. run_all_checks builds small deterministic fixtures
for every layer and for the full encoder + loss composite; the CLI gradcheck
subcommand is a thin wrapper around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .layers import (BatchNorm, Conv1d, Dense, L1Normalize, MaxPool1d,
                     MomentAxes, ReLU, Softmax, SpectralNorm)
from .losses import LossWeights
from .model import Fusion, ModelConfig, build_model, model_gradients


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_rel_err: float
    worst_coord: int
    analytic: float
    numeric: float
    n_coords: int
    h: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = (f"{status} {self.name}: max rel err {self.max_rel_err:.3e} "
               f"over {self.n_coords} coords (h={self.h:g}, tol={self.tol:g})")
        if not self.passed:
            msg += (f" [coord {self.worst_coord}: analytic {self.analytic:.6e}, "
                    f"numeric {self.numeric:.6e}]")
        return msg


def grad_check(f, theta, h=1e-3, tol=1e-4, max_coords=64, rng=None, name="f"):
    """Check an analytic gradient against central finite differences.

    f maps a parameter array to (scalar value, gradient array). Every
    coordinate is checked when the tensor has at most max_coords entries;
    larger tensors get a random subset of max_coords coordinates. The
    relative error denominator is max(1, |analytic|, |numeric|).
    """
    theta = np.array(theta, dtype=np.float64)
    value, grad = f(theta)
    value = float(value)
    if not np.isfinite(value):
        raise NumericalError(f"{name}: function value is non-finite ({value})")
    value2 = float(f(theta)[0])
    if value != value2:
        raise NumericalError(
            f"{name}: two evaluations differ ({value!r} vs {value2!r}); "
            "gradient checking needs a deterministic function")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise InputError(
            f"{name}: gradient shape {grad.shape} does not match parameter "
            f"shape {theta.shape}")

    if theta.size <= max_coords:
        coords = np.arange(theta.size)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = np.sort(rng.choice(theta.size, size=max_coords, replace=False))

    flat = theta.reshape(-1)
    grad_flat = grad.reshape(-1)
    worst = (-1.0, -1, 0.0, 0.0)
    for idx in coords:
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = float(f(theta)[0])
        flat[idx] = orig - h
        f_minus = float(f(theta)[0])
        flat[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = grad_flat[idx]
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        if not np.isfinite(rel):
            rel = np.inf
        if rel > worst[0]:
            worst = (rel, int(idx), float(analytic), float(numeric))
    return GradCheckReport(name=name, max_rel_err=worst[0], worst_coord=worst[1],
                           analytic=worst[2], numeric=worst[3],
                           n_coords=len(coords), h=h, tol=tol)


def _away_from_zero(x, margin):
    return np.where(x >= 0, x + margin, x - margin)


def _widen_pool_gaps(x, window, stride, margin):
    """Bump each pooling window's max so +-h never flips the argmax."""
    x = x.copy()
    n, c, length = x.shape
    t = (length - window) // stride + 1
    for i in range(n):
        for j in range(c):
            for w in range(t):
                seg = x[i, j, w * stride:w * stride + window]
                order = np.argsort(seg)
                if seg[order[-1]] - seg[order[-2]] < margin:
                    seg[order[-1]] += margin
    return x


def run_layer_checks(h=1e-3, tol=1e-4, seed=0):
    """Gradient-check every layer primitive on small random fixtures."""
    rng = np.random.default_rng(seed)
    margin = 50.0 * h
    reports = []

    def check(name, f, theta):
        reports.append(grad_check(f, theta, h=h, tol=tol, rng=rng, name=name))

    # conv1d: input and kernel gradients, with stride and padding exercised
    conv = Conv1d(3, 4, 3, stride=2, padding=1, rng=rng)
    x0 = rng.normal(size=(2, 3, 11))
    proj = rng.normal(size=conv.forward(x0).shape)

    def conv_x(t):
        out = conv.forward(t)
        gx, _ = conv.backward(proj)
        return (out * proj).sum(), gx

    def conv_w(t):
        conv.weight[...] = t
        out = conv.forward(x0)
        _, gw = conv.backward(proj)
        return (out * proj).sum(), gw

    check("conv1d/input", conv_x, x0)
    check("conv1d/weight", conv_w, conv.weight.copy())

    # maxpool: gradient routes to the argmax only; fixture keeps ties away
    pool = MaxPool1d(2, 2)
    xp = _widen_pool_gaps(rng.normal(size=(2, 3, 10)), 2, 2, margin)
    proj_p = rng.normal(size=pool.forward(xp)[0].shape)

    def pool_x(t):
        out, _ = pool.forward(t)
        return (out * proj_p).sum(), pool.backward(proj_p)

    check("maxpool1d/input", pool_x, xp)

    # relu: fixture stays clear of the kink at zero
    relu = ReLU()
    xr = _away_from_zero(rng.normal(size=(2, 3, 8)), margin)
    proj_r = rng.normal(size=xr.shape)

    def relu_x(t):
        out = relu.forward(t)
        return (out * proj_r).sum(), relu.backward(proj_r)

    check("relu/input", relu_x, xr)

    # spectral norm in both moment modes, input and affine parameters
    for mode, tag in ((MomentAxes.SPECTRAL_PER_SAMPLE, "per-sample"),
                      (MomentAxes.SPECTRAL_AND_BATCH, "batch")):
        snorm = SpectralNorm(4, mode)
        snorm.gamma[...] = rng.uniform(0.5, 1.5, size=4)
        snorm.beta[...] = rng.normal(size=4)
        xs = rng.normal(size=(3, 4, 6))
        proj_s = rng.normal(size=xs.shape)

        def snorm_x(t, layer=snorm, p=proj_s):
            out = layer.forward(t)
            gx, _, _ = layer.backward(p)
            return (out * p).sum(), gx

        def snorm_gamma(t, layer=snorm, p=proj_s, x=xs):
            layer.gamma[...] = t
            out = layer.forward(x)
            _, gg, _ = layer.backward(p)
            return (out * p).sum(), gg

        def snorm_beta(t, layer=snorm, p=proj_s, x=xs):
            layer.beta[...] = t
            out = layer.forward(x)
            _, _, gb = layer.backward(p)
            return (out * p).sum(), gb

        check(f"spectral_norm[{tag}]/input", snorm_x, xs)
        check(f"spectral_norm[{tag}]/gamma", snorm_gamma, snorm.gamma.copy())
        check(f"spectral_norm[{tag}]/beta", snorm_beta, snorm.beta.copy())

    # batch norm in training mode (differentiates through the batch moments)
    bnorm = BatchNorm(3)
    bnorm.gamma[...] = rng.uniform(0.5, 1.5, size=3)
    bnorm.beta[...] = rng.normal(size=3)
    xb = rng.normal(size=(4, 3, 5))
    proj_b = rng.normal(size=xb.shape)

    def bnorm_x(t):
        out = bnorm.forward(t, training=True, update_running=False)
        gx, _, _ = bnorm.backward(proj_b)
        return (out * proj_b).sum(), gx

    def bnorm_gamma(t):
        bnorm.gamma[...] = t
        out = bnorm.forward(xb, training=True, update_running=False)
        _, gg, _ = bnorm.backward(proj_b)
        return (out * proj_b).sum(), gg

    def bnorm_beta(t):
        bnorm.beta[...] = t
        out = bnorm.forward(xb, training=True, update_running=False)
        _, _, gb = bnorm.backward(proj_b)
        return (out * proj_b).sum(), gb

    check("batch_norm/input", bnorm_x, xb)
    check("batch_norm/gamma", bnorm_gamma, bnorm.gamma.copy())
    check("batch_norm/beta", bnorm_beta, bnorm.beta.copy())

    # dense: input and weight gradients
    fc = Dense(7, 4, rng=rng)
    xf = rng.normal(size=(3, 7))
    proj_f = rng.normal(size=(3, 4))

    def fc_x(t):
        out = fc.forward(t)
        gx, _ = fc.backward(proj_f)
        return (out * proj_f).sum(), gx

    def fc_w(t):
        fc.weight[...] = t
        out = fc.forward(xf)
        _, gw = fc.backward(proj_f)
        return (out * proj_f).sum(), gw

    check("fc/input", fc_x, xf)
    check("fc/weight", fc_w, fc.weight.copy())

    # softmax jacobian
    sm = Softmax()
    xm = rng.normal(size=(3, 5))
    proj_m = rng.normal(size=xm.shape)

    def softmax_x(t):
        out = sm.forward(t)
        return (out * proj_m).sum(), sm.backward(proj_m)

    check("softmax/input", softmax_x, xm)

    # l1 renormalization on strictly positive rows (the +-h stays nonnegative)
    l1 = L1Normalize()
    xl = rng.uniform(0.1, 1.0, size=(3, 5))
    proj_l = rng.normal(size=xl.shape)

    def l1_x(t):
        out = l1.forward(t)
        return (out * proj_l).sum(), l1.backward(proj_l)

    check("l1_normalize/input", l1_x, xl)

    return reports


def run_composite_checks(h=1e-3, tol=1e-4, seed=0, fusions=(Fusion.S, Fusion.P)):
    """Gradient-check the full encoder + loss on a 4-pixel batch, per tensor."""
    reports = []
    weights = LossWeights()
    for fusion in fusions:
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(bands=16, num_endmembers=3, block1=(3, 3),
                          block2=(4, 3), block3=(2, 3), pool=(2, 2),
                          fusion=fusion, seed=seed)
        endmembers = rng.uniform(0.1, 1.0, size=(16, 3))
        model = build_model(cfg, endmembers)
        x = rng.uniform(0.05, 1.0, size=(4, 16))
        for tensor_name in model.trainables:
            def f(t, name=tensor_name):
                model.trainables[name][...] = t
                breakdown, grads = model_gradients(model, x, weights,
                                                   update_running=False)
                return breakdown.total, grads[name]

            reports.append(grad_check(
                f, model.trainables[tensor_name].copy(), h=h, tol=tol, rng=rng,
                name=f"dscn_{fusion.value}/{tensor_name}"))
    return reports


def run_all_checks(h=1e-3, tol=1e-4, seed=0):
    return run_layer_checks(h=h, tol=tol, seed=seed) + \
        run_composite_checks(h=h, tol=tol, seed=seed)
