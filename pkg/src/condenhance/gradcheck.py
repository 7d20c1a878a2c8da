"""Central-difference verification of analytic gradients.

Each registered case builds a small random problem ``(fn, inputs)``; the
checked scalar is ``sum(fn(*inputs) * probe)`` with a fixed random probe so
that no gradient vanishes by symmetry. The reported error of a trial is
``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` taken over
all inputs of the trial together; a case reports the worst trial.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (
    CCMParams,
    CCMStage,
    Conv,
    Linear,
    MCGParams,
    PSMParams,
    adain,
    ccm_forward,
    channel_stats,
    mcg_forward,
    psm_forward,
)

Builder = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]

OPERATORS: dict[str, Builder] = {}
BLOCKS: dict[str, Builder] = {}


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


def register(name: str, registry: dict[str, Builder] | None = None):
    def deco(fn: Builder) -> Builder:
        (OPERATORS if registry is None else registry)[name] = fn
        return fn
    return deco


def _leaf(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, margin=1e-3) -> Tensor:
    v = rng.uniform(-1, 1, size=shape)
    v = np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin * 2, v)
    return Tensor(v, requires_grad=True)


# -- operator cases --------------------------------------------------------------


@register("conv2d")
def _conv_same(rng):
    x, w, b = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    return (lambda x, w, b: ad.conv2d(x, w, b, stride=1, pad=1)), [x, w, b]


@register("conv2d_stride2")
def _conv_stride(rng):
    x, w, b = _leaf(rng, 2, 3, 6, 6), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    return (lambda x, w, b: ad.conv2d(x, w, b, stride=2, pad=1)), [x, w, b]


@register("instance_norm")
def _inorm(rng):
    return (lambda x: ad.instance_norm(x, 1e-5)), [_leaf(rng, 2, 3, 4, 4)]


@register("global_avg_pool")
def _gap(rng):
    return ad.global_avg_pool, [_leaf(rng, 2, 3, 4, 5)]


@register("fully_connected")
def _fc(rng):
    return ad.fully_connected, [_leaf(rng, 3, 5), _leaf(rng, 4, 5), _leaf(rng, 4)]


@register("leaky_relu")
def _lrelu(rng):
    return (lambda x: ad.leaky_relu(x, 0.2)), [_away_from_zero(rng, 2, 3, 4, 4)]


@register("upsample_nearest")
def _ups(rng):
    return (lambda x: ad.upsample_nearest(x, 2)), [_leaf(rng, 2, 3, 3, 3)]


@register("concat_channels")
def _cat(rng):
    return ad.concat_channels, [_leaf(rng, 2, 2, 3, 3), _leaf(rng, 2, 3, 3, 3)]


@register("sigmoid")
def _sig(rng):
    return ad.sigmoid, [_leaf(rng, 2, 3, 3, 3, lo=-4, hi=4)]


@register("chain_conv_norm_relu")
def _chain(rng):
    x, w, b = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)

    def fn(x, w, b):
        return ad.leaky_relu(ad.instance_norm(ad.conv2d(x, w, b, 1, 1)), 0.2)

    return fn, [x, w, b]


# -- block cases -----------------------------------------------------------------


def _conv(rng, cin, cout) -> Conv:
    return Conv(_leaf(rng, cout, cin, 3, 3, lo=-0.5, hi=0.5), _leaf(rng, cout, lo=-0.2, hi=0.2))


def _linear(rng, din, dout) -> Linear:
    return Linear(_leaf(rng, dout, din, lo=-0.5, hi=0.5), _leaf(rng, dout, lo=-0.2, hi=0.2))


def _param_leaves(obj) -> list[Tensor]:
    from .networks import _walk
    return [t for _, t in _walk("", obj)]


@register("adain", BLOCKS)
def _adain(rng):
    content, style = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 2, 3, 4, 4)

    def fn(c, s):
        mean, std = channel_stats(s)
        return adain(c, mean, std)

    return fn, [content, style]


@register("psm", BLOCKS)
def _psm(rng):
    c = 3
    params = PSMParams(_conv(rng, c, c), _conv(rng, c, c))
    skipped, up = _leaf(rng, 2, c, 4, 4), _leaf(rng, 2, c, 4, 4)
    leaves = _param_leaves(params)

    def fn(skipped, up, *_):
        return psm_forward(skipped, up, params)

    return fn, [skipped, up] + leaves


@register("mcg", BLOCKS)
def _mcg(rng):
    d, code = 4, 6
    params = MCGParams(_linear(rng, 2 * d, d), _linear(rng, 2 * d, d), _linear(rng, d, code))
    xp, yp = _leaf(rng, 2, d), _leaf(rng, 2, d)

    def fn(xp, yp, *_):
        return mcg_forward(xp, yp, params)

    return fn, [xp, yp] + _param_leaves(params)


@register("ccm", BLOCKS)
def _ccm(rng):
    c, d, hidden = 3, 5, 6
    params = CCMParams([CCMStage(_linear(rng, d, hidden), _linear(rng, hidden, 4 * c))
                        for _ in range(3)])
    x, code = _leaf(rng, 2, c, 3, 3), _leaf(rng, 2, d)

    def fn(x, code, *_):
        return ccm_forward(x, code, params)

    return fn, [x, code] + _param_leaves(params)


# -- driver ----------------------------------------------------------------------


def _numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_case(builder: Builder, rng: np.random.Generator, eps: float) -> float:
    fn, inputs = builder(rng)
    for t in inputs:
        t.data = np.asarray(t.data, dtype=np.float64)
        t.grad = None
    out = fn(*inputs)
    probe = rng.standard_normal(out.shape)

    def scalar() -> float:
        with ad.no_grad():
            return float(np.sum(fn(*inputs).data * probe))

    (out * Tensor(probe)).sum().backward()
    analytic, numeric = [], []
    for t in inputs:
        analytic.append((t.grad if t.grad is not None else np.zeros_like(t.data)).ravel())
        numeric.append(_numeric_grad(scalar, t.data, eps).ravel())
    # one scale for the whole case: inputs whose true gradient is exactly zero
    # (a bias in front of a normalisation) must not divide noise by noise
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def grad_check(op_id: str, trial_count: int = 20, eps: float = 1e-6,
               tol: float = 1e-5, seed: int = 0) -> GradCheckResult:
    """Worst relative error of analytic vs central-difference gradients over random trials."""
    builder = OPERATORS.get(op_id) or BLOCKS.get(op_id)
    if builder is None:
        raise KeyError(f"no gradient check registered for {op_id!r}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trial_count):
        try:
            err = check_case(builder, rng, eps)
        except FloatingPointError:
            err = float("inf")
        worst = max(worst, err) if np.isfinite(err) else float("inf")
    return GradCheckResult(op_id, worst, trial_count, tol)


def end_to_end_check(seed: int = 0, size: int = 16, entries_per_param: int = 2,
                     eps: float = 1e-6, tol: float = 1e-3) -> GradCheckResult:
    """Spot-check d(total loss)/d(parameter) for every generator-side parameter.

    Runs in float64 on (2, 3, size, size) inputs. ``entries_per_param`` random
    entries of each parameter tensor are perturbed.
    """
    from .losses import LossWeights
    from .networks import init_params
    from .train import generator_losses

    rng = np.random.default_rng(seed)
    bundle = init_params(seed, dtype=np.float64)
    x = rng.uniform(0.0, 0.3, size=(2, 3, size, size))
    y = rng.uniform(0.3, 1.0, size=(2, 3, size, size))
    r = rng.uniform(0.3, 1.0, size=(2, 3, size, size))
    w = LossWeights()

    bundle.zero_grad()
    total, _ = generator_losses(bundle, x, y, r, w)
    total.backward()

    def value() -> float:
        with ad.no_grad():
            return generator_losses(bundle, x, y, r, w)[0].item()

    analytic, numeric = [], []
    for _, p in bundle.named_parameters():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        for idx in rng.choice(flat.size, size=min(entries_per_param, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = value()
            flat[idx] = orig - eps
            fm = value()
            flat[idx] = orig
            analytic.append(grad[idx])
            numeric.append((fp - fm) / (2 * eps))
    analytic, numeric = np.array(analytic), np.array(numeric)
    # per-entry error, scaled by the largest gradient magnitude in the sample
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                                                  1e-3 * scale)
    return GradCheckResult("end_to_end_total_loss", float(err.max()), len(analytic), tol)


def run_all(tol: float = 1e-5, trial_count: int = 20, eps: float = 1e-6,
            seed: int = 0) -> list[GradCheckResult]:
    return [grad_check(name, trial_count, eps, tol, seed)
            for name in list(OPERATORS) + list(BLOCKS)]
