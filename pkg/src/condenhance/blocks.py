"""Feature-modulation blocks used inside the translator.

* :func:`adain` re-imposes per-channel statistics on a normalised feature.
* :func:`psm_forward` is the pixel-wise self-modulation applied to every
  skip connection: the encoder feature is re-styled with the statistics of
  the decoder feature it is merged with.
* :func:`mcg_forward` fuses pooled input and reference features into the
  modulation code.
* :func:`ccm_forward` is the channel-wise piecewise-linear retouch, composed
  several times, whose coefficients are predicted from the modulation code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.2


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor
    stride: int = 1

    @property
    def pad(self) -> int:
        return self.weight.shape[-1] // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.fully_connected(x, self.weight, self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class PSMParams:
    conv1: Conv
    conv2: Conv


@dataclass
class MCGParams:
    fc_in: Linear
    fc_y: Linear
    fc_out: Linear


@dataclass
class CCMStage:
    """Coefficient head for one composition of the retouch curve."""

    hidden: Linear
    coef: Linear


@dataclass
class CCMParams:
    stages: list[CCMStage] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.stages)


# -- AdaIN ---------------------------------------------------------------


def channel_stats(x: Tensor, eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Per (sample, channel) mean and eps-guarded std, each shaped (n, c, 1, 1)."""
    mean = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    return mean, ad.sqrt(var + eps)


def adain(content: Tensor, style_mean, style_std, eps: float = 1e-5) -> Tensor:
    """Normalise ``content`` per channel, then scale by ``style_std`` and shift by ``style_mean``.

    Style statistics may be tensors or arrays broadcastable to (n, c, 1, 1).
    """
    style_mean = ad.as_tensor(style_mean, content.dtype)
    style_std = ad.as_tensor(style_std, content.dtype)
    c = content.shape[1]
    for name, s in (("mean", style_mean), ("std", style_std)):
        if s.ndim != 4:
            raise ValueError(f"adain style {name} must be (n, c, 1, 1), got {s.shape}")
        if s.shape[1] != c:
            raise ValueError(
                f"adain channel mismatch: content has {c} channels, style {name} {s.shape}"
            )
    return ad.instance_norm(content, eps) * style_std + style_mean


# -- PSM -------------------------------------------------------------------


def psm_forward(skipped: Tensor, upsampled: Tensor, params: PSMParams,
                eps: float = 1e-5) -> Tensor:
    """Re-style the skip feature with the upsampled feature's channel statistics.

    instance_norm -> conv3x3 -> lrelu -> conv3x3 -> lrelu -> AdaIN(stats of upsampled)
    """
    if skipped.shape[2:] != upsampled.shape[2:]:
        raise ValueError(
            f"psm spatial mismatch: skipped {skipped.shape}, upsampled {upsampled.shape}"
        )
    h = ad.instance_norm(skipped, eps)
    h = ad.leaky_relu(params.conv1(h), LEAKY_SLOPE)
    h = ad.leaky_relu(params.conv2(h), LEAKY_SLOPE)
    mean, std = channel_stats(upsampled, eps)
    return adain(h, mean, std, eps)


# -- MCG -------------------------------------------------------------------


def mcg_forward(x_pooled: Tensor, yref_pooled: Tensor, params: MCGParams,
                activation: bool = True) -> Tensor:
    """Modulation code ``fc_out(fc_in(c') * yref + fc_y(c'))`` with c' = [x, yref].

    A leaky ReLU follows fc_in and fc_y unless ``activation`` is False.
    """
    if x_pooled.shape != yref_pooled.shape:
        raise ValueError(
            f"mcg input mismatch: x {x_pooled.shape}, reference {yref_pooled.shape}"
        )
    joint = ad.concat([x_pooled, yref_pooled], axis=-1)
    gate = params.fc_in(joint)
    shift = params.fc_y(joint)
    if activation:
        gate = ad.leaky_relu(gate, LEAKY_SLOPE)
        shift = ad.leaky_relu(shift, LEAKY_SLOPE)
    return params.fc_out(gate * yref_pooled + shift)


# -- CCM -------------------------------------------------------------------


def retouch(x: Tensor, slope_hi, slope_lo, pivot, offset) -> Tensor:
    """Piecewise-linear curve with a per-channel pivot.

    ``slope_hi * (x - pivot) + offset`` where ``x > pivot``, otherwise
    ``slope_lo * (x - pivot) + offset``. The branch mask is held constant
    for differentiation.
    """
    slope_hi, slope_lo, pivot, offset = (
        ad.as_tensor(v, x.dtype) for v in (slope_hi, slope_lo, pivot, offset)
    )
    mask = x.data > pivot.data
    slope = ad.where(mask, slope_hi, slope_lo)
    return slope * (x - pivot) + offset


def ccm_coefficients(code: Tensor, stage: CCMStage, channels: int):
    """Predict (slope_hi, slope_lo, pivot, offset), each (n, c, 1, 1).

    The head predicts residuals around the identity curve, so a zero head
    output means slopes of one and zero pivot/offset.
    """
    raw = stage.coef(ad.leaky_relu(stage.hidden(code), LEAKY_SLOPE))
    if raw.shape[-1] != 4 * channels:
        raise ValueError(
            f"ccm head produces {raw.shape[-1]} coefficients, need 4*{channels}"
        )
    n = raw.shape[0]
    raw = raw.reshape(n, 4, channels, 1, 1)
    return 1.0 + raw[:, 0], 1.0 + raw[:, 1], raw[:, 2], raw[:, 3]


def ccm_forward(x: Tensor, code: Tensor, params: CCMParams) -> Tensor:
    """Apply the retouch curve ``params.depth`` times, fresh coefficients per stage."""
    c = x.shape[1]
    if code.ndim != 2 or code.shape[0] != x.shape[0]:
        raise ValueError(f"ccm code shape {code.shape} does not match batch of {x.shape}")
    for stage in params.stages:
        if stage.hidden.weight.shape[1] != code.shape[1]:
            raise ValueError(
                f"ccm head expects code length {stage.hidden.weight.shape[1]}, got {code.shape[1]}"
            )
        a_hi, a_lo, pivot, offset = ccm_coefficients(code, stage, c)
        x = retouch(x, a_hi, a_lo, pivot, offset)
    return x


def retouch_numpy(x: np.ndarray, slope_hi, slope_lo, pivot, offset) -> np.ndarray:
    """Plain-array version of :func:`retouch` for inspection and tests."""
    return np.where(x > pivot, slope_hi * (x - pivot), slope_lo * (x - pivot)) + offset
