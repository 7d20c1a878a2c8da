"""Unpaired training objectives and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor

PROB_CLAMP = 1e-6
# small enough that gain/offset invariance holds to ~1e-10 on real images
LAYERNORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_gan_split: float = 0.9
    alpha_gan: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.lambda_gan_split <= 1.0:
            raise ValueError(f"lambda_gan_split must lie in [0, 1], got {self.lambda_gan_split}")
        if self.alpha_gan < 0:
            raise ValueError(f"alpha_gan must be >= 0, got {self.alpha_gan}")


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def idem_loss(gen_yy: Tensor, y: Tensor) -> Tensor:
    """Mean absolute error between G(y|y) and y."""
    _same_shape(gen_yy, y, "idem_loss")
    return ad.tabs(gen_yy - y).mean()


def image_gradients(img: Tensor) -> tuple[Tensor, Tensor]:
    """Forward differences along width and height; the last column/row is zero."""
    n, c, h, w = img.shape
    zero_col = ad.Tensor(img.data[..., :1] * 0)
    zero_row = ad.Tensor(img.data[..., :1, :] * 0)
    dx = ad.concat([img[..., 1:] - img[..., :-1], zero_col], axis=3)
    dy = ad.concat([img[..., 1:, :] - img[..., :-1, :], zero_row], axis=2)
    return dx, dy


def spatial_loss(gen: Tensor, y1: Tensor) -> Tensor:
    """Mean absolute difference of image gradients, averaged over both directions."""
    _same_shape(gen, y1, "spatial_loss")
    gx, gy = image_gradients(gen)
    tx, ty = image_gradients(y1)
    total = ad.tabs(gx - tx).sum() + ad.tabs(gy - ty).sum()
    return total * (1.0 / (2 * gen.data.size))


def layer_normalize(img: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Standardise each image over all of its channels and pixels."""
    mean = img.mean(axis=(1, 2, 3), keepdims=True)
    centered = img - mean
    var = (centered * centered).mean(axis=(1, 2, 3), keepdims=True)
    return centered / ad.sqrt(var + eps)


def color_loss(out: Tensor, x: Tensor) -> Tensor:
    """Squared drift of per-channel means after layer normalisation.

    Summed over RGB, averaged over the batch.
    """
    if out.ndim != 4 or out.shape[1] != 3 or x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"color_loss needs 3-channel images, got {out.shape} and {x.shape}")
    _same_shape(out, x, "color_loss")
    i_out = layer_normalize(out).mean(axis=(2, 3))
    i_x = layer_normalize(x).mean(axis=(2, 3))
    d = i_out - i_x
    return (d * d).sum(axis=1).mean()


def _log_prob(p: Tensor) -> Tensor:
    return ad.log(ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def _log_one_minus(p: Tensor) -> Tensor:
    return ad.log(1.0 - ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def gan_loss_d(d_real: Tensor, d_fake_low: Tensor, d_fake_norm: Tensor,
               w: LossWeights = LossWeights()) -> Tensor:
    """Discriminator objective with two fake families, negated for minimisation."""
    lam = w.lambda_gan_split
    real = _log_prob(d_real).mean()
    fake_low = _log_one_minus(d_fake_low).mean()
    fake_norm = _log_one_minus(d_fake_norm).mean()
    return -(real + fake_low * lam + fake_norm * (1.0 - lam))


def gan_loss_g(d_fake_low: Tensor, d_fake_norm: Tensor,
               w: LossWeights = LossWeights()) -> Tensor:
    """Non-saturating generator objective, same lambda split as the discriminator."""
    lam = w.lambda_gan_split
    low = _log_prob(d_fake_low).mean()
    norm = _log_prob(d_fake_norm).mean()
    return -(low * lam + norm * (1.0 - lam))


def total_loss(l_idem, l_spa, l_color, l_gan_g, w: LossWeights = LossWeights()):
    """l_idem + l_spa + l_color + alpha * l_gan_g (tensors or floats)."""
    return l_idem + l_spa + l_color + l_gan_g * w.alpha_gan
