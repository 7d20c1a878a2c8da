"""Inference helpers on plain float arrays."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imageio import crop, pad_to_multiple
from .networks import GeneratorBundle, generator


def _param_dtype(bundle: GeneratorBundle):
    return next(iter(bundle.named_parameters()))[1].dtype


def enhance(bundle: GeneratorBundle, x: np.ndarray, y_ref: np.ndarray) -> np.ndarray:
    """G(x | y_ref) for (3, h, w) or (n, 3, h, w) arrays with h, w divisible by 8.

    A single reference is broadcast across a batch of inputs.
    """
    single = x.ndim == 3
    xs = x[None] if single else x
    rs = y_ref[None] if y_ref.ndim == 3 else y_ref
    if rs.shape[0] != xs.shape[0]:
        rs = np.broadcast_to(rs, (xs.shape[0],) + rs.shape[1:])
    dtype = _param_dtype(bundle)
    with ad.no_grad():
        out = generator(Tensor(np.ascontiguousarray(xs, dtype=dtype)),
                        Tensor(np.ascontiguousarray(rs, dtype=dtype)), bundle).data
    return out[0] if single else out


def enhance_image(bundle: GeneratorBundle, image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Enhance one (3, h, w) image of any size: reflect-pad to multiples of 8, run, crop."""
    padded, size = pad_to_multiple(image, 8)
    ref, _ = pad_to_multiple(reference, 8)
    return crop(enhance(bundle, padded, ref), size)
