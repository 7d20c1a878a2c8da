"""Synthetic unpaired data and batch sampling.

Normal-light images are procedural scenes (a smooth two-colour gradient with
a few flat rectangles and discs). Low-light images darken a *different* set
of such scenes with ``clip(scale * img**gamma + noise)``, so the two pools
share no content. A small paired (dark, bright) set is generated separately
for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Streams

LUMA = np.array([0.299, 0.587, 0.114])
MIN_NORMAL_LUMA = 0.4


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    count: int = 200
    test_count: int = 20
    image_size: int = 32
    gamma_min: float = 2.0
    gamma_max: float = 5.0
    scale_min: float = 0.1
    scale_max: float = 0.5
    noise_std: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.test_count < 0:
            raise ValueError(f"test_count must be >= 0, got {self.test_count}")
        if self.image_size < 8 or self.image_size % 8:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if self.gamma_min < 1 or self.gamma_max < self.gamma_min:
            raise ValueError(f"bad gamma range [{self.gamma_min}, {self.gamma_max}]")
        if not 0 < self.scale_min <= self.scale_max <= 1:
            raise ValueError(f"scale range must lie in (0, 1], got [{self.scale_min}, {self.scale_max}]")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class UnpairedDataset:
    """Two independent pools of (3, s, s) float32 images in [0, 1]."""

    low_pool: list[np.ndarray]
    normal_pool: list[np.ndarray]
    test_pairs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.low_pool or not self.normal_pool:
            raise ValueError("both image pools must be non-empty")


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of (..., 3, h, w) arrays -> (..., h, w)."""
    return np.tensordot(LUMA, img, axes=([0], [-3]))


def mean_luminance(img: np.ndarray) -> float:
    return float(luminance(np.asarray(img, dtype=np.float64)).mean())


def render_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    """A bright procedural scene with mean luminance >= 0.4."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = (np.cos(theta) * xx + np.sin(theta) * yy)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(0.25, 1.0, size=(2, 3))
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    for _ in range(rng.integers(1, 5)):
        color = rng.uniform(0.0, 1.0, size=3)[:, None, None]
        if rng.random() < 0.5:
            x0, y0 = rng.integers(0, size - 2, size=2)
            w, h = rng.integers(3, max(4, size // 2), size=2)
            mask = (xx * (size - 1) >= x0) & (xx * (size - 1) < x0 + w) & \
                   (yy * (size - 1) >= y0) & (yy * (size - 1) < y0 + h)
        else:
            cx, cy = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.08, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img = np.where(mask[None], color, img)
    while mean_luminance(img) < MIN_NORMAL_LUMA:
        img = img**0.8
    return img


def darken(img: np.ndarray, gamma: float, scale: float, noise: np.ndarray | None) -> np.ndarray:
    out = scale * img**gamma
    if noise is not None:
        out = out + noise
    return np.clip(out, 0.0, 1.0)


def _dark_version(rng: np.random.Generator, img: np.ndarray, spec: SyntheticDatasetSpec):
    gamma = rng.uniform(spec.gamma_min, spec.gamma_max)
    scale = rng.uniform(spec.scale_min, spec.scale_max)
    noise = rng.standard_normal(img.shape) * spec.noise_std if spec.noise_std > 0 else None
    return darken(img, gamma, scale, noise)


def synth_generate(spec: SyntheticDatasetSpec) -> UnpairedDataset:
    """Build the unpaired pools plus the held-out paired test set."""
    spec.validate()
    rng = Streams(spec.seed).generator("synth")
    s = spec.image_size
    normal = [render_scene(rng, s) for _ in range(spec.count)]
    # low-light pool darkens scenes that never appear in the normal pool
    low = [_dark_version(rng, render_scene(rng, s), spec) for _ in range(spec.count)]
    pairs = []
    for _ in range(spec.test_count):
        truth = render_scene(rng, s)
        pairs.append((_dark_version(rng, truth, spec), truth))
    f32 = lambda a: a.astype(np.float32)  # noqa: E731
    return UnpairedDataset(
        [f32(a) for a in low], [f32(a) for a in normal],
        [(f32(d), f32(t)) for d, t in pairs],
    )


def sample_batch(ds: UnpairedDataset, rng: np.random.Generator, batch_size: int):
    """Independent uniform draws: (x low, y normal, y_ref normal), each (b, 3, s, s)."""
    xi = rng.integers(0, len(ds.low_pool), size=batch_size)
    yi = rng.integers(0, len(ds.normal_pool), size=batch_size)
    ri = rng.integers(0, len(ds.normal_pool), size=batch_size)
    x = np.stack([ds.low_pool[i] for i in xi])
    y = np.stack([ds.normal_pool[i] for i in yi])
    r = np.stack([ds.normal_pool[i] for i in ri])
    return x, y, r
