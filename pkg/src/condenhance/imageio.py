"""PNG <-> float image conversion and dataset directories."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .data import UnpairedDataset

log = logging.getLogger(__name__)


class ImageDecodeError(ValueError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, h, w) floats in [0, 1] -> (h, w, 3) uint8 via round(v * 255)."""
    arr = np.asarray(img, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / 255.0).transpose(2, 0, 1).copy()


def read_png(path) -> np.ndarray:
    """Decode an image file to a (3, h, w) float32 array; alpha is dropped."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGBA", "LA") or "transparency" in im.info:
                log.warning("%s: dropping alpha channel", path)
            rgb = im.convert("RGB")
            return from_uint8(np.asarray(rgb))
    except (OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG", optimize=False)


def list_pngs(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def load_dataset_dir(directory, image_size: int | None = None) -> UnpairedDataset:
    """Read ``low/`` and ``normal/`` (and ``test_pairs/`` if present) from a synth output dir."""
    root = Path(directory)
    low = [read_png(p) for p in list_pngs(root / "low")]
    normal = [read_png(p) for p in list_pngs(root / "normal")]
    for img in low + normal:
        if image_size is not None and img.shape[1:] != (image_size, image_size):
            raise ValueError(f"{directory}: image of shape {img.shape} does not match image_size {image_size}")
    pairs = load_test_pairs(root / "test_pairs")[1] if (root / "test_pairs").is_dir() else []
    return UnpairedDataset(low, normal, pairs)


def load_test_pairs(directory):
    """Pair ``<id>_dark.png`` with ``<id>_truth.png``; returns (ids, pairs).

    Unmatched files raise ``ValueError`` listing every orphan.
    """
    darks, truths, strays = {}, {}, []
    for p in list_pngs(directory):
        if p.stem.endswith("_dark"):
            darks[p.stem[:-5]] = p
        elif p.stem.endswith("_truth"):
            truths[p.stem[:-6]] = p
        else:
            strays.append(p)
    orphans = sorted(
        [str(p) for k, p in darks.items() if k not in truths]
        + [str(p) for k, p in truths.items() if k not in darks]
        + [str(p) for p in strays]
    )
    if orphans:
        raise ValueError(f"unmatched test images: {', '.join(orphans)}")
    ids = sorted(darks)
    return ids, [(read_png(darks[i]), read_png(truths[i])) for i in ids]


def pad_to_multiple(img: np.ndarray, multiple: int = 8) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad (3, h, w) on the bottom/right up to a multiple; returns (padded, (h, w))."""
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    mode = "reflect" if h > 1 and w > 1 and ph < h and pw < w else "symmetric"
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode)
    return padded, (h, w)


def crop(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return img[:, :h, :w]
