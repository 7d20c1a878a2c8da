"""Full-reference image metrics and the reference-set evaluation protocol.

An enhancer conditioned on a reference produces one output per reference,
so each test image gets a spread of scores. The report keeps every
(image, reference) score and summarises the min / avg / max over references,
averaged across test images.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import LUMA

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _as_array(a) -> np.ndarray:
    return np.asarray(getattr(a, "data", a), dtype=np.float64)


def mse(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, cap_db: float = 99.0) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], all channels jointly."""
    err = mse(a, b)
    if err == 0:
        return float(cap_db)
    return float(min(10.0 * np.log10(1.0 / err), cap_db))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    patches = np.lib.stride_tricks.sliding_window_view(img, win.shape)
    return np.tensordot(patches, win, axes=([-2, -1], [0, 1]))


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=([0], [0]))
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (3, h, w) or (h, w) image, got {img.shape}")


def ssim(a, b) -> float:
    """Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5), valid windows only."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 4:
        return float(np.mean([ssim(x, y) for x, y in zip(a, b)]))
    la, lb = _luma(a), _luma(b)
    if min(la.shape) < SSIM_WINDOW:
        raise ValueError(f"image {la.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _filter_valid(la, win)
    mu_b = _filter_valid(lb, win)
    var_a = _filter_valid(la * la, win) - mu_a * mu_a
    var_b = _filter_valid(lb * lb, win) - mu_b * mu_b
    cov = _filter_valid(la * lb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- evaluation report ---------------------------------------------------------


@dataclass
class EvalRow:
    image_id: str
    reference_id: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def per_image(self) -> dict[str, dict[str, tuple[float, float, float]]]:
        """image_id -> metric -> (min, avg, max) over references."""
        grouped: dict[str, list[EvalRow]] = {}
        for r in self.rows:
            grouped.setdefault(r.image_id, []).append(r)
        out = {}
        for img, rows in grouped.items():
            out[img] = {}
            for metric in ("psnr_db", "ssim"):
                vals = np.array([getattr(r, metric) for r in rows])
                out[img][metric] = (float(vals.min()), float(vals.mean()), float(vals.max()))
        return out

    def summary(self) -> dict[str, dict[str, float]]:
        """Min/Avg/Max rows: per-image extremes over references, averaged over images."""
        per = self.per_image()
        out = {}
        for k, label in enumerate(("Min", "Avg", "Max")):
            out[label] = {
                metric: float(np.mean([per[i][metric][k] for i in per]))
                for metric in ("psnr_db", "ssim")
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "reference_id", "psnr_db", "ssim"])
        for r in self.rows:
            w.writerow([r.image_id, r.reference_id, f"{r.psnr_db:.6f}", f"{r.ssim:.6f}"])
        w.writerow([])
        w.writerow(["summary", "", "psnr_db", "ssim"])
        for label, vals in self.summary().items():
            w.writerow([label, "", f"{vals['psnr_db']:.6f}", f"{vals['ssim']:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rows = []
        reader = csv.reader(io.StringIO(text))
        next(reader)
        for rec in reader:
            if not rec:
                break
            rows.append(EvalRow(rec[0], rec[1], float(rec[2]), float(rec[3])))
        return cls(rows)


def eval_reference_set(enhance_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       test_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                       refs: Sequence[np.ndarray],
                       image_ids: Sequence[str] | None = None,
                       ref_ids: Sequence[str] | None = None) -> EvalReport:
    """Enhance every dark test image with every reference and score against its truth.

    ``enhance_fn(dark, ref)`` returns the enhanced (3, h, w) image.
    """
    if not test_pairs:
        raise ValueError("no test pairs to evaluate")
    if not refs:
        raise ValueError("at least one reference image is required")
    image_ids = list(image_ids) if image_ids is not None else [f"{i:04d}" for i in range(len(test_pairs))]
    ref_ids = list(ref_ids) if ref_ids is not None else [f"ref{j:03d}" for j in range(len(refs))]
    report = EvalReport()
    for img_id, (dark, truth) in zip(image_ids, test_pairs):
        for ref_id, ref in zip(ref_ids, refs):
            out = enhance_fn(dark, ref)
            report.rows.append(EvalRow(img_id, ref_id, psnr(out, truth), ssim(out, truth)))
    return report
