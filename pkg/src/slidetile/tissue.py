"""Low-resolution tissue mask and ROI extraction.

Tissue is darker than the white H&E background, so the mask keeps pixels
strictly below the Otsu threshold. Speckles under 25 px are dropped and the
surviving regions grow by one 8-connected dilation before the bounding box is
taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyHistogram, NoTissueFound
from .slide_io import SlideImage

MIN_TISSUE_COMPONENT_PX = 25

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class TissueROI:
    """Level-0 bounding box of detected tissue plus the thumbnail scale that
    produced it (per-axis, to undo anisotropic thumbnailing)."""

    x0: int
    y0: int
    x1: int
    y1: int
    scale_x: float
    scale_y: float

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def otsu_threshold(histogram) -> int:
    """Threshold maximizing between-class variance over a 256-bin histogram.

    Classes are {intensity < t} and {intensity >= t}; ties break to the
    smallest t. The scan is done in exact integer arithmetic so results match
    an exhaustive rational-arithmetic oracle bit for bit. A histogram with a
    single occupied bin is degenerate (zero variance everywhere) and returns
    that bin's index.
    """
    h = [int(c) for c in histogram]
    if len(h) != 256:
        raise ValueError("histogram must have 256 bins")
    if any(c < 0 for c in h):
        raise ValueError("histogram counts must be nonnegative")
    total = sum(h)
    if total == 0:
        raise EmptyHistogram("histogram has no samples")

    grand = sum(i * c for i, c in enumerate(h))
    best_t = -1
    best_num = 0  # (W*m0 - S*w0)^2, to be compared over common den w0*(W-w0)
    best_den = 1
    w0 = 0
    m0 = 0
    for t in range(256):
        # class 0 holds intensities < t
        if t > 0:
            w0 += h[t - 1]
            m0 += (t - 1) * h[t - 1]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        num = (total * m0 - grand * w0) ** 2
        den = w0 * w1
        # maximize num/den exactly; strict > keeps the smallest tied t
        if num * best_den > best_num * den:
            best_num = num
            best_den = den
            best_t = t

    if best_t < 0 or best_num == 0:
        # degenerate: all mass in one class for every split
        return next(i for i, c in enumerate(h) if c > 0)
    return best_t


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma grayscale, round-half-up, as uint8."""
    r = rgb[:, :, 0].astype(np.int32)
    g = rgb[:, :, 1].astype(np.int32)
    b = rgb[:, :, 2].astype(np.int32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def remove_small_components(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected foreground components with area < min_area."""
    labeled, count = ndimage.label(mask != 0, structure=_EIGHT)
    if count == 0:
        return np.zeros_like(mask)
    areas = np.bincount(labeled.ravel())
    keep = areas >= min_area
    keep[0] = False
    out = np.where(keep[labeled], 255, 0).astype(np.uint8)
    return out


def compute_tissue_mask(thumb: np.ndarray, dilate_iters: int = 1) -> np.ndarray:
    """Binary tissue mask (0/255) from an RGB thumbnail.

    Pixels strictly below the Otsu threshold of the luma histogram count as
    tissue. Components under 25 px are removed, then the mask is dilated with
    the full 3x3 structuring element. A uniform thumbnail (degenerate Otsu)
    yields an all-background mask.
    """
    gray = grayscale(thumb)
    hist = np.bincount(gray.ravel(), minlength=256)
    if np.count_nonzero(hist) <= 1:
        return np.zeros(gray.shape, dtype=np.uint8)
    thr = otsu_threshold(hist)
    mask = np.where(gray < thr, 255, 0).astype(np.uint8)
    mask = remove_small_components(mask, MIN_TISSUE_COMPONENT_PX)
    if dilate_iters > 0 and mask.any():
        grown = ndimage.binary_dilation(mask != 0, structure=_EIGHT, iterations=dilate_iters)
        mask = np.where(grown, 255, 0).astype(np.uint8)
    return mask


def roi_from_mask(mask: np.ndarray, slide: SlideImage) -> TissueROI:
    """Tight level-0 bounding box of mask foreground, clamped to slide bounds.

    The box is grown outward (floor/ceil) so that every level-0 projection of
    a foreground thumbnail pixel is contained.
    """
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise NoTissueFound("tissue mask is empty")
    th, tw = mask.shape
    scale_x = slide.width0 / tw
    scale_y = slide.height0 / th
    x0 = max(0, int(np.floor(xs.min() * scale_x)))
    y0 = max(0, int(np.floor(ys.min() * scale_y)))
    x1 = min(slide.width0, int(np.ceil((xs.max() + 1) * scale_x)))
    y1 = min(slide.height0, int(np.ceil((ys.max() + 1) * scale_y)))
    return TissueROI(x0=x0, y0=y0, x1=x1, y1=y1, scale_x=scale_x, scale_y=scale_y)
