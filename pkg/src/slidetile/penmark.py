"""Pen-marking quantification, triage, and cleaning.

Per-pixel color rules classify ink pixels into dark/red/green/blue channels
(disjoint, evaluated in that order). Tiles are triaged on the maximum channel
fraction: High tiles are discarded, Medium/Low tiles are cleaned by the
configured backend. The "fill" backend is a dependency-free inpainter that
replaces each pen pixel with the mean of the nearest non-pen pixels; "sidecar"
delegates to an external process over the segmentation wire protocol.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np
from scipy import ndimage

from .errors import CleaningBackendFailure, SidecarFailure
from .tiling import TileSet

CLEAN_BACKENDS = ("none", "fill", "sidecar")


@dataclass(frozen=True)
class PenRules:
    """Pixel-rule cutoffs. A pixel is dark if max(R,G,B) < dark_max; it is
    red/green/blue if that channel exceeds the other two by more than
    diff_min and itself exceeds channel_min."""

    dark_max: int = 60
    diff_min: int = 50
    channel_min: int = 100


@dataclass(frozen=True)
class PenStats:
    p_red: float
    p_green: float
    p_blue: float
    p_dark: float

    @property
    def max_fraction(self) -> float:
        return max(self.p_red, self.p_green, self.p_blue, self.p_dark)


@dataclass(frozen=True)
class PenThresholds:
    p_max: float = 0.9
    p_min: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_min < self.p_max <= 1.0:
            raise ValueError("require 0 <= p_min < p_max <= 1")


class PenClass(enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"

    @property
    def rank(self) -> int:
        return {"high": 2, "medium": 1, "low": 0}[self.value]


def _channel_masks(tile: np.ndarray, rules: PenRules) -> dict[str, np.ndarray]:
    r = tile[:, :, 0].astype(np.int32)
    g = tile[:, :, 1].astype(np.int32)
    b = tile[:, :, 2].astype(np.int32)
    dark = np.maximum(np.maximum(r, g), b) < rules.dark_max
    red = (r - np.maximum(g, b) > rules.diff_min) & (r > rules.channel_min)
    green = (g - np.maximum(r, b) > rules.diff_min) & (g > rules.channel_min)
    blue = (b - np.maximum(r, g) > rules.diff_min) & (b > rules.channel_min)
    # rules are disjoint, applied in order: dark, red, green, blue
    red &= ~dark
    green &= ~(dark | red)
    blue &= ~(dark | red | green)
    return {"dark": dark, "red": red, "green": green, "blue": blue}


def pen_mask(tile: np.ndarray, rules: PenRules = PenRules()) -> np.ndarray:
    """Boolean mask of pixels matching any pen rule."""
    masks = _channel_masks(tile, rules)
    return masks["dark"] | masks["red"] | masks["green"] | masks["blue"]


def pen_stats(tile: np.ndarray, rules: PenRules = PenRules()) -> PenStats:
    masks = _channel_masks(tile, rules)
    total = tile.shape[0] * tile.shape[1]
    return PenStats(
        p_red=int(masks["red"].sum()) / total,
        p_green=int(masks["green"].sum()) / total,
        p_blue=int(masks["blue"].sum()) / total,
        p_dark=int(masks["dark"].sum()) / total,
    )


def classify_pen(stats: PenStats, th: PenThresholds = PenThresholds()) -> PenClass:
    m = stats.max_fraction
    if m > th.p_max:
        return PenClass.HIGH
    if m > th.p_min:
        return PenClass.MEDIUM
    return PenClass.LOW


def _integral(arr: np.ndarray) -> np.ndarray:
    out = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(arr, axis=0, dtype=np.int64), axis=1, out=out[1:, 1:])
    return out


def _window_sum(integral: np.ndarray, y0, y1, x0, x1) -> np.ndarray:
    return integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]


def fill_clean(tile: np.ndarray, rules: PenRules = PenRules()) -> np.ndarray:
    """Replace pen pixels by the round-half-up mean of non-pen pixels in the
    smallest centered window that contains any; an all-pen tile becomes white.

    A final pass whitens any pixel still matching a pen rule so the cleaned
    tile is pen-free by the same rules (guaranteed for the default cutoffs).
    """
    pen = pen_mask(tile, rules)
    if not pen.any():
        return tile
    h, w = pen.shape
    out = tile.copy()
    if pen.all():
        out[:] = 255
        return out

    # Chebyshev distance to the nearest non-pen pixel = smallest window radius
    radius = ndimage.distance_transform_cdt(pen, metric="chessboard")
    ys, xs = np.nonzero(pen)
    r = radius[ys, xs].astype(np.int64)
    y0 = np.maximum(ys - r, 0)
    y1 = np.minimum(ys + r + 1, h)
    x0 = np.maximum(xs - r, 0)
    x1 = np.minimum(xs + r + 1, w)

    nonpen = (~pen).astype(np.int64)
    count_int = _integral(nonpen)
    counts = _window_sum(count_int, y0, y1, x0, x1)
    for c in range(3):
        chan_int = _integral(tile[:, :, c].astype(np.int64) * nonpen)
        sums = _window_sum(chan_int, y0, y1, x0, x1)
        out[ys, xs, c] = ((2 * sums + counts) // (2 * counts)).astype(np.uint8)

    still = pen_mask(out, rules)
    if still.any():
        out[still] = 255
    return out


def clean_tile(
    tile: np.ndarray,
    backend: str,
    rules: PenRules = PenRules(),
    sidecar: "Callable[[np.ndarray, int], np.ndarray] | None" = None,
    wire_id: int = 0,
) -> np.ndarray:
    """Clean a Medium/Low tile. Output dimensions always equal the input's.

    Raises CleaningBackendFailure on sidecar errors; callers pass the tile
    through uncleaned and record a warning.
    """
    if backend == "none":
        return tile
    if backend == "fill":
        return fill_clean(tile, rules)
    if backend == "sidecar":
        if sidecar is None:
            raise CleaningBackendFailure("sidecar cleaning backend not configured")
        try:
            cleaned = sidecar(tile, wire_id)
        except SidecarFailure as exc:
            raise CleaningBackendFailure(str(exc)) from exc
        if cleaned.shape != tile.shape:
            raise CleaningBackendFailure(
                f"sidecar returned shape {cleaned.shape}, expected {tile.shape}"
            )
        return cleaned
    raise ValueError(f"unknown cleaning backend {backend!r}")


@dataclass
class TriageResult:
    """Outcome of pen triage for one tile set."""

    set_index: int
    classes: dict[str, PenClass]
    discarded: bool
    survivors: list[tuple]  # (TileRef, cleaned raster, cleaning_changed)
    warnings: list[str]


def triage_set(
    tile_set: TileSet,
    th: PenThresholds,
    rules: PenRules = PenRules(),
    backend: str = "fill",
    sidecar: "Callable[[np.ndarray, int], np.ndarray] | None" = None,
) -> TriageResult:
    """Classify every member, drop High tiles, clean the rest.

    The whole set is discarded only when every member is High. Cleaning
    failures are downgraded to warnings (tile passes through uncleaned).
    """
    classes = {
        ref.variant: classify_pen(pen_stats(raster, rules), th)
        for ref, raster in tile_set.members
    }
    discarded = all(c is PenClass.HIGH for c in classes.values())
    survivors = []
    warnings: list[str] = []
    if not discarded:
        for ref, raster in tile_set.members:
            if classes[ref.variant] is PenClass.HIGH:
                continue
            try:
                cleaned = clean_tile(raster, backend, rules, sidecar, ref.wire_id)
            except CleaningBackendFailure as exc:
                warnings.append(f"{ref.tile_id}: cleaning failed, passed through ({exc})")
                cleaned = raster
            changed = cleaned is not raster and not np.array_equal(cleaned, raster)
            survivors.append((ref, cleaned, changed))
    return TriageResult(set_index=tile_set.set_index, classes=classes,
                        discarded=discarded, survivors=survivors, warnings=warnings)


def filter_sets(
    sets: Iterable[TileSet],
    th: PenThresholds,
    rules: PenRules = PenRules(),
    backend: str = "fill",
    sidecar: "Callable[[np.ndarray, int], np.ndarray] | None" = None,
    on_result: "Callable[[TriageResult], None] | None" = None,
) -> Iterator[TileSet]:
    """Stream surviving tile sets with High members removed and the rest cleaned."""
    for tile_set in sets:
        result = triage_set(tile_set, th, rules, backend, sidecar)
        if on_result is not None:
            on_result(result)
        if result.discarded:
            continue
        yield TileSet(set_index=tile_set.set_index,
                      members=[(ref, raster) for ref, raster, _ in result.survivors])
