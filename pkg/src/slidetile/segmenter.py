"""Per-pixel artifact segmentation with pluggable backends.

Label semantics: 0 background, 1 qualified tissue, 2 fold, 3 blur. Backends:

* ``heuristic`` — built-in color/sharpness rules; the reference stand-in so
  the pipeline runs without any model.
* ``maskdir`` — loads precomputed ``<tile_id>.png`` masks (8-bit grayscale,
  values 0-3), e.g. exported from a real segmentation model.
* ``sidecar`` — round-trips tiles through an external process speaking the
  wire protocol in :mod:`slidetile.wire`.

All backends produce a mask of the tile's dimensions; small background holes
(< 25 px) are closed afterwards.

The heuristic is written in exact integer / IEEE-754 arithmetic (integer
Laplacian, integer window sums, single-division HSL terms) so an independent
reimplementation can reproduce its output byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import MaskMissing, MaskShapeMismatch, SidecarFailure
from .wire import DEFAULT_TIMEOUT, SidecarPool

LABEL_BACKGROUND = 0
LABEL_TISSUE = 1
LABEL_FOLD = 2
LABEL_BLUR = 3

HOLE_MIN_AREA = 25

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class HeuristicParams:
    """Thresholds for the built-in segmenter (unit-scale HSL; blur uses the
    local variance of the 4-neighbor Laplacian of grayscale)."""

    bg_lightness: float = 0.88
    bg_saturation: float = 0.12
    fold_saturation: float = 0.55
    fold_lightness: float = 0.45
    blur_variance: float = 25.0
    blur_window: int = 9


@dataclass
class SegBackendConfig:
    kind: str = "heuristic"  # heuristic | maskdir | sidecar
    maskdir: Path | None = None
    sidecar_cmd: list[str] | None = None
    sidecar_procs: int = 1
    sidecar_timeout: float = DEFAULT_TIMEOUT
    heuristic: HeuristicParams = field(default_factory=HeuristicParams)

    def __post_init__(self) -> None:
        if self.kind not in ("heuristic", "maskdir", "sidecar"):
            raise ValueError(f"unknown segmentation backend {self.kind!r}")
        if self.kind == "maskdir" and self.maskdir is None:
            raise ValueError("maskdir backend needs a mask directory")
        if self.kind == "sidecar" and not self.sidecar_cmd:
            raise ValueError("sidecar backend needs a launch command")


def _hsl_terms(tile: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-scale lightness and saturation from 8-bit RGB."""
    r = tile[:, :, 0].astype(np.int32)
    g = tile[:, :, 1].astype(np.int32)
    b = tile[:, :, 2].astype(np.int32)
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    total = mx + mn
    lightness = total / 510.0
    denom = np.where(total <= 255, total, 510 - total)
    saturation = (mx - mn) / np.maximum(denom, 1)
    saturation[mx == mn] = 0.0
    return lightness, saturation


def _laplacian_window_stat(tile: np.ndarray, window: int) -> np.ndarray:
    """n^2 * local variance of the grayscale Laplacian, as exact integers.

    Borders are handled by edge replication; the window sample count is a
    constant n = window^2 everywhere, so the blur test reduces to an integer
    comparison against variance * n^2.
    """
    r = tile[:, :, 0].astype(np.int64)
    g = tile[:, :, 1].astype(np.int64)
    b = tile[:, :, 2].astype(np.int64)
    gray = (299 * r + 587 * g + 114 * b + 500) // 1000

    padded = np.pad(gray, 1, mode="edge")
    lap = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
           + padded[1:-1, 2:] - 4 * gray)

    half = window // 2
    lp = np.pad(lap, half, mode="edge")

    def window_sums(arr: np.ndarray) -> np.ndarray:
        cs = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.int64)
        np.cumsum(np.cumsum(arr, axis=0, dtype=np.int64), axis=1, out=cs[1:, 1:])
        return (cs[window:, window:] - cs[:-window, window:]
                - cs[window:, :-window] + cs[:-window, :-window])

    s1 = window_sums(lp)
    s2 = window_sums(lp * lp)
    n = window * window
    return n * s2 - s1 * s1


def heuristic_segment(tile: np.ndarray, params: HeuristicParams = HeuristicParams()) -> np.ndarray:
    """Rule-based segmentation: white background, saturated-dark folds, and
    low-sharpness blur, in that priority order; everything else is tissue."""
    if params.blur_window % 2 != 1 or params.blur_window < 1:
        raise ValueError("blur_window must be odd and positive")
    lightness, saturation = _hsl_terms(tile)
    background = (lightness > params.bg_lightness) & (saturation < params.bg_saturation)
    fold = ~background & (saturation > params.fold_saturation) & (lightness < params.fold_lightness)

    stat = _laplacian_window_stat(tile, params.blur_window)
    n = params.blur_window * params.blur_window
    blur = ~background & ~fold & (stat < params.blur_variance * (n * n))

    labels = np.full(tile.shape[:2], LABEL_TISSUE, dtype=np.uint8)
    labels[blur] = LABEL_BLUR
    labels[fold] = LABEL_FOLD
    labels[background] = LABEL_BACKGROUND
    return labels


def close_small_background(mask: np.ndarray, min_area: int = HOLE_MIN_AREA) -> np.ndarray:
    """Relabel 8-connected background components with area < min_area to the
    modal non-background label of their adjacent pixels (ties -> smaller
    label). Idempotent; never touches non-background pixels."""
    background = mask == LABEL_BACKGROUND
    if not background.any():
        return mask
    labeled, count = ndimage.label(background, structure=_EIGHT)
    if count == 0:
        return mask
    areas = np.bincount(labeled.ravel())
    out = mask.copy()
    for comp in range(1, count + 1):
        if areas[comp] >= min_area:
            continue
        comp_mask = labeled == comp
        ring = ndimage.binary_dilation(comp_mask, structure=_EIGHT) & ~comp_mask
        neighbors = out[ring]
        neighbors = neighbors[neighbors != LABEL_BACKGROUND]
        if neighbors.size == 0:
            continue  # isolated hole with no labeled surroundings
        counts = np.bincount(neighbors, minlength=4)
        target = int(np.argmax(counts[1:])) + 1  # argmax keeps the smaller label on ties
        out[comp_mask] = target
    return out


def load_maskdir_mask(maskdir: Path, tile_id: str, expected_shape: tuple[int, int]) -> np.ndarray:
    path = Path(maskdir) / f"{tile_id}.png"
    if not path.is_file():
        raise MaskMissing(f"no mask for tile {tile_id}: expected {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        mask = np.asarray(img, dtype=np.uint8)
    validate_mask(mask, expected_shape, origin=str(path))
    return mask


def validate_mask(mask: np.ndarray, expected_shape: tuple[int, int], origin: str) -> None:
    if mask.shape != expected_shape:
        raise MaskShapeMismatch(
            f"{origin}: mask shape {mask.shape} != tile shape {expected_shape}"
        )
    if mask.max(initial=0) > 3:
        raise MaskShapeMismatch(f"{origin}: mask contains labels outside 0-3")


class Segmenter:
    """Backend dispatcher holding any long-lived sidecar pool.

    A shared pool may be injected (e.g. when pen cleaning talks to the same
    sidecar); it is then not closed by this segmenter.
    """

    def __init__(self, cfg: SegBackendConfig, pool: SidecarPool | None = None) -> None:
        self.cfg = cfg
        self._owns_pool = False
        self._pool = pool
        if cfg.kind == "sidecar" and pool is None:
            self._pool = SidecarPool(cfg.sidecar_cmd, cfg.sidecar_procs,
                                     cfg.sidecar_timeout)
            self._owns_pool = True

    def segment(self, tile: np.ndarray, tile_id: str, wire_id: int = 0) -> np.ndarray:
        """Segment one tile and close small background holes."""
        if tile.size == 0:
            raise ValueError("cannot segment an empty tile")
        shape = tile.shape[:2]
        if self.cfg.kind == "heuristic":
            mask = heuristic_segment(tile, self.cfg.heuristic)
        elif self.cfg.kind == "maskdir":
            mask = load_maskdir_mask(self.cfg.maskdir, tile_id, shape)
        else:
            try:
                mask = self._pool.segment(tile, wire_id)
            except SidecarFailure:
                raise
            validate_mask(mask, shape, origin=f"sidecar response for {tile_id}")
        return close_small_background(mask)

    def close(self) -> None:
        if self._pool is not None and self._owns_pool:
            self._pool.close()

    def __enter__(self) -> "Segmenter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def segment_tile(tile: np.ndarray, cfg: SegBackendConfig, tile_id: str,
                 wire_id: int = 0) -> np.ndarray:
    """One-shot segmentation (spins up and tears down any sidecar; pipelines
    should hold a :class:`Segmenter` instead)."""
    with Segmenter(cfg) as seg:
        return seg.segment(tile, tile_id, wire_id)
