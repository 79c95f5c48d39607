"""Center-tile grid planning and overlapping neighbor extraction.

Center tiles tile the ROI disjointly in row-major order (sets are indexed
1..N). Each center gets up to four neighbors offset by tile size minus the
overlap; neighbors that fall entirely outside the ROI are dropped, while
partially-outside ones are kept and padded white on read.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ZeroAreaROI
from .slide_io import RegionSpec, SlideImage, read_region
from .tissue import TissueROI

VARIANTS = ("C", "L", "U", "R", "D")
# "B" is the raw-center pseudo-variant used for the standard-tiling baseline
VARIANT_INDEX = {v: i for i, v in enumerate(VARIANTS + ("B",))}


@dataclass(frozen=True)
class TileRef:
    set_index: int
    variant: str
    x: int
    y: int
    tile_w: int
    tile_h: int

    @property
    def tile_id(self) -> str:
        return f"tile_{self.set_index:06d}_{self.variant}"

    @property
    def wire_id(self) -> int:
        return self.set_index * 8 + VARIANT_INDEX[self.variant]


@dataclass(frozen=True)
class TileGrid:
    roi: TissueROI
    tile_w: int
    tile_h: int
    overlap: float
    n_cols: int
    n_rows: int

    @property
    def n_sets(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def overlap_px_x(self) -> int:
        return round_half_up(self.overlap * self.tile_w)

    @property
    def overlap_px_y(self) -> int:
        return round_half_up(self.overlap * self.tile_h)


@dataclass
class TileSet:
    set_index: int
    members: list[tuple[TileRef, np.ndarray]]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def plan_grid(roi: TissueROI, tile_w: int, tile_h: int, overlap: float) -> TileGrid:
    if tile_w <= 0 or tile_h <= 0:
        raise ValueError("tile dimensions must be positive")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    if roi.width <= 0 or roi.height <= 0:
        raise ZeroAreaROI(f"ROI has no area: {roi}")
    n_cols = math.ceil(roi.width / tile_w)
    n_rows = math.ceil(roi.height / tile_h)
    return TileGrid(roi=roi, tile_w=tile_w, tile_h=tile_h, overlap=overlap,
                    n_cols=n_cols, n_rows=n_rows)


def center_ref(grid: TileGrid, set_index: int) -> TileRef:
    if not 1 <= set_index <= grid.n_sets:
        raise ValueError(f"set_index {set_index} out of range 1..{grid.n_sets}")
    row, col = divmod(set_index - 1, grid.n_cols)
    return TileRef(
        set_index=set_index,
        variant="C",
        x=grid.roi.x0 + col * grid.tile_w,
        y=grid.roi.y0 + row * grid.tile_h,
        tile_w=grid.tile_w,
        tile_h=grid.tile_h,
    )


def _intersects_roi(roi: TissueROI, x: int, y: int, w: int, h: int) -> bool:
    return x < roi.x1 and x + w > roi.x0 and y < roi.y1 and y + h > roi.y0


def neighbors_for(center: TileRef, grid: TileGrid) -> list[TileRef]:
    """The L/U/R/D neighbors of a center tile, dropping fully-outside ones."""
    if center.variant != "C":
        raise ValueError("neighbors_for expects a center tile")
    dx = center.tile_w - grid.overlap_px_x
    dy = center.tile_h - grid.overlap_px_y
    candidates = (
        ("L", center.x - dx, center.y),
        ("U", center.x, center.y - dy),
        ("R", center.x + dx, center.y),
        ("D", center.x, center.y + dy),
    )
    out = []
    for variant, x, y in candidates:
        if _intersects_roi(grid.roi, x, y, center.tile_w, center.tile_h):
            out.append(TileRef(set_index=center.set_index, variant=variant, x=x, y=y,
                               tile_w=center.tile_w, tile_h=center.tile_h))
    return out


def set_refs(grid: TileGrid, set_index: int) -> list[TileRef]:
    """Center plus surviving neighbors, in canonical C,L,U,R,D order."""
    center = center_ref(grid, set_index)
    return [center] + neighbors_for(center, grid)


def read_tile(slide: SlideImage, ref: TileRef) -> np.ndarray:
    return read_region(slide, RegionSpec(level=0, x=ref.x, y=ref.y,
                                         width=ref.tile_w, height=ref.tile_h))


def extract_sets(slide: SlideImage, grid: TileGrid, workers: int = 1) -> Iterator[TileSet]:
    """Stream all tile sets in ascending set_index order.

    Extraction fans out over a thread pool with a bounded number of in-flight
    sets; emission order is independent of the worker count.
    """

    def build(set_index: int) -> TileSet:
        refs = set_refs(grid, set_index)
        return TileSet(set_index=set_index,
                       members=[(ref, read_tile(slide, ref)) for ref in refs])

    n = grid.n_sets
    if workers <= 1:
        for i in range(1, n + 1):
            yield build(i)
        return

    window = max(2 * workers, 4)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {}
        next_submit = 1
        next_emit = 1
        while next_emit <= n:
            while next_submit <= n and len(pending) < window:
                pending[next_submit] = pool.submit(build, next_submit)
                next_submit += 1
            yield pending.pop(next_emit).result()
            next_emit += 1
