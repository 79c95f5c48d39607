"""Run outputs: WSI-level mosaic, manifests, statistics, and tissue gain.

The gain compares the pipeline's chosen tiles against a standard center-grid
tiling. Both are scored as the fraction of the ROI's qualified-tissue pixels
captured by their tiles, where "the ROI's qualified tissue" is read off the
mosaic of all raw center-tile masks (center tiles partition the ROI).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import OutputError, ZeroDenominator
from .selector import Selection
from .tiling import TileGrid, TileRef, center_ref, set_refs

PALETTE = {0: (0, 0, 0), 1: (0, 170, 0), 2: (220, 0, 0), 3: (255, 140, 0)}

MaskTable = dict[tuple[int, str], np.ndarray]


@dataclass
class TileRecord:
    set_index: int
    chosen: str | None
    origin: tuple[int, int] | None
    fractions: dict[str, float] | None
    cost: float
    member_costs: dict[str, float]
    pen_class: dict[str, str]
    cleaned: dict[str, bool]

    def to_json(self) -> str:
        payload = {
            "set_index": self.set_index,
            "chosen": self.chosen,
            "origin": list(self.origin) if self.origin is not None else None,
            "fractions": self.fractions,
            "cost": self.cost,
            "member_costs": self.member_costs,
            "pen_class": self.pen_class,
            "cleaned": self.cleaned,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> "TileRecord":
        raw = json.loads(line)
        return TileRecord(
            set_index=raw["set_index"],
            chosen=raw["chosen"],
            origin=tuple(raw["origin"]) if raw["origin"] is not None else None,
            fractions=raw["fractions"],
            cost=raw["cost"],
            member_costs=raw["member_costs"],
            pen_class=raw["pen_class"],
            cleaned=raw["cleaned"],
        )


@dataclass
class RunStats:
    n_total: int
    n_discarded_pen: int
    n_rejected_cost: int
    n_selected: int
    baseline_retained: int
    label_pixels: dict[int, int]
    qt_percent_proposed: float | None
    qt_percent_standard: float | None
    qt_gain_percent: float | None
    qt_gain_reason: str | None
    chosen_overlap_px: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "n_total": self.n_total,
            "n_discarded_pen": self.n_discarded_pen,
            "n_rejected_cost": self.n_rejected_cost,
            "n_selected": self.n_selected,
            "baseline_retained": self.baseline_retained,
            "label_pixels": {str(k): v for k, v in sorted(self.label_pixels.items())},
            "qt_percent_proposed": self.qt_percent_proposed,
            "qt_percent_standard": self.qt_percent_standard,
            "qt_gain_percent": self.qt_gain_percent,
            "qt_gain_reason": self.qt_gain_reason,
            "chosen_overlap_px": self.chosen_overlap_px,
            "warnings": self.warnings,
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _paint(canvas: np.ndarray, grid: TileGrid, ref: TileRef, mask: np.ndarray) -> None:
    roi = grid.roi
    x0 = max(ref.x, roi.x0)
    y0 = max(ref.y, roi.y0)
    x1 = min(ref.x + ref.tile_w, roi.x1)
    y1 = min(ref.y + ref.tile_h, roi.y1)
    if x1 <= x0 or y1 <= y0:
        return
    canvas[y0 - roi.y0 : y1 - roi.y0, x0 - roi.x0 : x1 - roi.x0] = \
        mask[y0 - ref.y : y1 - ref.y, x0 - ref.x : x1 - ref.x]


def _ref_for(grid: TileGrid, set_index: int, variant: str) -> TileRef:
    if variant in ("C", "B"):
        ref = center_ref(grid, set_index)
        return TileRef(set_index, variant, ref.x, ref.y, ref.tile_w, ref.tile_h)
    for ref in set_refs(grid, set_index):
        if ref.variant == variant:
            return ref
    raise KeyError(f"set {set_index} has no {variant} member")


def compose_wsi_mask(
    selections: list[Selection],
    masks: MaskTable,
    grid: TileGrid,
    downsample: int = 1,
) -> np.ndarray:
    """ROI-sized label mosaic of the chosen tiles, painted in ascending
    set_index order (later tiles win in overlap zones)."""
    canvas = np.zeros((grid.roi.height, grid.roi.width), dtype=np.uint8)
    for sel in sorted(selections, key=lambda s: s.set_index):
        if sel.chosen is None:
            continue
        ref = _ref_for(grid, sel.set_index, sel.chosen)
        _paint(canvas, grid, ref, masks[(sel.set_index, sel.chosen)])
    if downsample > 1:
        canvas = canvas[::downsample, ::downsample]
    return canvas


def render_mask(mask: np.ndarray) -> np.ndarray:
    """Label mask to RGB: black background, green tissue, red fold, orange blur."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    for label, color in PALETTE.items():
        lut[label] = color
    return lut[mask]


def labels_from_render(rgb: np.ndarray) -> np.ndarray:
    """Inverse of render_mask (the palette is injective)."""
    out = np.full(rgb.shape[:2], 255, dtype=np.uint8)
    for label, color in PALETTE.items():
        out[np.all(rgb == np.array(color, dtype=np.uint8), axis=-1)] = label
    if (out == 255).any():
        raise ValueError("raster contains colors outside the mask palette")
    return out


def standard_baseline(
    grid: TileGrid,
    center_fractions: dict[int, "object"],
    t_bg: float = 0.5,
    t_art: float = 0.1,
) -> list[int]:
    """Set indices whose center tile a standard tiling would keep: background
    below t_bg and total artifact fraction below t_art. No neighbor shifting."""
    retained = []
    for set_index in range(1, grid.n_sets + 1):
        f = center_fractions[set_index]
        if f.p_bg < t_bg and (f.p_fo + f.p_bl) < t_art:
            retained.append(set_index)
    return retained


def _qualified_pixels(grid: TileGrid, placements: list[tuple[TileRef, np.ndarray]]) -> int:
    canvas = np.zeros((grid.roi.height, grid.roi.width), dtype=np.uint8)
    for ref, mask in sorted(placements, key=lambda p: p[0].set_index):
        _paint(canvas, grid, ref, mask)
    return int((canvas == 1).sum())


def qt_gain(
    selections: list[Selection],
    baseline_retained: list[int],
    masks: MaskTable,
    grid: TileGrid,
) -> tuple[float | None, float, float, str | None]:
    """Relative qualified-tissue gain of the selections over the baseline.

    Returns (gain_percent, qt_fraction_proposed, qt_fraction_standard,
    undefined_reason). Gain is None when undefined: raises ZeroDenominator
    when the ROI holds no qualified tissue at all, and flags a zero-capture
    baseline as 'baseline_zero' (relative gain is meaningless there).
    """
    all_centers = [(_ref_for(grid, n, "B"), masks[(n, "B")])
                   for n in range(1, grid.n_sets + 1)]
    total_qt = _qualified_pixels(grid, all_centers)
    if total_qt == 0:
        raise ZeroDenominator("no qualified tissue anywhere in the ROI")

    proposed_mosaic = compose_wsi_mask(selections, masks, grid)
    qt_prop = int((proposed_mosaic == 1).sum()) / total_qt

    retained = [(_ref_for(grid, n, "B"), masks[(n, "B")]) for n in baseline_retained]
    qt_std = _qualified_pixels(grid, retained) / total_qt

    if qt_std == 0.0:
        return None, qt_prop, qt_std, "baseline_zero"
    gain = (qt_prop - qt_std) / qt_std * 100.0
    return gain, qt_prop, qt_std, None


def chosen_overlap_px(selections: list[Selection], grid: TileGrid) -> int:
    """Total double-covered area (in ROI pixels) among chosen tiles."""
    counter = np.zeros((grid.roi.height, grid.roi.width), dtype=np.uint16)
    roi = grid.roi
    for sel in selections:
        if sel.chosen is None:
            continue
        ref = _ref_for(grid, sel.set_index, sel.chosen)
        x0 = max(ref.x, roi.x0)
        y0 = max(ref.y, roi.y0)
        x1 = min(ref.x + ref.tile_w, roi.x1)
        y1 = min(ref.y + ref.tile_h, roi.y1)
        if x1 > x0 and y1 > y0:
            counter[y0 - roi.y0 : y1 - roi.y0, x0 - roi.x0 : x1 - roi.x0] += 1
    covered = counter > 0
    return int(counter[covered].sum() - covered.sum())


def save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path)


def write_outputs(
    records: list[TileRecord],
    stats: RunStats,
    mosaic: np.ndarray,
    out_dir: Path,
    tiles: "list[tuple[str, np.ndarray]] | None" = None,
) -> None:
    """Write manifest.jsonl, stats.json, mosaic.png and label_counts.csv
    (plus optional chosen-tile rasters). Any I/O failure leaves an
    _INCOMPLETE marker behind and aborts."""
    out_dir = Path(out_dir)
    marker = out_dir / "_INCOMPLETE"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker.touch()
        with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as f:
            for record in sorted(records, key=lambda r: r.set_index):
                f.write(record.to_json() + "\n")
        with open(out_dir / "stats.json", "w", encoding="utf-8") as f:
            f.write(stats.to_json() + "\n")
        save_png(out_dir / "mosaic.png", render_mask(mosaic))
        with open(out_dir / "label_counts.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["label", "pixels"])
            for label in range(4):
                writer.writerow([label, stats.label_pixels.get(label, 0)])
        if tiles:
            tile_dir = out_dir / "tiles"
            tile_dir.mkdir(exist_ok=True)
            for name, raster in tiles:
                save_png(tile_dir / f"{name}.png", raster)
    except OSError as exc:
        raise OutputError(f"failed writing outputs to {out_dir}: {exc}") from exc
    marker.unlink(missing_ok=True)
