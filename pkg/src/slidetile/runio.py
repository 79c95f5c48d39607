"""Reading and writing run-directory metadata shared by pipeline stages."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .report import TileRecord
from .tiling import TileGrid
from .tissue import TissueROI

META_NAME = "meta.json"
MANIFEST_NAME = "manifest.jsonl"


@dataclass
class RunMeta:
    slide: Path
    config: dict
    roi: TissueROI
    grid: TileGrid


def write_meta(out_dir: Path, slide: Path, config: dict, grid: TileGrid) -> None:
    payload = {
        "slide": str(Path(slide).resolve()),
        "config": config,
        "roi": {
            "x0": grid.roi.x0, "y0": grid.roi.y0,
            "x1": grid.roi.x1, "y1": grid.roi.y1,
            "scale_x": grid.roi.scale_x, "scale_y": grid.roi.scale_y,
        },
        "grid": {
            "tile_w": grid.tile_w, "tile_h": grid.tile_h,
            "overlap": grid.overlap,
            "n_cols": grid.n_cols, "n_rows": grid.n_rows,
        },
    }
    with open(Path(out_dir) / META_NAME, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def load_meta(run_dir: Path) -> RunMeta:
    path = Path(run_dir) / META_NAME
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    roi = TissueROI(
        x0=raw["roi"]["x0"], y0=raw["roi"]["y0"],
        x1=raw["roi"]["x1"], y1=raw["roi"]["y1"],
        scale_x=raw["roi"]["scale_x"], scale_y=raw["roi"]["scale_y"],
    )
    grid = TileGrid(
        roi=roi,
        tile_w=raw["grid"]["tile_w"], tile_h=raw["grid"]["tile_h"],
        overlap=raw["grid"]["overlap"],
        n_cols=raw["grid"]["n_cols"], n_rows=raw["grid"]["n_rows"],
    )
    return RunMeta(slide=Path(raw["slide"]), config=raw["config"], roi=roi, grid=grid)


def load_manifest(run_dir: Path) -> list[TileRecord]:
    path = Path(run_dir) / MANIFEST_NAME
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(TileRecord.from_json(line))
    return records
