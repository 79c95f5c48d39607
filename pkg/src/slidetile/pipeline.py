"""Pipeline orchestration: thumbnail -> tissue mask -> ROI -> tile sets ->
pen triage/clean -> segmentation -> selection -> report.

The staged CLI commands and the single-shot ``run_pipeline`` call the same
stage functions; the staged path round-trips rasters and masks through PNG
files (lossless), so both produce byte-identical manifests. Worker counts
only change scheduling, never output bytes.

The standard-tiling baseline is scored on *raw* center tiles (what a plain
grid tiler would see, before any pen cleaning). When the cleaned center is
byte-identical to the raw one its mask is reused; otherwise the raw center
travels as pseudo-variant "B" with its own raster and mask.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import PipelineConfig
from .errors import ZeroDenominator
from .penmark import TriageResult, triage_set
from .report import (RunStats, TileRecord, chosen_overlap_px, compose_wsi_mask,
                     qt_gain, save_png, standard_baseline, write_outputs)
from .runio import write_meta
from .segmenter import Segmenter
from .selector import ArtifactFractions, Selection, fractions, select_tile
from .slide_io import SlideImage, open_slide, thumbnail
from .tiling import (TileGrid, TileRef, TileSet, VARIANT_INDEX, center_ref,
                     plan_grid, read_tile, set_refs)
from .tissue import compute_tissue_mask, roi_from_mask
from .wire import SidecarPool

SETS_NAME = "sets.jsonl"
SELECTIONS_NAME = "selections.jsonl"


@dataclass
class SetPlan:
    """Stage-agnostic outcome of pen triage for one set."""

    set_index: int
    discarded: bool
    pen_class: dict[str, str]
    cleaned: dict[str, bool]
    members: list[str]
    baseline_source: str  # "C" reuses the center member's mask, "B" has its own
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "set_index": self.set_index,
            "discarded": self.discarded,
            "pen_class": self.pen_class,
            "cleaned": self.cleaned,
            "members": self.members,
            "baseline_source": self.baseline_source,
            "warnings": self.warnings,
        }, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> "SetPlan":
        raw = json.loads(line)
        return SetPlan(**raw)


def _parallel_ordered(count: int, fn, workers: int) -> list:
    """Run fn(i) for i in 0..count-1 with bounded fan-out; results in order."""
    if workers <= 1:
        return [fn(i) for i in range(count)]
    out = [None] * count
    window = max(2 * workers, 4)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {}
        next_submit = 0
        next_take = 0
        while next_take < count:
            while next_submit < count and len(pending) < window:
                pending[next_submit] = pool.submit(fn, next_submit)
                next_submit += 1
            out[next_take] = pending.pop(next_take).result()
            next_take += 1
    return out


def tile_id_for(grid: TileGrid, set_index: int, variant: str) -> str:
    return f"tile_{set_index:06d}_{variant}"


def ref_for(grid: TileGrid, set_index: int, variant: str) -> TileRef:
    if variant == "B":
        c = center_ref(grid, set_index)
        return TileRef(set_index, "B", c.x, c.y, c.tile_w, c.tile_h)
    for ref in set_refs(grid, set_index):
        if ref.variant == variant:
            return ref
    raise KeyError(f"set {set_index} has no member {variant}")


def make_sidecar_pool(cfg: PipelineConfig) -> SidecarPool | None:
    needs = cfg.segmentation.kind == "sidecar" or cfg.pen.cleaning_backend == "sidecar"
    if not needs:
        return None
    if not cfg.segmentation.sidecar_cmd:
        return None
    return SidecarPool(cfg.segmentation.sidecar_cmd, cfg.segmentation.sidecar_procs,
                       cfg.segmentation.sidecar_timeout)


def plan_slide(slide: SlideImage, cfg: PipelineConfig) -> TileGrid:
    """Thumbnail, tissue mask, ROI, and grid planning."""
    thumb = thumbnail(slide, cfg.thumb_w, cfg.thumb_h)
    mask = compute_tissue_mask(thumb, dilate_iters=cfg.dilate_iters)
    roi = roi_from_mask(mask, slide)
    return plan_grid(roi, cfg.tile_w, cfg.tile_h, cfg.overlap)


def triage_stage(
    slide: SlideImage,
    grid: TileGrid,
    cfg: PipelineConfig,
    pool: SidecarPool | None = None,
) -> tuple[list[SetPlan], dict[str, np.ndarray]]:
    """Read every tile set, classify pen marking, clean survivors.

    Returns the per-set plans plus the rasters downstream stages need:
    cleaned survivor tiles and raw baseline centers (variant "B") where the
    cleaned center cannot stand in for the raw one.
    """
    sidecar = pool.clean if pool is not None else None

    def job(i: int) -> tuple[SetPlan, dict[str, np.ndarray]]:
        set_index = i + 1
        refs = set_refs(grid, set_index)
        tile_set = TileSet(set_index=set_index,
                           members=[(ref, read_tile(slide, ref)) for ref in refs])
        result: TriageResult = triage_set(
            tile_set, cfg.pen.thresholds, cfg.pen.rules,
            cfg.pen.cleaning_backend, sidecar,
        )
        raw_center = tile_set.members[0][1]
        rasters: dict[str, np.ndarray] = {}
        members: list[str] = []
        cleaned_flags: dict[str, bool] = {}
        for ref, raster, changed in result.survivors:
            rasters[ref.tile_id] = raster
            members.append(ref.variant)
            cleaned_flags[ref.variant] = changed
        if "C" in members and not cleaned_flags["C"]:
            baseline_source = "C"
        else:
            baseline_source = "B"
            rasters[tile_id_for(grid, set_index, "B")] = raw_center
        plan = SetPlan(
            set_index=set_index,
            discarded=result.discarded,
            pen_class={v: c.value for v, c in result.classes.items()},
            cleaned=cleaned_flags,
            members=members,
            baseline_source=baseline_source,
            warnings=result.warnings,
        )
        return plan, rasters

    results = _parallel_ordered(grid.n_sets, job, cfg.workers)
    plans = [plan for plan, _ in results]
    rasters: dict[str, np.ndarray] = {}
    for _, chunk in results:
        rasters.update(chunk)
    return plans, rasters


def _plan_tile_ids(grid: TileGrid, plan: SetPlan) -> list[str]:
    ids = [tile_id_for(grid, plan.set_index, v) for v in plan.members]
    if plan.baseline_source == "B":
        ids.append(tile_id_for(grid, plan.set_index, "B"))
    return ids


def segment_stage(
    plans: list[SetPlan],
    rasters,
    grid: TileGrid,
    cfg: PipelineConfig,
    pool: SidecarPool | None = None,
) -> dict[str, np.ndarray]:
    """Segment every surviving member plus the raw baseline centers."""
    tasks: list[tuple[str, int]] = []
    for plan in plans:
        for tid in _plan_tile_ids(grid, plan):
            variant = tid.rsplit("_", 1)[1]
            wire_id = plan.set_index * 8 + VARIANT_INDEX[variant]
            tasks.append((tid, wire_id))

    seg = Segmenter(cfg.segmentation, pool=pool)
    try:
        def job(i: int) -> np.ndarray:
            tid, wire_id = tasks[i]
            return seg.segment(rasters[tid], tid, wire_id)

        masks_list = _parallel_ordered(len(tasks), job, cfg.workers)
    finally:
        seg.close()
    return {tid: mask for (tid, _), mask in zip(tasks, masks_list)}


def select_stage(
    plans: list[SetPlan],
    masks,
    grid: TileGrid,
    cfg: PipelineConfig,
) -> list[Selection]:
    selections = []
    for plan in plans:
        if plan.discarded:
            continue
        members = [
            (v, fractions(masks[tile_id_for(grid, plan.set_index, v)]))
            for v in plan.members
        ]
        selections.append(select_tile(members, cfg.weights, cfg.c_max,
                                      set_index=plan.set_index))
    return selections


def build_records(plans: list[SetPlan], selections: list[Selection],
                  grid: TileGrid) -> list[TileRecord]:
    by_index = {sel.set_index: sel for sel in selections}
    records = []
    for plan in plans:
        if plan.discarded:
            continue
        sel = by_index[plan.set_index]
        if sel.chosen is not None:
            ref = ref_for(grid, plan.set_index, sel.chosen)
            origin = (ref.x, ref.y)
            frac = {
                "p_fo": sel.fractions.p_fo, "p_bl": sel.fractions.p_bl,
                "p_bg": sel.fractions.p_bg, "p_qt": sel.fractions.p_qt,
            }
        else:
            origin = None
            frac = None
        records.append(TileRecord(
            set_index=plan.set_index,
            chosen=sel.chosen,
            origin=origin,
            fractions=frac,
            cost=sel.cost,
            member_costs=sel.member_costs,
            pen_class=plan.pen_class,
            cleaned=plan.cleaned,
        ))
    return records


def _mask_table(plans: list[SetPlan], selections: list[Selection], masks,
                grid: TileGrid) -> dict[tuple[int, str], np.ndarray]:
    """Masks keyed (set_index, variant) for mosaic composition and gain:
    each chosen member plus a "B" baseline entry for every set."""
    table: dict[tuple[int, str], np.ndarray] = {}
    by_index = {sel.set_index: sel for sel in selections}
    for plan in plans:
        n = plan.set_index
        sel = by_index.get(n)
        if sel is not None and sel.chosen is not None:
            table[(n, sel.chosen)] = masks[tile_id_for(grid, n, sel.chosen)]
        if plan.baseline_source == "C":
            table[(n, "B")] = masks[tile_id_for(grid, n, "C")]
        else:
            table[(n, "B")] = masks[tile_id_for(grid, n, "B")]
    return table


def report_stage(
    plans: list[SetPlan],
    selections: list[Selection],
    masks,
    grid: TileGrid,
    cfg: PipelineConfig,
    out_dir: Path,
    slide_path: Path,
    rasters=None,
) -> RunStats:
    records = build_records(plans, selections, grid)
    table = _mask_table(plans, selections, masks, grid)

    baseline_fracs = {n: fractions(table[(n, "B")]) for n in range(1, grid.n_sets + 1)}
    retained = standard_baseline(grid, baseline_fracs,
                                 cfg.baseline.t_bg, cfg.baseline.t_art)
    try:
        gain, qt_prop, qt_std, reason = qt_gain(selections, retained, table, grid)
    except ZeroDenominator:
        gain, qt_prop, qt_std, reason = None, None, None, "no_qualified_tissue"

    mosaic = compose_wsi_mask(selections, table, grid,
                              downsample=cfg.mosaic_downsample)
    label_pixels = {
        label: int(count)
        for label, count in enumerate(np.bincount(mosaic.ravel(), minlength=4))
    }
    warnings = [w for plan in plans for w in plan.warnings]
    stats = RunStats(
        n_total=grid.n_sets,
        n_discarded_pen=sum(1 for p in plans if p.discarded),
        n_rejected_cost=sum(1 for s in selections if s.chosen is None),
        n_selected=sum(1 for s in selections if s.chosen is not None),
        baseline_retained=len(retained),
        label_pixels=label_pixels,
        qt_percent_proposed=qt_prop,
        qt_percent_standard=qt_std,
        qt_gain_percent=gain,
        qt_gain_reason=reason,
        chosen_overlap_px=chosen_overlap_px(selections, grid),
        warnings=warnings,
    )

    tiles = None
    if cfg.save_tiles and rasters is not None:
        tiles = []
        for sel in selections:
            if sel.chosen is None:
                continue
            tid = tile_id_for(grid, sel.set_index, sel.chosen)
            tiles.append((tid, rasters[tid]))

    write_outputs(records, stats, mosaic, out_dir, tiles=tiles)
    write_meta(out_dir, slide_path, cfg.to_dict(), grid)
    return stats


def run_pipeline(slide_path: Path, cfg: PipelineConfig, out_dir: Path) -> RunStats:
    """Single-shot pipeline execution; equivalent to the staged CLI chain."""
    slide = open_slide(slide_path)
    grid = plan_slide(slide, cfg)
    pool = make_sidecar_pool(cfg)
    try:
        plans, rasters = triage_stage(slide, grid, cfg, pool)
        masks = segment_stage(plans, rasters, grid, cfg, pool)
    finally:
        if pool is not None:
            pool.close()
    selections = select_stage(plans, masks, grid, cfg)
    return report_stage(plans, selections, masks, grid, cfg, out_dir,
                        slide_path, rasters=rasters)


# --- staged-mode persistence -------------------------------------------------

def write_plans(path: Path, plans: list[SetPlan]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for plan in plans:
            f.write(plan.to_json() + "\n")


def load_plans(path: Path) -> list[SetPlan]:
    plans = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                plans.append(SetPlan.from_json(line))
    return plans


def write_selections(path: Path, selections: list[Selection]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sel in selections:
            frac = None
            if sel.fractions is not None:
                frac = {"p_fo": sel.fractions.p_fo, "p_bl": sel.fractions.p_bl,
                        "p_bg": sel.fractions.p_bg, "p_qt": sel.fractions.p_qt}
            f.write(json.dumps({
                "set_index": sel.set_index,
                "chosen": sel.chosen,
                "cost": sel.cost,
                "member_costs": sel.member_costs,
                "fractions": frac,
            }, sort_keys=True, separators=(",", ":")) + "\n")


def load_selections(path: Path) -> list[Selection]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            frac = raw["fractions"]
            out.append(Selection(
                set_index=raw["set_index"],
                chosen=raw["chosen"],
                cost=raw["cost"],
                fractions=ArtifactFractions(**frac) if frac is not None else None,
                member_costs=raw["member_costs"],
            ))
    return out


class DirRasterStore:
    """Lazy PNG-backed raster/mask lookup keyed by tile_id."""

    def __init__(self, directory: Path, mode: str = "RGB") -> None:
        self.directory = Path(directory)
        self.mode = mode

    def __getitem__(self, tile_id: str) -> np.ndarray:
        path = self.directory / f"{tile_id}.png"
        with Image.open(path) as img:
            if img.mode != self.mode:
                img = img.convert(self.mode)
            return np.asarray(img, dtype=np.uint8)


def dump_rasters(directory: Path, rasters: dict[str, np.ndarray]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for tile_id, raster in sorted(rasters.items()):
        save_png(directory / f"{tile_id}.png", raster)
