"""Command-line interface.

``run`` executes the whole pipeline; ``tile``/``segment``/``select``/``report``
run it stage by stage over an interchange work directory (tiles as PNGs plus
sets.jsonl; masks as a maskdir). ``synth`` renders test slides, ``eval``
scores prediction CSVs, and ``review-export``/``review-score`` drive the
expert-agreement harness.

Exit codes: 0 success, 2 usage/config, 3 no tissue found, 4 backend failure,
5 I/O error, 6 bad or insufficient data, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import csv
import json
import shlex
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig, config_from_dict, load_config
from .errors import MalformedCSV, SlideTileError
from .metrics import CLASSES, ConfusionMatrix3, agreement, export_review, prf
from .runio import load_meta, write_meta
from .slide_io import open_slide
from .synthgen import SynthSpec, gen_slide


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--tile-size", type=int, help="tile width and height in px")
    parser.add_argument("--overlap", type=float, help="neighbor overlap fraction")
    parser.add_argument("--thumb-size", type=int, help="thumbnail width and height")
    parser.add_argument("--dilate-iters", type=int, help="tissue mask dilation passes")
    parser.add_argument("--pen-max", type=float, help="high pen-marking threshold")
    parser.add_argument("--pen-min", type=float, help="low pen-marking threshold")
    parser.add_argument("--clean-backend", choices=("none", "fill", "sidecar"))
    parser.add_argument("--seg-backend", choices=("heuristic", "maskdir", "sidecar"))
    parser.add_argument("--maskdir", type=Path, help="mask directory for the maskdir backend")
    parser.add_argument("--sidecar-cmd", type=str, help="sidecar launch command")
    parser.add_argument("--sidecar-procs", type=int)
    parser.add_argument("--lambda-fo", type=float)
    parser.add_argument("--lambda-bl", type=float)
    parser.add_argument("--lambda-bg", type=float)
    parser.add_argument("--cmax", type=float, help="reject sets whose best cost exceeds this")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--save-tiles", action="store_true", default=None)


def _overrides_from_args(args: argparse.Namespace) -> dict:
    over: dict = {}
    pen: dict = {}
    seg: dict = {}
    weights: dict = {}
    if getattr(args, "tile_size", None) is not None:
        over["tile_w"] = args.tile_size
        over["tile_h"] = args.tile_size
    if getattr(args, "overlap", None) is not None:
        over["overlap"] = args.overlap
    if getattr(args, "thumb_size", None) is not None:
        over["thumb_w"] = args.thumb_size
        over["thumb_h"] = args.thumb_size
    if getattr(args, "dilate_iters", None) is not None:
        over["dilate_iters"] = args.dilate_iters
    if getattr(args, "pen_max", None) is not None:
        pen["p_max"] = args.pen_max
    if getattr(args, "pen_min", None) is not None:
        pen["p_min"] = args.pen_min
    if getattr(args, "clean_backend", None) is not None:
        pen["cleaning_backend"] = args.clean_backend
    if getattr(args, "seg_backend", None) is not None:
        seg["kind"] = args.seg_backend
    if getattr(args, "maskdir", None) is not None:
        seg["maskdir"] = str(args.maskdir)
    if getattr(args, "sidecar_cmd", None) is not None:
        seg["sidecar_cmd"] = shlex.split(args.sidecar_cmd)
    if getattr(args, "sidecar_procs", None) is not None:
        seg["sidecar_procs"] = args.sidecar_procs
    if getattr(args, "lambda_fo", None) is not None:
        weights["lambda_fo"] = args.lambda_fo
    if getattr(args, "lambda_bl", None) is not None:
        weights["lambda_bl"] = args.lambda_bl
    if getattr(args, "lambda_bg", None) is not None:
        weights["lambda_bg"] = args.lambda_bg
    if getattr(args, "cmax", None) is not None:
        over["c_max"] = args.cmax
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "save_tiles", None):
        over["save_tiles"] = True
    if pen:
        over["pen"] = pen
    if seg:
        over["segmentation"] = seg
    if weights:
        over["weights"] = weights
    return over


def _config_for(args: argparse.Namespace) -> PipelineConfig:
    return load_config(getattr(args, "config", None), _overrides_from_args(args))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise SlideTileError(f"missing {what}: expected {path}")
    return path


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_for(args)
    stats = pipeline.run_pipeline(args.slide, cfg, args.out)
    print(f"selected {stats.n_selected}/{stats.n_total} sets "
          f"({stats.n_discarded_pen} pen-discarded, {stats.n_rejected_cost} rejected)")
    if stats.qt_gain_percent is not None:
        print(f"qualified-tissue gain: {stats.qt_gain_percent:.4f}%")
    else:
        print(f"qualified-tissue gain undefined: {stats.qt_gain_reason}")
    print(f"outputs in {args.out}")
    return 0


def cmd_tile(args: argparse.Namespace) -> int:
    cfg = _config_for(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    slide = open_slide(args.slide)
    grid = pipeline.plan_slide(slide, cfg)
    pool = pipeline.make_sidecar_pool(cfg)
    try:
        plans, rasters = pipeline.triage_stage(slide, grid, cfg, pool)
    finally:
        if pool is not None:
            pool.close()
    pipeline.dump_rasters(out / "tiles", rasters)
    pipeline.write_plans(out / pipeline.SETS_NAME, plans)
    write_meta(out, Path(args.slide), cfg.to_dict(), grid)
    n_kept = sum(1 for p in plans if not p.discarded)
    print(f"tiled {grid.n_sets} sets ({n_kept} kept) into {out}")
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    work = Path(args.tiles)
    _require(work / "meta.json", "tile-stage metadata")
    _require(work / pipeline.SETS_NAME, "tile-stage set list")
    meta = load_meta(work)
    cfg = config_from_dict(_merge_meta_overrides(meta.config, args))
    plans = pipeline.load_plans(work / pipeline.SETS_NAME)
    rasters = pipeline.DirRasterStore(work / "tiles", mode="RGB")
    pool = pipeline.make_sidecar_pool(cfg)
    try:
        masks = pipeline.segment_stage(plans, rasters, meta.grid, cfg, pool)
    finally:
        if pool is not None:
            pool.close()
    out = Path(args.out) if args.out else work / "masks"
    pipeline.dump_rasters(out, masks)
    print(f"segmented {len(masks)} tiles into {out}")
    return 0


def _merge_meta_overrides(meta_config: dict, args: argparse.Namespace) -> dict:
    over = _overrides_from_args(args)
    merged = json.loads(json.dumps(meta_config))
    from .config import _deep_merge

    return _deep_merge(merged, over)


def cmd_select(args: argparse.Namespace) -> int:
    work = Path(args.tiles)
    _require(work / "meta.json", "tile-stage metadata")
    meta = load_meta(work)
    cfg = config_from_dict(_merge_meta_overrides(meta.config, args))
    plans = pipeline.load_plans(_require(work / pipeline.SETS_NAME, "tile-stage set list"))
    masks_dir = Path(args.masks) if args.masks else work / "masks"
    _require(masks_dir, "mask directory")
    masks = pipeline.DirRasterStore(masks_dir, mode="L")
    selections = pipeline.select_stage(plans, masks, meta.grid, cfg)
    out = Path(args.out) if args.out else work
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_selections(out / pipeline.SELECTIONS_NAME, selections)
    print(f"selected tiles for {len(selections)} sets -> {out / pipeline.SELECTIONS_NAME}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    work = Path(args.tiles)
    _require(work / "meta.json", "tile-stage metadata")
    meta = load_meta(work)
    cfg = config_from_dict(_merge_meta_overrides(meta.config, args))
    plans = pipeline.load_plans(_require(work / pipeline.SETS_NAME, "tile-stage set list"))
    masks_dir = Path(args.masks) if args.masks else work / "masks"
    _require(masks_dir, "mask directory")
    selections_path = Path(args.selections) if args.selections else work / pipeline.SELECTIONS_NAME
    _require(selections_path, "selection list")
    selections = pipeline.load_selections(selections_path)
    masks = pipeline.DirRasterStore(masks_dir, mode="L")
    rasters = pipeline.DirRasterStore(work / "tiles", mode="RGB")
    stats = pipeline.report_stage(plans, selections, masks, meta.grid, cfg,
                                  Path(args.out), meta.slide, rasters=rasters)
    print(f"report written to {args.out} "
          f"({stats.n_selected}/{stats.n_total} sets selected)")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    with open(args.spec, encoding="utf-8") as f:
        spec = SynthSpec.from_json(f.read())
    slide_path, gt_path, pen_path = gen_slide(spec, args.out)
    print(f"wrote {slide_path}, {gt_path}, {pen_path}")
    return 0


def _read_class_csv(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != ["id", "class"]:
                raise MalformedCSV(f"{path}: expected header id,class")
            for line_no, row in enumerate(reader, start=2):
                label = row["class"]
                if label not in CLASSES:
                    raise MalformedCSV(f"{path}:{line_no}: unknown class {label!r}")
                out[row["id"]] = label
    except OSError as exc:
        raise MalformedCSV(f"cannot read {path}: {exc}") from exc
    if not out:
        raise MalformedCSV(f"{path}: no rows")
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    truth = _read_class_csv(args.truth)
    pred = _read_class_csv(args.pred)
    if set(truth) != set(pred):
        raise MalformedCSV("prediction and truth CSVs cover different ids")
    pairs = [(truth[k], pred[k]) for k in sorted(truth)]
    cm = ConfusionMatrix3.from_pairs(pairs)
    metrics = prf(cm)
    print("confusion matrix (rows=truth, cols=predicted; "
          + ", ".join(CLASSES) + "):")
    for i, name in enumerate(CLASSES):
        print(f"  {name:>13}: " + " ".join(f"{int(v):6d}" for v in cm.counts[i]))
    print(f"accuracy {metrics.accuracy:.5f}")
    for name in CLASSES:
        print(f"{name}: precision {metrics.precision[name]:.5f} "
              f"recall {metrics.recall[name]:.5f} f1 {metrics.f1[name]:.5f}")
    print(f"macro: precision {metrics.macro_precision:.5f} "
          f"recall {metrics.macro_recall:.5f} f1 {metrics.macro_f1:.5f}")
    for flag in metrics.zero_division:
        print(f"note: {flag}")
    return 0


def cmd_review_export(args: argparse.Namespace) -> int:
    rows = export_review(args.runs, args.out, sets_per_wsi=args.sets_per_wsi,
                         seed=args.seed)
    print(f"exported {len(rows)} sets from {len(args.runs)} runs to {args.out}")
    return 0


def cmd_review_score(args: argparse.Namespace) -> int:
    per_wsi, overall = agreement(args.answers, args.runs)
    for wsi in sorted(per_wsi):
        print(f"{wsi}: {per_wsi[wsi]:.1f}%")
    print(f"overall: {overall:.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slidetile",
        description="Content-aware tiling of whole-slide images with artifact QC",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the whole pipeline on one slide")
    p.add_argument("slide", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("tile", help="extract, triage and clean tile sets")
    p.add_argument("slide", type=Path)
    p.add_argument("--out", type=Path, required=True, help="work directory")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_tile)

    p = sub.add_parser("segment", help="segment tiles from a tile-stage work dir")
    p.add_argument("--tiles", type=Path, required=True, help="tile-stage work dir")
    p.add_argument("--out", type=Path, help="mask output dir (default <tiles>/masks)")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("select", help="pick the best tile per set")
    p.add_argument("--tiles", type=Path, required=True)
    p.add_argument("--masks", type=Path, help="maskdir (default <tiles>/masks)")
    p.add_argument("--out", type=Path, help="output dir (default <tiles>)")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("report", help="compose mosaic, stats and manifest")
    p.add_argument("--tiles", type=Path, required=True)
    p.add_argument("--masks", type=Path)
    p.add_argument("--selections", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic slide from a JSON spec")
    p.add_argument("spec", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("eval", help="score prediction vs truth class CSVs")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("review-export", help="sample sets for expert review")
    p.add_argument("--runs", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sets-per-wsi", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_review_export)

    p = sub.add_parser("review-score", help="score an answers CSV against runs")
    p.add_argument("--answers", type=Path, required=True)
    p.add_argument("--runs", type=Path, nargs="+", required=True)
    p.set_defaults(fn=cmd_review_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SlideTileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
