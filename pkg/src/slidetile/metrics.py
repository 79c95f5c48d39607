"""Classification/segmentation metrics and the expert-review harness.

Tile-level classes follow the (artifact-free, blur, fold) order; background
is not a tile class and background-only tiles are reported separately by
callers. The review harness samples surviving sets from completed runs,
exports their member tiles for blinded expert selection, and scores the
agreement between expert picks and the pipeline's selections.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, InsufficientSets, MalformedCSV, ShapeMismatch
from .penmark import PenRules, clean_tile
from .report import save_png
from .runio import load_manifest, load_meta
from .selector import ArtifactFractions
from .slide_io import open_slide
from .tiling import read_tile, set_refs

CLASSES = ("artifact-free", "blur", "fold")
CHOICES = ("C", "L", "U", "R", "D", "None")


@dataclass
class ConfusionMatrix3:
    """3x3 counts; rows are the true class, columns the predicted class."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (3, 3):
            raise ValueError("confusion matrix must be 3x3")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be nonnegative")

    @staticmethod
    def from_pairs(pairs: "list[tuple[str, str]]") -> "ConfusionMatrix3":
        index = {name: i for i, name in enumerate(CLASSES)}
        counts = np.zeros((3, 3), dtype=np.int64)
        for truth, pred in pairs:
            if truth not in index or pred not in index:
                raise ValueError(f"unknown class in pair ({truth!r}, {pred!r})")
            counts[index[truth], index[pred]] += 1
        return ConfusionMatrix3(counts)


@dataclass
class ClassMetrics:
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    zero_division: list[str] = field(default_factory=list)


def tile_class(f: ArtifactFractions, tau: float = 0.1) -> str:
    """Dominant artifact class of a tile; fold wins exact ties."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    if max(f.p_fo, f.p_bl) >= tau:
        return "fold" if f.p_fo >= f.p_bl else "blur"
    return "artifact-free"


def prf(cm: ConfusionMatrix3) -> ClassMetrics:
    counts = cm.counts
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    precision: dict[str, float] = {}
    recall: dict[str, float] = {}
    f1: dict[str, float] = {}
    flags: list[str] = []
    for i, name in enumerate(CLASSES):
        tp = int(counts[i, i])
        col = int(counts[:, i].sum())
        row = int(counts[i, :].sum())
        if col == 0:
            precision[name] = 0.0
            flags.append(f"precision[{name}] undefined (no predictions)")
        else:
            precision[name] = tp / col
        if row == 0:
            recall[name] = 0.0
            flags.append(f"recall[{name}] undefined (no true samples)")
        else:
            recall[name] = tp / row
        denom = precision[name] + recall[name]
        if denom == 0.0:
            f1[name] = 0.0
            flags.append(f"f1[{name}] undefined")
        else:
            f1[name] = 2 * precision[name] * recall[name] / denom
    return ClassMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=sum(precision.values()) / 3,
        macro_recall=sum(recall.values()) / 3,
        macro_f1=sum(f1.values()) / 3,
        accuracy=int(np.trace(counts)) / total,
        zero_division=flags,
    )


def dice(a: np.ndarray, b: np.ndarray, label: int) -> float:
    """2|A∩B| / (|A|+|B|) over pixels equal to label; 1.0 when both empty."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    in_a = a == label
    in_b = b == label
    denom = int(in_a.sum()) + int(in_b.sum())
    if denom == 0:
        return 1.0
    return 2 * int((in_a & in_b).sum()) / denom


def export_review(
    run_dirs: list[Path],
    out_dir: Path,
    sets_per_wsi: int = 10,
    seed: int = 0,
) -> list[tuple[str, int]]:
    """Sample sets from completed runs and export their member tiles for
    blinded review, plus a blank answers CSV (`wsi,set,choice`).

    Tiles are re-extracted from the source slides; members the pipeline
    cleaned are re-cleaned the same way (sidecar-cleaned members fall back to
    the raw raster). Returns the sampled (wsi, set_index) rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    rows: list[tuple[str, int]] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        wsi = run_dir.name
        meta = load_meta(run_dir)
        records = {rec.set_index: rec for rec in load_manifest(run_dir)}
        if len(records) < sets_per_wsi:
            raise InsufficientSets(
                f"{wsi}: {len(records)} surviving sets, need {sets_per_wsi}"
            )
        sampled = sorted(rng.sample(sorted(records), sets_per_wsi))
        pen_cfg = meta.config.get("pen", {})
        rules = PenRules(
            dark_max=pen_cfg.get("dark_max", 60),
            diff_min=pen_cfg.get("diff_min", 50),
            channel_min=pen_cfg.get("channel_min", 100),
        )
        backend = pen_cfg.get("cleaning_backend", "fill")
        slide = open_slide(meta.slide)
        for set_index in sampled:
            record = records[set_index]
            set_dir = out_dir / wsi / f"set_{set_index:06d}"
            set_dir.mkdir(parents=True, exist_ok=True)
            for ref in set_refs(meta.grid, set_index):
                if record.pen_class.get(ref.variant) == "high":
                    continue
                raster = read_tile(slide, ref)
                if record.cleaned.get(ref.variant) and backend in ("none", "fill"):
                    raster = clean_tile(raster, backend, rules)
                save_png(set_dir / f"{ref.variant}.png", raster)
            rows.append((wsi, set_index))

    with open(out_dir / "answers.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["wsi", "set", "choice"])
        for wsi, set_index in rows:
            writer.writerow([wsi, set_index, ""])
    return rows


def _pipeline_choices(run_dirs: list[Path]) -> dict[str, dict[int, str]]:
    choices: dict[str, dict[int, str]] = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        per_set = {}
        for rec in load_manifest(run_dir):
            per_set[rec.set_index] = rec.chosen if rec.chosen is not None else "None"
        choices[run_dir.name] = per_set
    return choices


def agreement(answers_csv: Path, run_dirs: list[Path]) -> tuple[dict[str, float], float]:
    """Per-WSI and overall fraction of sets where the expert's choice equals
    the pipeline's selection ("None" matches a rejected set)."""
    choices = _pipeline_choices(run_dirs)
    per_wsi_hits: dict[str, list[bool]] = {}
    try:
        with open(answers_csv, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != ["wsi", "set", "choice"]:
                raise MalformedCSV(
                    f"expected header wsi,set,choice, got {reader.fieldnames}"
                )
            for line_no, row in enumerate(reader, start=2):
                wsi = row["wsi"]
                if wsi not in choices:
                    raise MalformedCSV(f"line {line_no}: unknown wsi {wsi!r}")
                try:
                    set_index = int(row["set"])
                except (TypeError, ValueError):
                    raise MalformedCSV(f"line {line_no}: bad set {row['set']!r}")
                if set_index not in choices[wsi]:
                    raise MalformedCSV(f"line {line_no}: unknown set {set_index}")
                choice = (row["choice"] or "").strip()
                if choice not in CHOICES:
                    raise MalformedCSV(f"line {line_no}: bad choice {row['choice']!r}")
                per_wsi_hits.setdefault(wsi, []).append(
                    choice == choices[wsi][set_index]
                )
    except OSError as exc:
        raise MalformedCSV(f"cannot read {answers_csv}: {exc}") from exc
    if not per_wsi_hits:
        raise MalformedCSV(f"{answers_csv} contains no answer rows")
    per_wsi = {wsi: 100.0 * sum(hits) / len(hits) for wsi, hits in per_wsi_hits.items()}
    all_hits = [h for hits in per_wsi_hits.values() for h in hits]
    return per_wsi, 100.0 * sum(all_hits) / len(all_hits)
