"""Deterministic synthetic slide generation with exact ground truth.

Slides are white canvases with noise-textured tissue blobs in an H&E-like
gamut, dark saturated fold bands (clipped to tissue, since folds are folded
tissue), Gaussian-blurred patches, and saturated pen strokes drawn last. Ground-truth labels follow the draw priority (pen strokes
do not alter labels; they get their own 0/255 mask). Output is bit-identical
for a given spec, which makes these slides the pipeline's end-to-end oracle.

Geometry may be given explicitly or drawn from the seeded generator; the RNG
draw order is fixed by the spec content, never by the clock.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SpecOutOfBounds
from .report import save_png

PEN_COLORS = {
    "red": (200, 30, 30),
    "green": (30, 170, 30),
    "blue": (30, 30, 200),
    "black": (25, 25, 25),
}

# tissue gamut keeps lightness in (0.45, 0.88) so the heuristic rules
# classify it as tissue for any jitter up to +-12
TISSUE_R = (180, 240)
TISSUE_G = (120, 190)
TISSUE_B = (180, 230)

# fold gamut keeps saturation > 0.55 and lightness < 0.45 under +-5 jitter
FOLD_R = (60, 85)
FOLD_G = (8, 22)
FOLD_B = (115, 145)
FOLD_JITTER = 5


@dataclass
class BlobSpec:
    cx: float
    cy: float
    rx: float
    ry: float
    rect: bool = False  # axis-aligned rectangle instead of an ellipse


@dataclass
class FoldSpec:
    width: float
    angle: float = 0.0  # degrees, direction of the band axis
    offset: float | None = None  # signed normal distance from canvas center


@dataclass
class BlurSpec:
    radius: float
    sigma: float = 6.0
    cx: float | None = None
    cy: float | None = None


@dataclass
class PenStrokeSpec:
    color: str
    width: float
    points: list[tuple[float, float]]


@dataclass
class SynthSpec:
    width: int
    height: int
    seed: int
    background: int = 255
    blob_count: int = 0
    blob_size_range: tuple[float, float] = (60.0, 140.0)
    jitter: int = 12
    blobs: list[BlobSpec] = field(default_factory=list)
    folds: list[FoldSpec] = field(default_factory=list)
    blurs: list[BlurSpec] = field(default_factory=list)
    pens: list[PenStrokeSpec] = field(default_factory=list)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SpecOutOfBounds("canvas dimensions must be positive")
        for blob in self.blobs:
            if not (0 <= blob.cx < self.width and 0 <= blob.cy < self.height):
                raise SpecOutOfBounds(f"blob center ({blob.cx},{blob.cy}) outside canvas")
        half_diag = math.hypot(self.width, self.height) / 2
        for fold_spec in self.folds:
            if fold_spec.offset is not None and abs(fold_spec.offset) > half_diag:
                raise SpecOutOfBounds(f"fold offset {fold_spec.offset} outside canvas")
        for blur in self.blurs:
            if blur.cx is not None and not (
                0 <= blur.cx < self.width and 0 <= blur.cy < self.height
            ):
                raise SpecOutOfBounds(f"blur center ({blur.cx},{blur.cy}) outside canvas")
        for pen in self.pens:
            if pen.color not in PEN_COLORS:
                raise SpecOutOfBounds(f"unknown pen color {pen.color!r}")
            if len(pen.points) < 2:
                raise SpecOutOfBounds("pen stroke needs at least two points")
            for x, y in pen.points:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise SpecOutOfBounds(f"pen point ({x},{y}) outside canvas")

    def to_json(self) -> str:
        payload = {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "background": self.background,
            "blob_count": self.blob_count,
            "blob_size_range": list(self.blob_size_range),
            "jitter": self.jitter,
            "blobs": [vars(b) for b in self.blobs],
            "folds": [vars(f) for f in self.folds],
            "blurs": [vars(b) for b in self.blurs],
            "pens": [
                {"color": p.color, "width": p.width,
                 "points": [list(pt) for pt in p.points]}
                for p in self.pens
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "SynthSpec":
        raw = json.loads(text)
        spec = SynthSpec(
            width=raw["width"],
            height=raw["height"],
            seed=raw["seed"],
            background=raw.get("background", 255),
            blob_count=raw.get("blob_count", 0),
            blob_size_range=tuple(raw.get("blob_size_range", (60.0, 140.0))),
            jitter=raw.get("jitter", 12),
            blobs=[BlobSpec(**b) for b in raw.get("blobs", [])],
            folds=[FoldSpec(**f) for f in raw.get("folds", [])],
            blurs=[BlurSpec(**b) for b in raw.get("blurs", [])],
            pens=[
                PenStrokeSpec(color=p["color"], width=p["width"],
                              points=[tuple(pt) for pt in p["points"]])
                for p in raw.get("pens", [])
            ],
        )
        spec.validate()
        return spec


def _coord_grids(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def _blob_mask(xs, ys, blob: BlobSpec) -> np.ndarray:
    if blob.rect:
        return (np.abs(xs - blob.cx) < blob.rx) & (np.abs(ys - blob.cy) < blob.ry)
    return ((xs - blob.cx) / blob.rx) ** 2 + ((ys - blob.cy) / blob.ry) ** 2 <= 1.0


def band_mask(width: int, height: int, fold_spec: FoldSpec, offset: float) -> np.ndarray:
    """Pixels within width/2 of the band's center line."""
    xs, ys = _coord_grids(width, height)
    a = math.radians(fold_spec.angle)
    nx, ny = -math.sin(a), math.cos(a)
    d = (xs - width / 2) * nx + (ys - height / 2) * ny - offset
    return np.abs(d) <= fold_spec.width / 2


def _stroke_mask(width: int, height: int, pen: PenStrokeSpec) -> np.ndarray:
    xs, ys = _coord_grids(width, height)
    mask = np.zeros((height, width), dtype=bool)
    half = pen.width / 2
    pts = pen.points
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0:
            dist2 = (xs - x0) ** 2 + (ys - y0) ** 2
        else:
            t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_len2, 0.0, 1.0)
            dist2 = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
        mask |= dist2 <= half * half
    return mask


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render (rgb, gt_labels, pen_mask) arrays for a spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    rgb = np.full((h, w, 3), spec.background, dtype=np.uint8)
    gt = np.zeros((h, w), dtype=np.uint8)
    xs, ys = _coord_grids(w, h)

    blobs = []
    for _ in range(spec.blob_count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        r = rng.uniform(*spec.blob_size_range)
        aspect = rng.uniform(0.6, 1.4)
        blobs.append(BlobSpec(cx=cx, cy=cy, rx=r, ry=r * aspect))
    blobs.extend(spec.blobs)

    for blob in blobs:
        region = _blob_mask(xs, ys, blob)
        base = (rng.integers(*TISSUE_R), rng.integers(*TISSUE_G), rng.integers(*TISSUE_B))
        rgb[region] = base
        gt[region] = 1

    tissue = gt == 1
    if tissue.any() and spec.jitter > 0:
        noise = rng.integers(-spec.jitter, spec.jitter + 1, size=(h, w, 3))
        jittered = np.clip(rgb.astype(np.int32) + noise, 0, 255).astype(np.uint8)
        rgb[tissue] = jittered[tissue]

    max_off = min(w, h) / 3
    for fold_spec in spec.folds:
        offset = fold_spec.offset
        if offset is None:
            offset = rng.uniform(-max_off, max_off)
        region = band_mask(w, h, fold_spec, offset) & (gt == 1)
        base = (rng.integers(*FOLD_R), rng.integers(*FOLD_G), rng.integers(*FOLD_B))
        fold_noise = rng.integers(-FOLD_JITTER, FOLD_JITTER + 1, size=(h, w, 3))
        colored = np.clip(np.array(base, dtype=np.int32) + fold_noise, 0, 255)
        rgb[region] = colored[region].astype(np.uint8)
        gt[region] = 2

    for blur in spec.blurs:
        cx = blur.cx if blur.cx is not None else rng.uniform(0, w)
        cy = blur.cy if blur.cy is not None else rng.uniform(0, h)
        region = (xs - cx) ** 2 + (ys - cy) ** 2 <= blur.radius**2
        target = region & (gt == 1)
        if not target.any():
            continue
        smoothed = np.empty_like(rgb)
        for c in range(3):
            blurred = ndimage.gaussian_filter(
                rgb[:, :, c].astype(np.float64), blur.sigma, mode="nearest"
            )
            smoothed[:, :, c] = np.clip(np.floor(blurred + 0.5), 0, 255).astype(np.uint8)
        rgb[target] = smoothed[target]
        gt[target] = 3

    pen = np.zeros((h, w), dtype=np.uint8)
    for stroke in spec.pens:
        region = _stroke_mask(w, h, stroke)
        rgb[region] = PEN_COLORS[stroke.color]
        pen[region] = 255

    return rgb, gt, pen


def gen_slide(spec: SynthSpec, out_dir: Path) -> tuple[Path, Path, Path]:
    """Render a spec and write slide.png, gt_mask.png and pen_mask.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb, gt, pen = generate(spec)
    slide_path = out_dir / "slide.png"
    gt_path = out_dir / "gt_mask.png"
    pen_path = out_dir / "pen_mask.png"
    save_png(slide_path, rgb)
    save_png(gt_path, gt)
    save_png(pen_path, pen)
    return slide_path, gt_path, pen_path
