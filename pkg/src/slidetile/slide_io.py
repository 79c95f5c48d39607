"""Reading pyramidal whole-slide images and flat test rasters.

Supported containers: tiled/pyramidal TIFF-family files (SVS-style), PNG and
binary PPM (P6) flat rasters. Regions are always served as 8-bit RGB arrays;
pixels outside the slide bounds are padded white, matching how downstream
thresholds treat H&E background.

Decoded levels are cached per slide behind a lock, so a ``SlideImage`` can be
shared across worker threads; reads are deterministic regardless of worker
count. This trades memory for simplicity and is intended for desk-scale
slides and test fixtures rather than multi-gigapixel production scans.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from .errors import CorruptPyramid, InvalidLevel, UnsupportedFormat

WHITE = 255

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_TIFF_MAGICS = (b"II*\x00", b"MM\x00*", b"II+\x00", b"MM\x00+")


@dataclass(frozen=True)
class LevelInfo:
    width: int
    height: int
    downsample: float


@dataclass(frozen=True)
class RegionSpec:
    """A read request: ``x, y`` are level-0 coordinates of the top-left corner,
    ``width, height`` are output pixels at the requested level."""

    level: int
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("region width and height must be positive")


class SlideImage:
    """Handle to a pyramidal RGB slide.

    ``levels`` is sorted by ascending downsample factor and level 0 always has
    factor 1.0. Flat rasters are exposed as a single-level pyramid.
    """

    def __init__(
        self,
        path: Path,
        levels: list[LevelInfo],
        loader,
        mpp: float | None = None,
    ) -> None:
        self.path = path
        self.levels = levels
        self.mpp = mpp
        self._loader = loader
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def width0(self) -> int:
        return self.levels[0].width

    @property
    def height0(self) -> int:
        return self.levels[0].height

    def level_array(self, level: int) -> np.ndarray:
        """Full decoded RGB array for a level (cached, read-only)."""
        if level < 0 or level >= len(self.levels):
            raise InvalidLevel(f"level {level} out of range (slide has {len(self.levels)})")
        with self._lock:
            arr = self._cache.get(level)
            if arr is None:
                arr = _as_rgb(self._loader(level))
                info = self.levels[level]
                if arr.shape[0] != info.height or arr.shape[1] != info.width:
                    raise CorruptPyramid(
                        f"level {level} decoded to {arr.shape[1]}x{arr.shape[0]}, "
                        f"expected {info.width}x{info.height}"
                    )
                arr.flags.writeable = False
                self._cache[level] = arr
        return arr


def _as_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=-1)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise UnsupportedFormat(f"cannot interpret image of shape {arr.shape} as RGB")
    return np.ascontiguousarray(arr[:, :, :3], dtype=np.uint8)


def _sniff(path: Path) -> str:
    try:
        with open(path, "rb") as f:
            head = f.read(8)
    except OSError as exc:
        raise UnsupportedFormat(f"cannot read {path}: {exc}") from exc
    if head.startswith(_PNG_MAGIC):
        return "png"
    if head[:4] in _TIFF_MAGICS:
        return "tiff"
    if head[:2] == b"P6":
        return "ppm"
    raise UnsupportedFormat(f"unrecognized container: {path}")


def _tiff_mpp(page) -> float | None:
    try:
        unit = page.tags.get("ResolutionUnit")
        xres = page.tags.get("XResolution")
        if unit is None or xres is None:
            return None
        num, den = xres.value
        if den == 0 or num == 0:
            return None
        pixels_per_unit = num / den
        if unit.value == 3:  # centimeter
            return 10000.0 / pixels_per_unit
        return None
    except Exception:
        return None


def build_level_table(dims: list[tuple[int, int]]) -> list[LevelInfo]:
    """Validate (width, height) pairs as a pyramid level table.

    Levels must be sorted by ascending downsample and each level, scaled by
    its factor, must reconstruct the level-0 dimensions within one coarse
    pixel; anything else is a corrupt pyramid.
    """
    w0, h0 = dims[0]
    infos: list[LevelInfo] = []
    prev_factor = 0.0
    for i, (w, h) in enumerate(dims):
        if w <= 0 or h <= 0:
            raise CorruptPyramid(f"level {i} has empty dimensions")
        factor = w0 / w
        if abs(h * factor - h0) > factor + 1e-6:
            raise CorruptPyramid(
                f"level {i} ({w}x{h}) inconsistent with level 0 ({w0}x{h0})"
            )
        if factor <= prev_factor and i > 0:
            raise CorruptPyramid("levels not sorted by ascending downsample")
        prev_factor = factor
        infos.append(LevelInfo(width=w, height=h, downsample=factor))
    return infos


def _open_tiff(path: Path) -> SlideImage:
    try:
        tf = tifffile.TiffFile(path)
        series = tf.series[0]
        raw_levels = list(series.levels)
        dims: list[tuple[int, int]] = []
        for lvl in raw_levels:
            shape = lvl.shape
            if len(shape) == 2:
                h, w = shape
            else:
                h, w = shape[0], shape[1]
            dims.append((int(w), int(h)))
        mpp = _tiff_mpp(series.pages[0])
    except UnsupportedFormat:
        raise
    except Exception as exc:
        raise CorruptPyramid(f"unreadable TIFF pyramid {path}: {exc}") from exc

    infos = build_level_table(dims)

    def loader(level: int, _raw=raw_levels, _path=path) -> np.ndarray:
        try:
            return _raw[level].asarray()
        except Exception as exc:
            raise CorruptPyramid(f"cannot decode level {level} of {_path}: {exc}") from exc

    return SlideImage(path=path, levels=infos, loader=loader, mpp=mpp)


def _open_flat(path: Path) -> SlideImage:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnsupportedFormat:
        raise
    except Exception as exc:
        raise CorruptPyramid(f"unreadable raster {path}: {exc}") from exc
    h, w = arr.shape[:2]
    arr.flags.writeable = False
    levels = [LevelInfo(width=w, height=h, downsample=1.0)]
    return SlideImage(path=path, levels=levels, loader=lambda level: arr, mpp=None)


def open_slide(path: str | Path) -> SlideImage:
    """Open a slide file, exposing flat rasters as a single-level pyramid."""
    path = Path(path)
    if not path.is_file():
        raise UnsupportedFormat(f"no such file: {path}")
    kind = _sniff(path)
    if kind == "tiff":
        return _open_tiff(path)
    return _open_flat(path)


def read_region(slide: SlideImage, spec: RegionSpec) -> np.ndarray:
    """Read an exact ``height x width`` RGB region; out-of-bounds pixels are white."""
    if spec.level < 0 or spec.level >= len(slide.levels):
        raise InvalidLevel(f"level {spec.level} out of range")
    info = slide.levels[spec.level]
    factor = info.downsample
    lx = int(math.floor(spec.x / factor))
    ly = int(math.floor(spec.y / factor))

    out = np.full((spec.height, spec.width, 3), WHITE, dtype=np.uint8)
    x0 = max(lx, 0)
    y0 = max(ly, 0)
    x1 = min(lx + spec.width, info.width)
    y1 = min(ly + spec.height, info.height)
    if x1 > x0 and y1 > y0:
        src = slide.level_array(spec.level)
        out[y0 - ly : y1 - ly, x0 - lx : x1 - lx] = src[y0:y1, x0:x1]
    return out


def _box_resample_axis0(arr: np.ndarray, target: int) -> np.ndarray:
    """Exact area-average resampling along axis 0 (float64 in, float64 out)."""
    n = arr.shape[0]
    if n == target:
        return arr
    flat = arr.reshape(n, -1)
    prefix = np.zeros((n + 1, flat.shape[1]), dtype=np.float64)
    np.cumsum(flat, axis=0, out=prefix[1:])

    # F(x) = integral of the piecewise-constant signal over [0, x]
    k = np.arange(target + 1, dtype=np.float64)
    edges = k * float(n) / float(target)
    idx = np.minimum(edges.astype(np.int64), n - 1)
    frac = edges - idx
    integ = prefix[idx] + frac[:, None] * flat[idx]

    scale = float(n) / float(target)
    out = (integ[1:] - integ[:-1]) / scale
    return out.reshape((target,) + arr.shape[1:])


def resample_area(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Box/area-average resample of an RGB array to exactly target_w x target_h."""
    work = arr.astype(np.float64)
    work = _box_resample_axis0(work, target_h)
    work = np.swapaxes(_box_resample_axis0(np.swapaxes(work, 0, 1), target_w), 0, 1)
    return np.clip(np.floor(work + 0.5), 0, 255).astype(np.uint8)


def thumbnail(slide: SlideImage, target_w: int, target_h: int) -> np.ndarray:
    """Area-averaged thumbnail of exactly ``target_w x target_h`` pixels.

    Aspect ratio is not preserved; callers record the per-axis scale factors.
    The source is the nearest pyramid level whose downsample does not exceed
    the requested per-axis scale.
    """
    if target_w <= 0 or target_h <= 0:
        raise ValueError("thumbnail target dimensions must be positive")
    requested = min(slide.width0 / target_w, slide.height0 / target_h)
    source = 0
    for i, info in enumerate(slide.levels):
        if info.downsample <= requested * (1.0 + 1e-9):
            source = i
        else:
            break
    return resample_area(slide.level_array(source), target_w, target_h)
