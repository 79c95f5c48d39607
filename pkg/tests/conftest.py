"""Shared fixtures: synthetic slides with exactly-known geometry.

The "aligned" fixtures place a rectangular tissue block on thumbnail-pixel
boundaries (canvas 1200, thumbnail 300, scale exactly 4) with mask dilation
off, so the detected ROI and the tile grid are known in closed form:

* clean_slide   — tissue [328,868)x[328,868), 2x2 grid of 270px tiles, no
                  artifacts; every set ties at cost 0 and picks C.
* fold_slide    — tissue [328,868)x[60,1140), 2x4 grid; a 60px fold band
                  straddles the row boundary at y=330, so standard tiling
                  drops four tiles while neighbor shifts recover tissue.
* realistic_slide — blobby tissue with narrow folds and a blur patch; grid
                  geometry is not pinned, gains land in low single digits.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
import tifffile

from slidetile.config import PipelineConfig, config_from_dict
from slidetile.synthgen import (BlobSpec, BlurSpec, FoldSpec, PenStrokeSpec,
                                SynthSpec, gen_slide)

TESTS_DIR = Path(__file__).parent
FAKE_SIDECAR = TESTS_DIR / "fake_sidecar.py"


def fake_sidecar_cmd(mode: str = "ok") -> list[str]:
    return [sys.executable, str(FAKE_SIDECAR), "--mode", mode]


def aligned_config(**overrides) -> PipelineConfig:
    raw = {
        "thumb_w": 300, "thumb_h": 300,
        "tile_w": 270, "tile_h": 270,
        "dilate_iters": 0,
        "workers": 1,
    }
    raw.update(overrides)
    return config_from_dict(raw)


CLEAN_SPEC = SynthSpec(
    width=1200, height=1200, seed=101,
    blobs=[BlobSpec(cx=597.5, cy=597.5, rx=270.0, ry=270.0, rect=True)],
)

FOLD_SPEC = SynthSpec(
    width=1200, height=1200, seed=202,
    blobs=[BlobSpec(cx=597.5, cy=599.5, rx=270.0, ry=540.0, rect=True)],
    # band rows 300..360 straddle the grid boundary at y = 60 + 270
    folds=[FoldSpec(width=60, angle=0.0, offset=-270.0)],
)

REALISTIC_SPEC = SynthSpec(
    width=1500, height=1500, seed=303,
    blobs=[
        BlobSpec(cx=750, cy=750, rx=640, ry=640, rect=True),
        BlobSpec(cx=300, cy=300, rx=260, ry=240),
        BlobSpec(cx=1200, cy=1150, rx=280, ry=300),
    ],
    folds=[FoldSpec(width=40, angle=5.0, offset=-130.0)],
    blurs=[BlurSpec(radius=90, sigma=6.0, cx=950, cy=600)],
)

PEN_SPEC = SynthSpec(
    width=1200, height=1200, seed=404,
    blobs=[BlobSpec(cx=597.5, cy=597.5, rx=400.0, ry=400.0)],
    folds=[FoldSpec(width=30, angle=40.0, offset=50.0)],
    blurs=[BlurSpec(radius=80, sigma=6.0, cx=450, cy=700)],
    pens=[
        PenStrokeSpec(color="blue", width=14,
                      points=[(250.0, 300.0), (800.0, 350.0), (900.0, 700.0)]),
        PenStrokeSpec(color="black", width=10,
                      points=[(350.0, 900.0), (700.0, 860.0)]),
    ],
)


def _materialize(tmp_path_factory, name: str, spec: SynthSpec):
    out = tmp_path_factory.mktemp(name)
    slide_path, gt_path, pen_path = gen_slide(spec, out)
    return slide_path, gt_path, pen_path


@pytest.fixture(scope="session")
def clean_slide(tmp_path_factory):
    return _materialize(tmp_path_factory, "clean", CLEAN_SPEC)


@pytest.fixture(scope="session")
def fold_slide(tmp_path_factory):
    return _materialize(tmp_path_factory, "fold", FOLD_SPEC)


@pytest.fixture(scope="session")
def realistic_slide(tmp_path_factory):
    return _materialize(tmp_path_factory, "realistic", REALISTIC_SPEC)


@pytest.fixture(scope="session")
def pen_slide(tmp_path_factory):
    return _materialize(tmp_path_factory, "pen", PEN_SPEC)


def write_pyramid_tiff(path: Path, base: np.ndarray, n_levels: int = 3) -> list[tuple[int, int]]:
    """Write a subifd-style pyramidal TIFF with 2x box-downsampled levels."""
    levels = [base]
    for _ in range(n_levels - 1):
        prev = levels[-1]
        h, w = prev.shape[:2]
        ds = prev[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2, 3)
        levels.append(ds.mean(axis=(1, 3)).astype(np.uint8))
    with tifffile.TiffWriter(path) as tif:
        tif.write(levels[0], tile=(256, 256), subifds=n_levels - 1,
                  photometric="rgb", metadata=None)
        for lvl in levels[1:]:
            tif.write(lvl, tile=(256, 256), subfiletype=1,
                      photometric="rgb", metadata=None)
    return [(lvl.shape[1], lvl.shape[0]) for lvl in levels]


def make_tissue_tile(shape=(128, 128), seed=0, base=(210, 150, 200), jitter=12) -> np.ndarray:
    """Jittered pink tile that the heuristic labels as tissue."""
    rng = np.random.default_rng(seed)
    noise = rng.integers(-jitter, jitter + 1, size=shape + (3,))
    return np.clip(np.array(base, dtype=np.int32) + noise, 0, 255).astype(np.uint8)
