from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from conftest import fake_sidecar_cmd, make_tissue_tile
from slidetile.errors import MaskMissing, MaskShapeMismatch, SidecarFailure
from slidetile.metrics import dice
from slidetile.segmenter import (HeuristicParams, SegBackendConfig, Segmenter,
                                 close_small_background, heuristic_segment,
                                 segment_tile)
from slidetile.synthgen import BlobSpec, FoldSpec, SynthSpec, generate


class TestHeuristic:
    def test_near_white_tile_is_background(self):
        tile = np.full((32, 32, 3), 245, dtype=np.uint8)
        assert (heuristic_segment(tile) == 0).all()

    def test_fold_band_on_tissue(self):
        spec = SynthSpec(width=300, height=300, seed=5,
                         blobs=[BlobSpec(cx=150, cy=150, rx=145, ry=145, rect=True)],
                         folds=[FoldSpec(width=40, angle=20.0, offset=0.0)])
        rgb, gt, _ = generate(spec)
        labels = heuristic_segment(rgb)
        assert dice(labels, gt, 2) > 0.9
        assert dice(labels, gt, 1) > 0.9

    def test_blurred_tissue_mostly_blur(self):
        from scipy.ndimage import gaussian_filter

        tile = make_tissue_tile((128, 128), seed=9)
        blurred = np.empty_like(tile)
        for c in range(3):
            blurred[:, :, c] = np.clip(np.floor(
                gaussian_filter(tile[:, :, c].astype(np.float64), 6.0,
                                mode="nearest") + 0.5), 0, 255).astype(np.uint8)
        labels = heuristic_segment(blurred)
        assert (labels == 3).mean() >= 0.8

    def test_sharp_tissue_is_tissue(self):
        tile = make_tissue_tile((96, 96), seed=4)
        labels = heuristic_segment(tile)
        assert (labels == 1).mean() > 0.99

    def test_deterministic(self):
        tile = make_tissue_tile((64, 64), seed=14)
        assert np.array_equal(heuristic_segment(tile), heuristic_segment(tile))

    def test_translation_invariance_away_from_borders(self):
        rng = np.random.default_rng(3)
        tile = rng.integers(0, 256, size=(80, 80, 3), dtype=np.uint8)
        shifted = np.roll(tile, (7, 11), axis=(0, 1))
        a = heuristic_segment(tile)
        b = heuristic_segment(shifted)
        # compare interiors away from the 4px window halo plus the shift
        assert np.array_equal(np.roll(a, (7, 11), axis=(0, 1))[18:-18, 18:-18],
                              b[18:-18, 18:-18])

    def test_window_must_be_odd(self):
        with pytest.raises(ValueError):
            heuristic_segment(make_tissue_tile(), HeuristicParams(blur_window=8))


class TestCloseSmallBackground:
    def test_small_hole_closed_to_neighbor_label(self):
        mask = np.ones((30, 30), dtype=np.uint8)
        mask[10:12, 10:15] = 0  # 10 px
        out = close_small_background(mask)
        assert (out == 1).all()

    def test_boundary_25px_preserved(self):
        mask = np.ones((30, 30), dtype=np.uint8)
        mask[10:15, 10:15] = 0  # exactly 25
        out = close_small_background(mask)
        assert (out[10:15, 10:15] == 0).all()

    def test_24px_closed(self):
        mask = np.ones((30, 30), dtype=np.uint8)
        mask[10:14, 10:16] = 0  # 24
        out = close_small_background(mask)
        assert (out == 1).all()

    def test_modal_label_tie_prefers_smaller(self):
        mask = np.full((10, 10), 3, dtype=np.uint8)
        mask[4:6, 4:6] = 0
        mask[3, 3:7] = 1
        mask[6, 3:7] = 2  # 4 ones vs 4 twos adjacent, rest 3
        mask[4:6, 3] = 1
        mask[4:6, 6] = 2  # now 6 ones and 6 twos around the hole
        out = close_small_background(mask)
        assert (out[4:6, 4:6] == 1).all()

    def test_no_background_identity(self):
        mask = np.full((20, 20), 1, dtype=np.uint8)
        out = close_small_background(mask)
        assert np.array_equal(out, mask)

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        mask = rng.integers(0, 4, size=(64, 64), dtype=np.uint8)
        once = close_small_background(mask)
        twice = close_small_background(once)
        assert np.array_equal(once, twice)

    def test_never_touches_foreground(self):
        rng = np.random.default_rng(12)
        mask = rng.integers(0, 4, size=(48, 48), dtype=np.uint8)
        out = close_small_background(mask)
        fg = mask != 0
        assert np.array_equal(out[fg], mask[fg])

    def test_all_background_small_mask_untouched(self):
        mask = np.zeros((4, 4), dtype=np.uint8)  # 16 px, no labeled neighbors
        assert np.array_equal(close_small_background(mask), mask)


class TestMaskdirBackend:
    def test_roundtrip(self, tmp_path):
        tile = make_tissue_tile((40, 40), seed=2)
        mask = heuristic_segment(tile)
        Image.fromarray(mask).save(tmp_path / "tile_000001_C.png")
        cfg = SegBackendConfig(kind="maskdir", maskdir=tmp_path)
        out = segment_tile(tile, cfg, "tile_000001_C")
        assert np.array_equal(out, close_small_background(mask))

    def test_missing_names_tile_id(self, tmp_path):
        cfg = SegBackendConfig(kind="maskdir", maskdir=tmp_path)
        with pytest.raises(MaskMissing, match="tile_000007_L"):
            segment_tile(make_tissue_tile(), cfg, "tile_000007_L")

    def test_out_of_range_label_rejected(self, tmp_path):
        bad = np.full((32, 32), 4, dtype=np.uint8)
        Image.fromarray(bad).save(tmp_path / "t.png")
        cfg = SegBackendConfig(kind="maskdir", maskdir=tmp_path)
        with pytest.raises(MaskShapeMismatch):
            segment_tile(make_tissue_tile((32, 32)), cfg, "t")

    def test_shape_mismatch_rejected(self, tmp_path):
        Image.fromarray(np.zeros((16, 16), dtype=np.uint8)).save(tmp_path / "t.png")
        cfg = SegBackendConfig(kind="maskdir", maskdir=tmp_path)
        with pytest.raises(MaskShapeMismatch):
            segment_tile(make_tissue_tile((32, 32)), cfg, "t")


class TestSidecarBackend:
    def test_matches_internal_heuristic(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("ok"))
        tile = make_tissue_tile((48, 48), seed=21)
        with Segmenter(cfg) as seg:
            via_sidecar = seg.segment(tile, "t", wire_id=9)
        internal = segment_tile(tile, SegBackendConfig(kind="heuristic"), "t")
        assert np.array_equal(via_sidecar, internal)

    def test_multiple_requests_one_process(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("ok"))
        with Segmenter(cfg) as seg:
            for i in range(5):
                tile = make_tissue_tile((32, 32), seed=i)
                out = seg.segment(tile, f"t{i}", wire_id=i)
                assert out.shape == (32, 32)

    def test_error_frame_raises(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("error"))
        with Segmenter(cfg) as seg:
            with pytest.raises(SidecarFailure, match="backend refused"):
                seg.segment(make_tissue_tile((16, 16)), "t", wire_id=1)

    def test_tile_id_mismatch_is_protocol_violation(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("mismatch"))
        with Segmenter(cfg) as seg:
            with pytest.raises(SidecarFailure, match="mismatch"):
                seg.segment(make_tissue_tile((16, 16)), "t", wire_id=5)

    def test_timeout(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("slow"),
                               sidecar_timeout=0.4)
        with Segmenter(cfg) as seg:
            with pytest.raises(SidecarFailure, match="timed out"):
                seg.segment(make_tissue_tile((16, 16)), "t", wire_id=1)

    def test_crash_then_recovers_on_next_request(self):
        cfg = SegBackendConfig(kind="sidecar", sidecar_cmd=fake_sidecar_cmd("crash"))
        with Segmenter(cfg) as seg:
            with pytest.raises(SidecarFailure):
                seg.segment(make_tissue_tile((16, 16)), "t", wire_id=1)
            # the pool respawns a fresh process; it crashes again but cleanly
            with pytest.raises(SidecarFailure):
                seg.segment(make_tissue_tile((16, 16)), "t", wire_id=2)


class TestSegmentTileContract:
    def test_all_white_is_all_zero(self):
        tile = np.full((64, 64, 3), 255, dtype=np.uint8)
        out = segment_tile(tile, SegBackendConfig(), "t")
        assert (out == 0).all()

    def test_same_tile_same_backend_identical(self):
        tile = make_tissue_tile((50, 50), seed=33)
        cfg = SegBackendConfig()
        assert np.array_equal(segment_tile(tile, cfg, "t"), segment_tile(tile, cfg, "t"))

    def test_labels_in_range_and_dims_match(self):
        rng = np.random.default_rng(44)
        tile = rng.integers(0, 256, size=(37, 53, 3), dtype=np.uint8)
        out = segment_tile(tile, SegBackendConfig(), "t")
        assert out.shape == (37, 53)
        assert set(np.unique(out)) <= {0, 1, 2, 3}
